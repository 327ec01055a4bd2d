"""Wire format: serialize/parse identity, schema rejection, error codes."""

import pytest

from netsim import protocol as proto


def _roundtrip(msg):
    line = proto.encode(msg)
    assert "\n" not in line
    return proto.parse_line(line)


def test_hello_roundtrip():
    assert _roundtrip(proto.Hello(version=1)) == proto.Hello(version=1)


def test_reset_roundtrip():
    assert _roundtrip(proto.Reset(seed=12)) == proto.Reset(seed=12, weights=None)
    msg = proto.Reset(seed=3, weights={"w_coverage": 1.0, "w_dl": 0.25})
    assert _roundtrip(msg) == msg


def test_state_roundtrip():
    msg = proto.StateMsg(vector=[0.0, 0.5, 1.0], n_beams=2)
    assert _roundtrip(msg) == msg


def test_step_roundtrip():
    action = [
        {"h_index": 3, "v_index": 0, "azimuth_delta": -1, "tilt_delta": 2, "active": True},
        {"h_index": 0, "v_index": 2, "azimuth_delta": 0, "tilt_delta": 0, "active": False},
    ]
    assert _roundtrip(proto.Step(action=action)) == proto.Step(action=action)


def test_transition_roundtrip():
    msg = proto.Transition(
        state=proto.StateMsg(vector=[0.25, 0.75], n_beams=1),
        reward=-3.5,
        done=True,
        kpis={"coverage_pct": 88.25, "users": 20.0},
    )
    assert _roundtrip(msg) == msg


def test_error_and_close_roundtrip():
    msg = proto.ErrorMsg(code="version", msg="unsupported")
    assert _roundtrip(msg) == msg
    assert _roundtrip(proto.Close()) == proto.Close()


def test_wire_literals_parse():
    # spot-check the exact field spellings of the contract
    assert proto.parse_line('{"type":"hello","version":1}') == proto.Hello(1)
    msg = proto.parse_line('{"type":"reset","seed":5,"weights":{"w_rsrp":1.0}}')
    assert msg == proto.Reset(seed=5, weights={"w_rsrp": 1.0})
    msg = proto.parse_line('{"type":"state","vector":[0.5],"n_beams":1}')
    assert msg == proto.StateMsg(vector=[0.5], n_beams=1)
    msg = proto.parse_line(
        '{"type":"transition","state":{"vector":[1.0],"n_beams":1},'
        '"reward":0.0,"done":false,"kpis":{}}'
    )
    assert msg.reward == 0.0 and msg.done is False


def _code_of(line):
    with pytest.raises(proto.ProtocolError) as exc:
        proto.parse_line(line)
    return exc.value.code


def test_parse_rejects_non_json():
    assert _code_of("not json at all") == "parse"
    assert _code_of("[1,2,3]") == "parse"
    assert _code_of('"hello"') == "parse"
    assert _code_of('{"version":1}') == "parse"


def test_unknown_type_has_its_own_code():
    assert _code_of('{"type":"shutdown"}') == "unknown_type"


def test_schema_violations():
    assert _code_of('{"type":"hello"}') == "schema"
    assert _code_of('{"type":"hello","version":"1"}') == "schema"
    assert _code_of('{"type":"hello","version":1,"extra":2}') == "schema"
    assert _code_of('{"type":"reset","seed":1.5}') == "schema"
    assert _code_of('{"type":"reset","seed":true}') == "schema"
    assert _code_of('{"type":"reset","seed":1,"weights":{"w_bogus":1}}') == "schema"
    assert _code_of('{"type":"state","vector":[0.1,"x"],"n_beams":1}') == "schema"
    assert _code_of('{"type":"step","action":{}}') == "schema"
    assert _code_of('{"type":"step","action":[{"h_index":0}]}') == "schema"
    assert (
        _code_of(
            '{"type":"step","action":[{"h_index":0,"v_index":0,'
            '"azimuth_delta":0,"tilt_delta":0,"active":1}]}'
        )
        == "schema"
    )
    assert _code_of('{"type":"transition","state":{},"reward":0,"done":0,"kpis":{}}') == "schema"
    assert _code_of('{"type":"error","code":5,"msg":"x"}') == "schema"
    assert _code_of('{"type":"close","extra":1}') == "schema"


def test_encode_rejects_foreign_objects():
    with pytest.raises(proto.ProtocolError):
        proto.encode({"type": "hello"})
