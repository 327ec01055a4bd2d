"""Line protocol for driving the antenna environment remotely.

Version 1. Every message is one UTF-8 line holding a single JSON object
with a "type" field; serialize/parse round-trips are the identity. The
server answers every request with exactly one response line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1

ACTION_KEYS = ("h_index", "v_index", "azimuth_delta", "tilt_delta", "active")
WEIGHT_KEYS = ("w_coverage", "w_rsrp", "w_sinr", "w_dl", "w_ul")
KPI_KEYS = ("coverage_pct", "avg_rsrp_dbm", "avg_sinr_db", "dl_mbps", "ul_mbps", "users")


class ProtocolError(Exception):
    """Malformed or out-of-contract message; .code travels on the wire."""

    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code
        self.msg = msg


@dataclass
class Hello:
    version: int = PROTOCOL_VERSION


@dataclass
class Reset:
    seed: int = 0
    weights: dict | None = None  # reward weight overrides, scenario default when absent


@dataclass
class StateMsg:
    vector: list
    n_beams: int


@dataclass
class Step:
    action: list = field(default_factory=list)  # one record per beam, ACTION_KEYS each


@dataclass
class Transition:
    state: StateMsg
    reward: float
    done: bool
    kpis: dict


@dataclass
class ErrorMsg:
    code: str
    msg: str


@dataclass
class Close:
    pass


def _require(obj: dict, mtype: str, keys: tuple, optional: tuple = ()):
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ProtocolError("schema", f"{mtype}: missing fields {missing}")
    extra = [k for k in obj if k != "type" and k not in keys and k not in optional]
    if extra:
        raise ProtocolError("schema", f"{mtype}: unexpected fields {extra}")


def _number(obj: dict, mtype: str, key: str):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError("schema", f"{mtype}: {key} must be a number")
    return v


def _int(obj: dict, mtype: str, key: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProtocolError("schema", f"{mtype}: {key} must be an integer")
    return v


def _check_action_entry(entry, idx: int) -> dict:
    if not isinstance(entry, dict):
        raise ProtocolError("schema", f"step: action[{idx}] must be an object")
    _require(entry, f"step action[{idx}]", ACTION_KEYS)
    out = {}
    for k in ("h_index", "v_index", "azimuth_delta", "tilt_delta"):
        out[k] = _int(entry, f"step action[{idx}]", k)
    if not isinstance(entry["active"], bool):
        raise ProtocolError("schema", f"step action[{idx}]: active must be a boolean")
    out["active"] = entry["active"]
    return out


def encode(msg) -> str:
    """One JSON line (no trailing newline), stable key order."""
    if isinstance(msg, Hello):
        obj = {"type": "hello", "version": msg.version}
    elif isinstance(msg, Reset):
        obj = {"type": "reset", "seed": msg.seed}
        if msg.weights is not None:
            obj["weights"] = msg.weights
    elif isinstance(msg, StateMsg):
        obj = {"type": "state", "vector": msg.vector, "n_beams": msg.n_beams}
    elif isinstance(msg, Step):
        obj = {"type": "step", "action": msg.action}
    elif isinstance(msg, Transition):
        obj = {
            "type": "transition",
            "state": {"vector": msg.state.vector, "n_beams": msg.state.n_beams},
            "reward": msg.reward,
            "done": msg.done,
            "kpis": msg.kpis,
        }
    elif isinstance(msg, ErrorMsg):
        obj = {"type": "error", "code": msg.code, "msg": msg.msg}
    elif isinstance(msg, Close):
        obj = {"type": "close"}
    else:
        raise ProtocolError("internal", f"cannot encode {type(msg).__name__}")
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def _parse_state_obj(obj: dict, mtype: str) -> StateMsg:
    _require(obj, mtype, ("vector", "n_beams"))
    vec = obj["vector"]
    if not isinstance(vec, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in vec
    ):
        raise ProtocolError("schema", f"{mtype}: vector must be a list of numbers")
    return StateMsg(vector=[float(v) for v in vec], n_beams=_int(obj, mtype, "n_beams"))


def parse_line(line: str):
    """Typed message from one wire line; ProtocolError on anything off-spec."""
    try:
        obj = json.loads(line)
    except ValueError as e:
        raise ProtocolError("parse", f"not valid JSON: {e}") from None
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("parse", "message must be an object with a type field")
    mtype = obj["type"]
    if mtype == "hello":
        _require(obj, mtype, ("version",))
        return Hello(version=_int(obj, mtype, "version"))
    if mtype == "reset":
        _require(obj, mtype, ("seed",), optional=("weights",))
        weights = obj.get("weights")
        if weights is not None:
            if not isinstance(weights, dict):
                raise ProtocolError("schema", "reset: weights must be an object")
            bad = [k for k in weights if k not in WEIGHT_KEYS]
            if bad:
                raise ProtocolError("schema", f"reset: unknown weight keys {bad}")
            for k in weights:
                _number(weights, "reset weights", k)
        return Reset(seed=_int(obj, mtype, "seed"), weights=weights)
    if mtype == "state":
        body = {k: v for k, v in obj.items() if k != "type"}
        return _parse_state_obj(body, mtype)
    if mtype == "step":
        _require(obj, mtype, ("action",))
        if not isinstance(obj["action"], list):
            raise ProtocolError("schema", "step: action must be an array")
        return Step(action=[_check_action_entry(a, i) for i, a in enumerate(obj["action"])])
    if mtype == "transition":
        _require(obj, mtype, ("state", "reward", "done", "kpis"))
        if not isinstance(obj["state"], dict):
            raise ProtocolError("schema", "transition: state must be an object")
        if not isinstance(obj["done"], bool):
            raise ProtocolError("schema", "transition: done must be a boolean")
        if not isinstance(obj["kpis"], dict):
            raise ProtocolError("schema", "transition: kpis must be an object")
        return Transition(
            state=_parse_state_obj(obj["state"], "transition state"),
            reward=float(_number(obj, mtype, "reward")),
            done=obj["done"],
            kpis=obj["kpis"],
        )
    if mtype == "error":
        _require(obj, mtype, ("code", "msg"))
        if not isinstance(obj["code"], str) or not isinstance(obj["msg"], str):
            raise ProtocolError("schema", "error: code and msg must be strings")
        return ErrorMsg(code=obj["code"], msg=obj["msg"])
    if mtype == "close":
        _require(obj, mtype, ())
        return Close()
    raise ProtocolError("unknown_type", f"unknown message type {mtype!r}")
