"""Environment service over a real socket: handshake, episode lifecycle,
in-band errors, and connection independence."""

import socket

import pytest

from netsim import protocol as proto
from netsim.rlenv import ActionSpec, AntennaEnv, BeamAction
from netsim.scenario import BeamConfig, GeoGrid, RewardSection, Scenario, Site, UserModel
from netsim.server import EnvServer


def _scenario():
    grid = GeoGrid(width_m=500.0, height_m=500.0, resolution_m=25.0)
    site = Site(
        site_id="s0", x_m=100.0, y_m=250.0, mech_azimuth_deg=90.0,
        beams=[BeamConfig(beam_id=0, azimuth_offset_deg=-20.0)],
    )
    users = UserModel(
        n_users=6, mode="cluster", traffic="constant",
        cluster_x_m=350.0, cluster_y_m=250.0, cluster_radius_m=60.0,
    )
    return Scenario(
        grid=grid, sites=[site], users=users,
        reward=RewardSection(w_coverage=1.0, eval_window_ticks=4, episode_steps=3),
        seed=21,
    )


NOOP = [{"h_index": 3, "v_index": 0, "azimuth_delta": 0, "tilt_delta": 0, "active": True}]


class Peer:
    """Scripted line-protocol client used to drive the service in tests."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)
        self.f = self.sock.makefile("rwb")

    def send(self, msg):
        self.send_raw(proto.encode(msg))

    def send_raw(self, text: str):
        self.f.write((text + "\n").encode("utf-8"))
        self.f.flush()

    def recv(self):
        line = self.f.readline()
        assert line, "connection closed unexpectedly"
        return proto.parse_line(line.decode("utf-8").rstrip("\n"))

    def close(self):
        self.f.close()
        self.sock.close()


@pytest.fixture(scope="module")
def server():
    with EnvServer(_scenario()) as srv:
        yield srv


@pytest.fixture()
def peer(server):
    p = Peer(server.port)
    yield p
    p.close()


def test_hello_handshake(peer):
    peer.send(proto.Hello(1))
    assert peer.recv() == proto.Hello(1)


def test_unsupported_version_keeps_connection(peer):
    peer.send(proto.Hello(2))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "version"
    peer.send(proto.Hello(1))
    assert peer.recv() == proto.Hello(1)


def test_reset_requires_hello(peer):
    peer.send(proto.Reset(seed=1))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "order"


def test_step_requires_reset(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.Step(action=NOOP))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "order"


def test_reset_returns_state(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.Reset(seed=5))
    state = peer.recv()
    assert isinstance(state, proto.StateMsg)
    assert state.n_beams == 1
    assert len(state.vector) == 5 * 1 + 64 + 5
    assert all(0.0 <= v <= 1.0 for v in state.vector)
    # matches a local environment on the same scenario and seed exactly
    local = AntennaEnv(_scenario())
    expected = [float(x) for x in local.reset(seed=5)]
    assert state.vector == expected


def test_scripted_noop_session(peer):
    peer.send(proto.Hello(1))
    assert isinstance(peer.recv(), proto.Hello)
    peer.send(proto.Reset(seed=9))
    assert isinstance(peer.recv(), proto.StateMsg)
    for i in range(3):
        peer.send(proto.Step(action=NOOP))
        tr = peer.recv()
        assert isinstance(tr, proto.Transition)
        assert tr.reward == 0.0
        assert tr.done is (i == 2)  # episode_steps = 3
        assert set(proto.KPI_KEYS) <= set(tr.kpis)
    peer.send(proto.Step(action=NOOP))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "done"
    peer.send(proto.Close())
    assert peer.recv() == proto.Close()


def test_one_episode_per_connection(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.Reset(seed=1))
    peer.recv()
    peer.send(proto.Reset(seed=2))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "order"


def test_malformed_line_keeps_connection(peer):
    peer.send_raw("this is not json")
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "parse"
    peer.send_raw('{"type":"warp"}')
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "unknown_type"
    peer.send(proto.Hello(1))
    assert peer.recv() == proto.Hello(1)


def test_server_message_from_client_rejected(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.StateMsg(vector=[0.0], n_beams=1))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "unexpected"


def test_out_of_range_action_rejected(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.Reset(seed=1))
    peer.recv()
    bad = [dict(NOOP[0], h_index=99)]
    peer.send(proto.Step(action=bad))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "action"
    # wrong beam count is also an action error; episode survives both
    peer.send(proto.Step(action=NOOP * 2))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "action"
    peer.send(proto.Step(action=NOOP))
    assert isinstance(peer.recv(), proto.Transition)


def test_bad_weights_rejected(peer):
    peer.send(proto.Hello(1))
    peer.recv()
    peer.send(proto.Reset(seed=1, weights={"w_coverage": -1.0}))
    err = peer.recv()
    assert isinstance(err, proto.ErrorMsg) and err.code == "config"


def test_reset_weights_change_reward(server):
    # same seed, same action, different weights -> different reward
    rewards = {}
    action = [dict(NOOP[0], tilt_delta=2)]
    for name, weights in (("cov", {"w_coverage": 1.0}), ("rsrp", {"w_rsrp": 1.0})):
        p = Peer(server.port)
        p.send(proto.Hello(1))
        p.recv()
        p.send(proto.Reset(seed=3, weights=weights))
        p.recv()
        p.send(proto.Step(action=action))
        rewards[name] = p.recv().reward
        p.close()
    assert rewards["cov"] != rewards["rsrp"]


def test_concurrent_connections_are_independent(server):
    a, b = Peer(server.port), Peer(server.port)
    try:
        for p in (a, b):
            p.send(proto.Hello(1))
            p.recv()
        a.send(proto.Reset(seed=100))
        b.send(proto.Reset(seed=200))
        sa, sb = a.recv(), b.recv()
        assert sa.vector != sb.vector  # different seeds, different worlds
        # interleave steps; each connection tracks its own episode
        a.send(proto.Step(action=NOOP))
        b.send(proto.Step(action=[dict(NOOP[0], azimuth_delta=2)]))
        ta, tb = a.recv(), b.recv()
        assert ta.reward == 0.0  # no-op on connection A regardless of B's action
        assert ta.state.vector != tb.state.vector
        # B's episode state equals a local env fed the same commands
        local = AntennaEnv(_scenario())
        local.reset(seed=200)
        tr = local.step(ActionSpec([BeamAction(3, 0, azimuth_delta=2)]))
        assert tb.state.vector == [float(x) for x in tr.next_state]
        assert tb.reward == tr.reward
    finally:
        a.close()
        b.close()
