"""Threaded TCP service exposing the antenna environment over the line protocol.

Each connection owns one environment instance and at most one episode:
hello handshake, one reset, then step/transition pairs until the step
budget is spent or the peer closes. Protocol problems are answered
in-band as error messages; the service itself never crashes on them.
"""

from __future__ import annotations

import socketserver
import threading

from . import protocol as proto
from .orchestrator import OrchestratorError
from .rlenv import (
    ActionSpec,
    AntennaEnv,
    BeamAction,
    EpisodeDone,
    InvalidAction,
    RewardWeights,
    RlEnvError,
)
from .scenario import Scenario, ScenarioError


class _Handler(socketserver.StreamRequestHandler):
    def _send(self, msg) -> None:
        # one write per message: a response line is never split
        self.wfile.write((proto.encode(msg) + "\n").encode("utf-8"))

    def handle(self) -> None:
        try:
            self._session()
        except (ConnectionError, BrokenPipeError):
            pass  # peer vanished; episode dies with the connection

    def _session(self) -> None:
        env = None
        greeted = False
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                msg = proto.parse_line(line)
            except proto.ProtocolError as e:
                self._send(proto.ErrorMsg(code=e.code, msg=e.msg))
                continue
            try:
                if isinstance(msg, proto.Hello):
                    if msg.version != proto.PROTOCOL_VERSION:
                        self._send(
                            proto.ErrorMsg(
                                "version",
                                f"unsupported version {msg.version}; server speaks {proto.PROTOCOL_VERSION}",
                            )
                        )
                    else:
                        greeted = True
                        self._send(proto.Hello(proto.PROTOCOL_VERSION))
                elif isinstance(msg, proto.Reset):
                    if not greeted:
                        self._send(proto.ErrorMsg("order", "hello must precede reset"))
                    elif env is not None:
                        self._send(proto.ErrorMsg("order", "one episode per connection"))
                    else:
                        weights = None
                        if msg.weights is not None:
                            weights = RewardWeights(**{k: float(v) for k, v in msg.weights.items()})
                        candidate = AntennaEnv(self.server.scenario, weights=weights)
                        state = candidate.reset(seed=msg.seed)
                        env = candidate
                        self._send(
                            proto.StateMsg(vector=[float(x) for x in state], n_beams=env.n_beams)
                        )
                elif isinstance(msg, proto.Step):
                    if env is None:
                        self._send(proto.ErrorMsg("order", "reset must precede step"))
                    else:
                        action = ActionSpec([BeamAction(**a) for a in msg.action])
                        tr = env.step(action)
                        self._send(
                            proto.Transition(
                                state=proto.StateMsg(
                                    vector=[float(x) for x in tr.next_state],
                                    n_beams=env.n_beams,
                                ),
                                reward=float(tr.reward),
                                done=bool(tr.done),
                                kpis={k: float(v) for k, v in tr.info["kpis"].items()},
                            )
                        )
                elif isinstance(msg, proto.Close):
                    self._send(proto.Close())
                    return
                else:
                    # state/transition/error only travel server-to-client
                    self._send(
                        proto.ErrorMsg("unexpected", f"{type(msg).__name__.lower()} is a server message")
                    )
            except InvalidAction as e:
                self._send(proto.ErrorMsg("action", str(e)))
            except EpisodeDone as e:
                self._send(proto.ErrorMsg("done", str(e)))
            except (RlEnvError, OrchestratorError, ScenarioError, TypeError, ValueError) as e:
                self._send(proto.ErrorMsg("config", str(e)))
            except Exception as e:  # the service stays up no matter what
                self._send(proto.ErrorMsg("internal", f"{type(e).__name__}: {e}"))


class _ThreadedServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class EnvServer:
    """Environment service bound to one scenario; port 0 picks a free port."""

    def __init__(self, scenario: Scenario, host: str = "127.0.0.1", port: int = 0):
        self._server = _ThreadedServer((host, port), _Handler)
        self._server.scenario = scenario
        self._thread = None

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def serve_forever(self) -> None:
        self._server.serve_forever(poll_interval=0.1)

    def start_background(self) -> "EnvServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def __enter__(self) -> "EnvServer":
        return self.start_background()

    def __exit__(self, *exc) -> None:
        self.shutdown()
