"""Co-simulation over a stream socket: an external peer drives the Ego one tick at a time.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON object with at
least ``kind`` and ``seq``. Sequence numbers start at 0 and increase by one per
message in each direction.

Peer -> server::

    init        {ego: state}                        initial Ego state (optional ``ego``)
    ego_state   {sim_time, ego: state}              Ego state for the next tick
    step_request {sim_time}                         advance one tick to ``sim_time``
    shutdown    {}

Server -> peer::

    init        {scenario, tick_dt, ego_id}
    actor_states {sim_time, actors: [{id, kind, state}]}
    step_ack    {sim_time, end}                     ``end`` is the end reason or null
    error       {message}

A state is ``{x, y, theta, v, a}``. Every ``step_request`` is answered by one
``actor_states`` and one ``step_ack``.
"""

from __future__ import annotations

import json
import socket
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from sdvsim.engine import EngineConfig, Session, SimulationResult, World, format_events, format_trace
from sdvsim.scenario import Scenario

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024
DEFAULT_TIMEOUT = 5.0  # s


class ProtocolError(RuntimeError):
    """The peer broke the message protocol; the session is aborted."""


class PeerTimeout(TimeoutError):
    pass


def send_message(sock: socket.socket, msg: dict) -> None:
    data = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode()
    sock.sendall(HEADER.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            if buf:
                raise ProtocolError("peer stalled inside a frame") from None
            raise PeerTimeout() from None
        if not chunk:
            raise ProtocolError("connection closed by peer")
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> dict:
    (n,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit")
    try:
        msg = json.loads(_recv_exact(sock, n).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from None
    if not isinstance(msg, dict) or "kind" not in msg or not isinstance(msg.get("seq"), int):
        raise ProtocolError("message needs 'kind' and integer 'seq'")
    return msg


def parse_endpoint(endpoint: str):
    """``host:port`` for TCP, anything else is a Unix socket path."""
    if ":" in endpoint and not endpoint.startswith("/"):
        host, port = endpoint.rsplit(":", 1)
        return socket.AF_INET, (host or "127.0.0.1", int(port))
    return socket.AF_UNIX, endpoint


def _state(d: dict) -> tuple:
    try:
        return tuple(float(d[k]) for k in ("x", "y", "theta", "v")) + (float(d.get("a", 0.0)),)
    except (KeyError, TypeError, ValueError):
        raise ProtocolError(f"bad vehicle state {d!r}") from None


def _state_dict(v) -> dict:
    c = v.cart
    return {"x": c.x, "y": c.y, "theta": c.theta, "v": c.speed, "a": v.accel}


@dataclass
class SessionLog:
    steps: int = 0
    pauses: list = field(default_factory=list)  # sim times at which the peer went quiet
    aborted: Optional[str] = None


class CoSimServer:
    """Serves one peer for one scenario run. The scenario's Ego must use an ``external`` script."""

    def __init__(self, scenario: Scenario, endpoint: str, config: EngineConfig = EngineConfig(), seed=None, timeout: float = DEFAULT_TIMEOUT, max_pause: Optional[float] = None):
        ego = scenario.ego
        if ego.script.get("type") != "external":
            raise ValueError("co-simulation needs an Ego with an external script")
        self.scenario = scenario
        self.endpoint = endpoint
        self.config = config
        self.seed = seed
        self.timeout = timeout
        self.max_pause = max_pause
        self.log = SessionLog()
        self.family, self.address = parse_endpoint(endpoint)
        self._listener = socket.socket(self.family, socket.SOCK_STREAM)
        if self.family == socket.AF_INET:
            self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        elif Path(self.address).exists():
            Path(self.address).unlink()
        self._listener.bind(self.address)
        self._listener.listen(1)

    @property
    def bound_address(self):
        return self._listener.getsockname()

    def serve(self, trace_out=None, events_out=None) -> SimulationResult:
        conn, _ = self._listener.accept()
        try:
            conn.settimeout(self.timeout)
            return self._session(conn, trace_out, events_out)
        finally:
            conn.close()
            self._listener.close()
            if self.family == socket.AF_UNIX and Path(self.address).exists():
                Path(self.address).unlink()

    def _recv(self, conn, world: World) -> dict:
        waited = 0.0
        while True:
            try:
                return recv_message(conn)
            except PeerTimeout:
                waited += self.timeout
                self.log.pauses.append(world.clock.sim_time)
                world.emit("pause", (), waited=waited)
                if self.max_pause is not None and waited >= self.max_pause:
                    raise ProtocolError(f"peer silent for {waited:.1f} s") from None

    def _session(self, conn, trace_out, events_out) -> SimulationResult:
        world = World(self.scenario, self.config, self.seed)
        session = Session(world)
        ego = world.vehicles[world.ego_id]
        expect = 0
        out_seq = 0

        def reply(kind, **body):
            nonlocal out_seq
            send_message(conn, {"kind": kind, "seq": out_seq, **body})
            out_seq += 1

        def take(msg):
            nonlocal expect
            if msg["seq"] != expect:
                raise ProtocolError(f"expected sequence number {expect}, got {msg['seq']}")
            expect += 1
            return msg

        result = None
        try:
            msg = take(self._recv(conn, world))
            if msg["kind"] != "init":
                raise ProtocolError(f"expected init, got {msg['kind']!r}")
            if msg.get("ego") is not None:
                world.set_external_initial(ego, _state(msg["ego"]))
            reply("init", scenario=self.scenario.name, tick_dt=world.clock.tick_dt, ego_id=world.ego_id)
            while True:
                msg = take(self._recv(conn, world))
                kind = msg["kind"]
                if kind == "shutdown":
                    break
                if kind == "ego_state":
                    world.external_state = _state(msg["ego"])
                    continue
                if kind != "step_request":
                    raise ProtocolError(f"unexpected message kind {kind!r}")
                target = float(msg.get("sim_time", world.clock.time_of(world.clock.tick + 1)))
                if abs(target - world.clock.time_of(world.clock.tick + 1)) > 1e-6:
                    raise ProtocolError(f"step_request for t = {target:.6f}, next tick is {world.clock.time_of(world.clock.tick + 1):.6f}")
                end = session.step()
                t = world.clock.sim_time
                actors = [{"id": v.id, "kind": v.kind, "state": _state_dict(v)} for v in world.active_vehicles() if v.id != world.ego_id]
                reply("actor_states", sim_time=t, actors=actors)
                reply("step_ack", sim_time=t, end=end)
                world.external_state = None
                self.log.steps += 1
        except ProtocolError as exc:
            self.log.aborted = str(exc)
            world.emit("protocol_abort", (), error=str(exc))
            try:
                reply("error", message=str(exc))
            except OSError:
                pass
            result = session.close("protocol")
            _flush(result, trace_out, events_out)
            raise
        result = session.close("shutdown")
        _flush(result, trace_out, events_out)
        return result


def _flush(result, trace_out, events_out) -> None:
    if trace_out:
        Path(trace_out).write_text(format_trace(result))
    if events_out:
        Path(events_out).write_text(format_events(result))


class CoSimClient:
    """Minimal peer, used for tests and as a reference implementation."""

    def __init__(self, endpoint, timeout: float = 30.0, connect_wait: float = 5.0):
        family, address = parse_endpoint(endpoint) if isinstance(endpoint, str) else (socket.AF_INET, endpoint)
        deadline = time.monotonic() + connect_wait
        while True:
            self.sock = socket.socket(family, socket.SOCK_STREAM)
            self.sock.settimeout(timeout)
            try:
                self.sock.connect(address)
                break
            except (ConnectionRefusedError, FileNotFoundError):
                self.sock.close()
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.02)
        self.seq = 0
        self.tick_dt = None
        self.tick = 0

    def send(self, kind: str, **body) -> None:
        send_message(self.sock, {"kind": kind, "seq": self.seq, **body})
        self.seq += 1

    def recv(self) -> dict:
        msg = recv_message(self.sock)
        if msg["kind"] == "error":
            raise ProtocolError(msg.get("message", "server error"))
        return msg

    def init(self, ego: Optional[dict] = None) -> dict:
        self.send("init", ego=ego)
        msg = self.recv()
        self.tick_dt = msg["tick_dt"]
        return msg

    def step(self, ego: Optional[dict] = None) -> tuple[dict, dict]:
        """Send the Ego state for the next tick and advance; returns (actor_states, step_ack)."""
        t = (self.tick + 1) * self.tick_dt
        if ego is not None:
            self.send("ego_state", sim_time=t, ego=ego)
        self.send("step_request", sim_time=t)
        states, ack = self.recv(), self.recv()
        self.tick += 1
        return states, ack

    def shutdown(self) -> None:
        self.send("shutdown")
        self.sock.close()


def replay_peer(endpoint, samples: Iterable, steps: Optional[int] = None) -> int:
    """Drive a server with recorded Ego rows ``(t, x, y, theta, v, a)``; returns steps taken."""
    from sdvsim.motion import ReplayMotion

    motion = ReplayMotion(list(samples))
    client = CoSimClient(endpoint)

    def state(t):
        x, y, th, v, a = motion.state(t)
        return {"x": x, "y": y, "theta": th, "v": v, "a": a}

    client.init(state(0.0))
    n = 0
    while steps is None or n < steps:
        _, ack = client.step(state((client.tick + 1) * client.tick_dt))
        if ack["end"]:
            break
        n += 1
    client.shutdown()
    return n
