import dataclasses
import socket
import threading
from importlib import resources

import numpy as np
import pytest

from sdvsim.cosim import CoSimClient, CoSimServer, ProtocolError, recv_message, replay_peer, send_message
from sdvsim.engine import run
from sdvsim.scenario import load_scenario

DATA = resources.files("sdvsim") / "data"


def external(sc):
    agents = [dataclasses.replace(a, script={"type": "external"}) if a.kind == "Ego" else a for a in sc.agents]
    return dataclasses.replace(sc, agents=agents)


def start(sc, tmp_path, **kw):
    server = CoSimServer(external(sc), str(tmp_path / "s.sock"), timeout=kw.pop("timeout", 5.0), **kw)
    box = {}

    def target():
        try:
            box["result"] = server.serve()
        except Exception as exc:  # surfaced by the test
            box["error"] = exc

    th = threading.Thread(target=target, daemon=True)
    th.start()
    return server, th, box


def test_replay_matches_lockstep(tmp_path):
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    ref = run(sc, until=6)
    ego_rows = [(t, x, y, th, v, a) for t, x, y, v, a, th, s, d in ref.traces[sc.ego.id]]
    server, th, box = start(sc, tmp_path)
    n = replay_peer(str(tmp_path / "s.sock"), ego_rows, steps=ref.ticks)
    th.join(10)
    assert "error" not in box and n == ref.ticks
    got = box["result"]
    for vid, rows in ref.traces.items():
        if vid == sc.ego.id:
            continue
        a, b = np.array(rows), np.array(got.traces[vid][: len(rows)])
        assert a.shape == b.shape
        assert np.max(np.abs(a - b)) < 1e-6


def test_hundred_steps(tmp_path):
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    server, th, box = start(sc, tmp_path)
    client = CoSimClient(str(tmp_path / "s.sock"))
    client.init()
    times = []
    for _ in range(100):
        states, ack = client.step()
        assert states["kind"] == "actor_states" and ack["kind"] == "step_ack"
        times.append(states["sim_time"])
    client.shutdown()
    th.join(10)
    assert len(times) == 100 and all(b > a for a, b in zip(times, times[1:]))
    assert times[-1] == pytest.approx(100 / 30)
    assert server.log.steps == 100


def test_skipped_sequence_aborts(tmp_path):
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    server, th, box = start(sc, tmp_path)
    client = CoSimClient(str(tmp_path / "s.sock"))
    client.init()
    client.step()
    client.seq += 1
    with pytest.raises(ProtocolError):
        client.step()
    th.join(10)
    assert isinstance(box["error"], ProtocolError)
    assert "sequence" in server.log.aborted


def test_peer_silence_pauses_then_aborts(tmp_path):
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    server, th, box = start(sc, tmp_path, timeout=0.1, max_pause=0.3)
    client = CoSimClient(str(tmp_path / "s.sock"))
    client.init()
    th.join(10)
    assert len(server.log.pauses) >= 3
    assert isinstance(box["error"], ProtocolError)
    client.sock.close()


def test_framing_round_trip():
    a, b = socket.socketpair()
    send_message(a, {"kind": "x", "seq": 3, "payload": [1, 2]})
    assert recv_message(b) == {"kind": "x", "seq": 3, "payload": [1, 2]}
    a.sendall(b"\x00\x00\x00\x02{}")
    with pytest.raises(ProtocolError):
        recv_message(b)
    a.close(), b.close()


def test_scripted_ego_rejected(tmp_path):
    sc = load_scenario(DATA / "scenarios" / "cut_in.yaml")
    with pytest.raises(ValueError):
        CoSimServer(sc, str(tmp_path / "s.sock"))
