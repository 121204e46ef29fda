import json
import subprocess
import sys
import threading
from importlib import resources

import yaml

from sdvsim.cli import EXIT_OK, EXIT_PROTOCOL, EXIT_RUNTIME, EXIT_VALIDATION, main
from sdvsim.cosim import CoSimClient

DATA = resources.files("sdvsim") / "data"
CUT_IN = str(DATA / "scenarios" / "cut_in.yaml")


def write_cut_in(tmp_path, name, ego_script=None, **params):
    d = yaml.safe_load(open(CUT_IN))
    d["map"] = str(DATA / "maps" / "two_lane.yaml")
    d["trees"] = [str(DATA / "trees" / t) for t in ("standard.bt", "cut_in.bt")]
    if params:
        d["agents"][1]["params"] = params
    if ego_script:
        d["agents"][0]["script"] = ego_script
    p = tmp_path / name
    p.write_text(yaml.safe_dump(d))
    return str(p)


def test_validate_ok(capsys):
    assert main(["validate", CUT_IN]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    d = yaml.safe_load(open(write_cut_in(tmp_path, "good.yaml")))
    d["agents"].append(dict(d["agents"][1]))
    bad.write_text(yaml.safe_dump(d))
    assert main(["validate", str(bad)]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "bad.yaml" in err and "agents[2]" in err


def test_run_is_deterministic(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"t{i}.csv"
        assert main(["run", CUT_IN, "--until", "4", "--trace-out", str(out), "--events-out", str(tmp_path / f"e{i}.jsonl")]) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_collision_exit_code(tmp_path, capsys):
    path = write_cut_in(tmp_path, "crash.yaml", acceptance=2.0, delta_s=[-5.0, -5.0])
    assert main(["run", path]) == EXIT_OK
    assert "collision" in capsys.readouterr().out
    assert main(["run", path, "--fail-on-collision"]) == EXIT_RUNTIME


def test_metrics_sted(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", CUT_IN, "--until", "3", "--trace-out", str(a)])
    main(["run", CUT_IN, "--until", "3", "--trace-out", str(b), "--seed", "99"])
    capsys.readouterr()
    assert main(["metrics", str(a), str(a)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert {r["sted"] for r in out["runs"]} == {0.0}
    assert main(["metrics", str(a), str(b), "--type", "cut_in", "--columns-out", str(tmp_path / "cols.csv")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert "cut_in" in out["summary"]["types"]
    assert (tmp_path / "cols.csv").exists()


def test_protocol_error_exit_code(tmp_path):
    path = write_cut_in(tmp_path, "ext.yaml", ego_script={"type": "external"})
    sock = str(tmp_path / "s.sock")
    box = {}
    th = threading.Thread(target=lambda: box.setdefault("rc", main(["serve", path, "--endpoint", sock])), daemon=True)
    th.start()
    client = CoSimClient(sock)
    client.init()
    client.seq = 5
    client.send("step_request", sim_time=1 / 30)
    th.join(10)
    assert box["rc"] == EXIT_PROTOCOL


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "sdvsim.cli", "validate", CUT_IN], capture_output=True, text=True)
    assert r.returncode == EXIT_OK
    r = subprocess.run([sys.executable, "-m", "sdvsim.cli", "validate", "/nonexistent.yaml"], capture_output=True, text=True)
    assert r.returncode == EXIT_VALIDATION
