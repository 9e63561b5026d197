import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import dualcatch
from dualcatch.cli import main
from dualcatch.kinematics import fk_catcher, load_model

DATA = Path(dualcatch.__file__).parent / "data"


def write_run(tmp_path, **fields):
    run = {"model": str(DATA / "default_model.json"), "planner": str(DATA / "planner_default.json")}
    run.update(fields)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(run))
    return path


def snapshot(paths):
    return {p: p.read_bytes() for p in paths}


def test_plan_at_target_is_idle(tmp_path, consistent_q, capsys):
    model = load_model(DATA / "default_model.json")
    here = fk_catcher(model, consistent_q[:7], "left")
    scen = {"q0": consistent_q.tolist(), "fixed_target": here.to_dict()}
    out = tmp_path / "out"
    assert main(["plan", "--config", str(write_run(tmp_path, scenario=scen)), "--out", str(out)]) == 0
    plan = json.loads((out / "plan.json").read_text())
    assert plan["cost"] <= 1e-6
    assert "cost" in capsys.readouterr().out


def test_missing_model_exits_2(tmp_path):
    missing = tmp_path / "nowhere" / "model.json"
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"model": str(missing), "scenario": str(DATA / "scenario_plan.json")}))
    proc = subprocess.run(
        [sys.executable, "-m", "dualcatch.cli", "plan", "--config", str(run), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert str(missing) in proc.stderr
    assert not (tmp_path / "o").exists()


def test_bad_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["plan", "--config", str(bad)]) == 2
    assert main(["plan", "--config", str(write_run(tmp_path, extra=1))]) == 2
    run = write_run(tmp_path, scenario=str(DATA / "scenario_plan.json"))
    assert main(["plan", "--config", str(run), "--mode", "fastest"]) == 2
    assert main(["plan", "--config", str(run), "--mode", "pt,at_balanced"]) == 2
    assert main(["plan", "--config", str(run), "--mode", "pt", "--profile", "at_smooth"]) == 2
    assert "error:" in capsys.readouterr().err


def test_golden_plan(tmp_path):
    out = tmp_path / "plan"
    assert main(["plan", "--config", str(DATA / "run_plan.json"), "--out", str(out)]) == 0
    got = json.loads((out / "plan.json").read_text())
    ref = json.loads((DATA / "golden_plan.json").read_text())
    assert got["profile"] == ref["profile"] and got["mode"] == ref["mode"]
    for key in ("u", "q", "qd"):
        assert np.max(np.abs(np.asarray(got[key]) - np.asarray(ref[key]))) <= 1e-6
    assert got["cost"] == pytest.approx(ref["cost"], abs=1e-6)


def test_episode_outputs(tmp_path, capsys):
    out = tmp_path / "ep"
    assert main(["episode", "--config", str(DATA / "run_catch.json"), "--out", str(out)]) == 0
    name = json.loads((DATA / "planner_default.json").read_text()).get("profile", "at_balanced")
    lines = (out / f"episode_{name}.jsonl").read_text().splitlines()
    head, result = json.loads(lines[0]), json.loads(lines[-1])
    assert head["type"] == "header" and result["type"] == "result"
    assert result["outcome"] == "caught"
    assert all(json.loads(x)["type"] == "cycle" for x in lines[1:-1])
    assert (out / f"episode_{name}.csv").is_file()
    assert (out / f"episode_{name}_timing.json").is_file()
    assert "caught" in capsys.readouterr().out


def test_scenario_hash_independent_of_mode(tmp_path):
    hashes = []
    for mode in ("pt", "at_balanced"):
        out = tmp_path / mode
        assert main(["episode", "--config", str(DATA / "run_catch.json"), "--mode", mode, "--out", str(out)]) == 0
        head = json.loads((out / f"episode_{mode}.jsonl").read_text().splitlines()[0])
        hashes.append(head["scenario_hash"])
    assert hashes[0] == hashes[1]


def test_episode_repeatable_bytes(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["episode", "--config", str(DATA / "run_catch.json"), "--seed", "17", "--out", str(out)]) == 0
        outs.append(out)
    for f in outs[0].iterdir():
        if f.name.endswith("_timing.json"):
            continue
        assert f.read_bytes() == (outs[1] / f.name).read_bytes(), f.name


def test_montecarlo_small_run(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"mc{k}"
        t0 = time.perf_counter()
        code = main(["montecarlo", "--config", str(DATA / "run_montecarlo.json"), "--n-trials", "5",
                     "--seed", "4", "--out", str(out)])
        elapsed = time.perf_counter() - t0
        assert code == 0
        assert elapsed < 60.0
        outs.append(out)
    table = capsys.readouterr().out.strip().splitlines()
    assert table[0].split() == ["mode", "trials", "caught", "mean_E", "mean_overshoot", "mean_cycle_ms"]
    assert {line.split()[0] for line in table[1:3]} == {"pt", "at_balanced"}
    # timing lives in separate files; everything else is reproducible byte for byte
    for name in ("comparison.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert (outs[0] / "timing.csv").is_file()


def test_inputs_not_mutated(tmp_path):
    inputs = [DATA / n for n in ("run_plan.json", "scenario_plan.json", "planner_default.json", "default_model.json")]
    before = snapshot(inputs)
    assert main(["plan", "--config", str(DATA / "run_plan.json"), "--out", str(tmp_path / "p")]) == 0
    assert snapshot(inputs) == before
