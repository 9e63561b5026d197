"""Regenerate the planner config, reference scenarios and run files in src/dualcatch/data.

The golden plan is produced afterwards by ``dualcatch plan`` on run_plan.json
(see ``--golden``).
"""

import argparse
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from dualcatch.ballistics import GRAVITY
from dualcatch.kinematics import consistent_configuration, default_model
from dualcatch.mpc import PlannerConfig
from dualcatch.sim import Scenario, opening_up_pose

DATA = Path(__file__).resolve().parents[1] / "src" / "dualcatch" / "data"


def write(name: str, obj: dict) -> None:
    (DATA / name).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    print("wrote", DATA / name)


def pose_task(model, start, target, yaw_target=0.0, duration=3.0, name=""):
    q0 = consistent_configuration(model, opening_up_pose(start, 0.0), model.home_q)
    return Scenario(q0=q0, fixed_target=opening_up_pose(target, yaw_target), duration=duration, name=name)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--golden", action="store_true", help="also regenerate golden_plan.json")
    args = ap.parse_args()
    model = default_model()

    write("planner_default.json", PlannerConfig().to_dict())

    # a throw from about 2.5 m away, aimed to pass the home pose after 0.9 s
    p0 = np.array([2.5, 0.3, 1.0])
    aim, t_aim = np.array([0.55, 0.05, 0.45]), 0.9
    v0 = (aim - p0 - 0.5 * np.array(GRAVITY) * t_aim**2) / t_aim
    catch = Scenario(q0=model.home_q, ball_p0=p0, ball_v0=np.round(v0, 6), seed=3, duration=2.0, name="reference-catch")
    write("scenario_catch.json", catch.to_dict())

    # X-axis reach used for the overshoot comparison
    write("scenario_overshoot.json", pose_task(model, [0.45, 0.0, 0.45], [0.65, 0.0, 0.45], name="reference-overshoot").to_dict())
    write("scenario_plan.json", pose_task(model, [0.5, 0.0, 0.45], [0.6, 0.08, 0.5], 0.2, name="reference-plan").to_dict())

    write("run_catch.json", {"model": "default_model.json", "planner": "planner_default.json",
                             "scenario": "scenario_catch.json", "tracking": {"kind": "ideal"}, "out": "runs/episode"})
    write("run_overshoot.json", {"model": "default_model.json", "planner": "planner_default.json",
                                 "scenario": "scenario_overshoot.json",
                                 "tracking": {"kind": "first_order", "tau": 0.8}, "out": "runs/overshoot"})
    write("run_plan.json", {"model": "default_model.json", "planner": "planner_default.json",
                            "scenario": "scenario_plan.json", "out": "runs/plan"})
    write("run_montecarlo.json", {"model": "default_model.json", "planner": "planner_default.json",
                                  "modes": ["pt", "at_balanced"], "seed": 2024,
                                  "generator": {"n_trials": 100, "duration": 1.6},
                                  "tracking": {"kind": "ideal"}, "out": "runs/montecarlo"})

    if args.golden:
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run([sys.executable, "-m", "dualcatch.cli", "plan", "--config", str(DATA / "run_plan.json"),
                            "--out", tmp], check=True)
            shutil.copy(Path(tmp) / "plan.json", DATA / "golden_plan.json")
            print("wrote", DATA / "golden_plan.json")


if __name__ == "__main__":
    main()
