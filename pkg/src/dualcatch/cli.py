"""Command-line entry point: ``dualcatch plan | episode | montecarlo``.

A run configuration is a JSON file naming the model, the planner config and
the scenario (paths relative to the run file, or inline objects), plus
optional tracking and Monte-Carlo generator settings.  Flags override the
file.  Exit codes: 0 ok, 2 configuration error, 3 solver failure (plan only).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .kinematics import ModelError, SystemModel, SystemState, chain_residual, load_model
from .mpc import CHAIN_SOFT, ConfigError, PlannerConfig, mpc_step, run_episode
from .ocp import PROFILES
from .sim import Scenario, Tracking, monte_carlo
from .solver import CONVERGED, MAX_ITER

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_RUNS = {
    "plan": DATA_DIR / "run_plan.json",
    "episode": DATA_DIR / "run_catch.json",
    "montecarlo": DATA_DIR / "run_montecarlo.json",
}
PROFILE_NAMES = sorted(PROFILES) + ["custom"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


@dataclass
class RunConfig:
    model: SystemModel
    planner: PlannerConfig
    scenario: Scenario | None
    tracking: Tracking
    n_trials: int
    seed: int | None
    duration: float
    modes: list[str]
    out: Path
    source: Path


def _read_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"{what}: file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: invalid JSON in {path} ({exc})") from None


def _section(value, base: Path, what: str) -> tuple[dict | None, Path | None]:
    """A config section given inline or as a path relative to ``base``."""
    if value is None:
        return None, None
    if isinstance(value, dict):
        return value, None
    if isinstance(value, str):
        path = (base / value).resolve()
        return _read_json(path, what), path
    raise ConfigError(f"{what}: expected an object or a file path")


def _tracking(kind: str, tau: float) -> Tracking:
    kind = kind.replace("-", "_")
    try:
        return Tracking(kind, tau)
    except ValueError as exc:
        raise ConfigError(f"tracking: {exc}") from None


def _split_modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    for m in modes:
        if m not in PROFILE_NAMES:
            raise ConfigError(f"mode: unknown profile {m!r}; choose from {PROFILE_NAMES}")
    if not modes:
        raise ConfigError("mode: empty")
    return modes


def load_run_config(command: str, args: argparse.Namespace) -> RunConfig:
    path = Path(args.config) if args.config else DEFAULT_RUNS[command]
    d = _read_json(path, "config")
    known = {"model", "planner", "scenario", "tracking", "generator", "modes", "seed", "out"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"config: unknown fields {sorted(unknown)}")
    base = path.resolve().parent

    if "model" not in d:
        raise ConfigError("model: required")
    if isinstance(d["model"], str):
        model_path = (base / d["model"]).resolve()
        if not model_path.is_file():
            raise ConfigError(f"model: file not found: {model_path}")
        try:
            model = load_model(model_path)
        except (ModelError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None
    else:
        try:
            model = SystemModel.from_dict(d["model"])
        except (ModelError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None

    planner_d, _ = _section(d.get("planner"), base, "planner")
    planner = PlannerConfig.from_dict(planner_d or {})

    scenario = None
    scen_d, _ = _section(d.get("scenario"), base, "scenario")
    if scen_d is not None:
        try:
            scenario = Scenario.from_dict(scen_d)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}") from None

    tr = d.get("tracking", {})
    kind = args.tracking or tr.get("kind", "ideal")
    tau = args.tau if args.tau is not None else float(tr.get("tau", 0.05))
    tracking = _tracking(kind, tau)

    gen = d.get("generator", {})
    n_trials = args.n_trials if args.n_trials is not None else int(gen.get("n_trials", 100))
    duration = float(gen.get("duration", 1.6))
    seed = args.seed if args.seed is not None else d.get("seed")

    modes = [planner.profile]
    if "modes" in d:
        modes = _split_modes(",".join(d["modes"]))
    if args.mode and args.profile and args.mode != args.profile:
        raise ConfigError("mode: --mode and --profile disagree")
    chosen = args.mode or args.profile
    if chosen:
        modes = _split_modes(chosen)
    if command != "montecarlo" and len(modes) != 1:
        raise ConfigError(f"mode: {command} runs one profile, got {modes}")
    if "custom" in modes and planner.profile != "custom":
        raise ConfigError("mode: 'custom' needs a planner config with profile 'custom'")

    out = Path(args.out) if args.out else Path(d.get("out", f"runs/{command}"))
    return RunConfig(model, planner, scenario, tracking, n_trials, seed, duration, modes, out, path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def cmd_plan(rc: RunConfig) -> int:
    sc = rc.scenario
    if sc is None or sc.fixed_target is None:
        raise ConfigError("scenario: plan needs a start state (q0, qd0) and a fixed_target pose")
    cfg = rc.planner.with_profile(rc.modes[0])
    state = SystemState(sc.q0, sc.qd0)
    rec = mpc_step(rc.model, state, sc.fixed_target, cfg)
    plan = rec.plan
    st = plan.stats
    ok = st.status == CONVERGED or (st.status == MAX_ITER and st.max_violation <= CHAIN_SOFT)

    rc.out.mkdir(parents=True, exist_ok=True)
    payload = {
        "profile": cfg.profile,
        "mode": cfg.mode,
        "scenario_hash": sc.hash(),
        "start_chain_residual": float(np.max(np.abs(chain_residual(rc.model, state.q_left, state.q_right)))),
        "target": sc.fixed_target.to_dict(),
        **plan.to_dict(),
    }
    (rc.out / "plan.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    lines = [
        f"profile            {cfg.profile} ({cfg.mode})",
        f"status             {st.status}",
        f"iterations         {st.iterations} inner / {st.outer_iterations} outer",
        f"cost               {plan.cost:.9g}",
    ]
    lines += [f"  {k:<17}{v:.9g}" for k, v in plan.terms.items()]
    lines += [
        f"terminal weights   P={plan.P_term:.6g} O={plan.O_term:.6g}",
        f"max chain residual {plan.max_chain:.3e}",
        f"KKT residual       {st.kkt_residual:.3e}",
    ]
    text = "\n".join(lines) + "\n"
    (rc.out / "plan_summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text + f"solve time         {1e3 * st.wall_time:.1f} ms\n")
    if not ok:
        print(f"error: solver failed ({st.status}, max violation {st.max_violation:.2e})", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_episode(rc: RunConfig) -> int:
    sc = rc.scenario
    if sc is None:
        raise ConfigError("scenario: episode needs a scenario")
    if rc.seed is not None:
        sc = replace(sc, seed=int(rc.seed))
    name = rc.modes[0]
    cfg = rc.planner.with_profile(name)
    records, res = run_episode(sc, cfg, rc.model, rc.tracking)

    rc.out.mkdir(parents=True, exist_ok=True)
    header = {
        "type": "header",
        "profile": name,
        "mode": cfg.mode,
        "scenario_hash": res.scenario_hash,
        "scenario": sc.to_dict(),
        "tracking": {"kind": rc.tracking.kind, "tau": rc.tracking.tau},
        "planner": cfg.to_dict(),
    }
    log = [_dump(header)]
    log += [_dump({"type": "cycle", **r.to_dict()}) for r in records]
    log.append(_dump({"type": "result", **res.to_dict()}))
    (rc.out / f"episode_{name}.jsonl").write_text("\n".join(log) + "\n", encoding="utf-8")

    row = {"mode": name, **res.row()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(row))
    w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    (rc.out / f"episode_{name}.csv").write_text(buf.getvalue(), encoding="utf-8")
    timing = {"mean_cycle_ms": 1e3 * res.mean_cycle_time, "worst_cycle_ms": 1e3 * res.worst_cycle_time}
    (rc.out / f"episode_{name}_timing.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")

    print(f"{name}: {res.outcome} after {res.n_cycles} cycles; E={res.effort:.4f}; "
          f"max grasp deviation {res.max_grasp_deviation:.2e} m; "
          f"cycle time mean {timing['mean_cycle_ms']:.1f} ms, worst {timing['worst_cycle_ms']:.1f} ms")
    return EXIT_OK


def cmd_montecarlo(rc: RunConfig, jobs: int = 1) -> int:
    if rc.n_trials < 1:
        raise ConfigError("n-trials: must be >= 1")
    if jobs < 1:
        raise ConfigError("jobs: must be >= 1")

    def progress(k, n):
        print(f"\rtrial {k}/{n}", end="", file=sys.stderr, flush=True)

    seed = 0 if rc.seed is None else int(rc.seed)
    report = monte_carlo(rc.n_trials, rc.modes, rc.planner, seed, rc.model, rc.tracking,
                         jobs=jobs, duration=rc.duration, progress=progress)
    print(file=sys.stderr)
    report.write(rc.out)
    print(report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualcatch", description="Dual-arm closed-chain NMPC interception planner.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("plan", "solve one OCP and write the plan"),
        ("episode", "run one closed-loop episode"),
        ("montecarlo", "paired random-task comparison of planner profiles"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="run configuration JSON (default: the packaged reference run)")
        s.add_argument("--mode", help="planner profile; montecarlo accepts a comma-separated list")
        s.add_argument("--profile", help="planner profile (alias of --mode for a single profile)")
        s.add_argument("--n-trials", type=int, dest="n_trials", help="Monte-Carlo trials")
        s.add_argument("--seed", type=int, help="scenario / trial seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("--tracking", choices=["ideal", "first-order"], help="plant tracking model")
        s.add_argument("--tau", type=float, help="first-order tracking time constant, s")
        s.add_argument("--jobs", type=int, default=1, help="parallel Monte-Carlo workers")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_run_config(args.command, args)
        if args.command == "plan":
            return cmd_plan(rc)
        if args.command == "episode":
            return cmd_episode(rc)
        return cmd_montecarlo(rc, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
