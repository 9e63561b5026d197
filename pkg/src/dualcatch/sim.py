"""Plant and ball simulation, episode metrics and the paired Monte-Carlo harness."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .ballistics import GRAVITY, ballistic_state
from .geometry import Pose, UnitQuaternion, qangle
from .kinematics import (
    SystemModel,
    SystemState,
    catcher_ik,
    catcher_jacobian,
    consistent_configuration,
    fk_catcher,
    grasp_distance_batch,
)
from .targeting import SafeZone

TrackingKind = Literal["ideal", "first_order"]
OUTCOMES = ("caught", "missed", "no_target", "aborted")


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tracking:
    """Low-level tracking model: ideal, or first-order lag of the commanded acceleration."""

    kind: TrackingKind = "ideal"
    tau: float = 0.05  # s

    def __post_init__(self):
        if self.kind not in ("ideal", "first_order"):
            raise ValueError(f"tracking must be 'ideal' or 'first_order', got {self.kind!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def tracked_acceleration(u0: np.ndarray, accel_prev: np.ndarray | None, T_s: float, tracking: Tracking) -> np.ndarray:
    """Acceleration realized over the next period.

    First-order tracking is the discrete filter ``a_k = a_{k-1} + alpha (u_k - a_{k-1})``
    with ``alpha = T_s / max(tau, T_s)``, so a unit step reaches
    ``1 - (1 - alpha)^k`` after k periods and ``tau <= T_s`` is ideal.
    """
    u0 = np.asarray(u0, dtype=float)
    if tracking.kind == "ideal":
        return u0.copy()
    a = np.zeros_like(u0) if accel_prev is None else np.asarray(accel_prev, dtype=float)
    alpha = T_s / max(tracking.tau, T_s)
    return a + alpha * (u0 - a)


def integrate(state: SystemState, a: np.ndarray, dt: float) -> SystemState:
    """Exact constant-acceleration integration over ``dt``."""
    return SystemState(state.q + dt * state.qdot + 0.5 * dt * dt * a, state.qdot + dt * a)


def close_chain(model: SystemModel, state: SystemState) -> SystemState:
    """Re-impose the rigid grasp: the right arm follows the catcher pose realized by the left.

    Position closure is a damped Gauss-Newton solve seeded at the current
    right-arm angles; the right-arm velocity is the least-squares match of
    the left arm's catcher pose rate.
    """
    target = fk_catcher(model, state.q_left, "left")
    q_r, _ = catcher_ik(model, "right", target, state.q_right)
    rate = catcher_jacobian(model, state.q_left, "left") @ state.qdot[:7]
    qd_r = np.linalg.lstsq(catcher_jacobian(model, q_r, "right"), rate, rcond=None)[0]
    return SystemState(np.concatenate([state.q_left, q_r]), np.concatenate([state.qdot[:7], qd_r]))


def plant_advance(
    state: SystemState,
    u0: np.ndarray,
    T_s: float,
    tracking: Tracking | None = None,
    accel_prev: np.ndarray | None = None,
    model: SystemModel | None = None,
) -> tuple[SystemState, np.ndarray]:
    """Advance the plant one period; returns the new state and the realized acceleration.

    With lagged tracking the joints no longer move consistently, so when
    ``model`` is given and the realized acceleration differs from the
    command, the physical grasp closure is re-imposed through
    ``close_chain``.  Ideal tracking integrates the command exactly.
    """
    tracking = tracking or Tracking()
    a = tracked_acceleration(u0, accel_prev, T_s, tracking)
    new = integrate(state, a, T_s)
    if tracking.kind == "first_order" and model is not None and not np.array_equal(a, u0):
        new = close_chain(model, new)
    return new, a


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def control_effort(records) -> float:
    """Sum of squared executed first inputs over an episode."""
    return float(sum(float(r.applied_u @ r.applied_u) for r in records))


def control_effort_split(records) -> tuple[float, float]:
    """Left-arm (joints 1-7) and right-arm (joints 8-14) parts of the effort."""
    left = sum(float(r.applied_u[:7] @ r.applied_u[:7]) for r in records)
    right = sum(float(r.applied_u[7:] @ r.applied_u[7:]) for r in records)
    return float(left), float(right)


def catch_check(ball: Sequence[float], catcher: Pose, r_catch: float, ball_velocity: Sequence[float] | None = None) -> bool:
    """Ball center inside the closed ball of radius ``r_catch`` around the catcher origin,
    on or above the opening plane, and (if a velocity is given) descending."""
    d = np.asarray(ball, dtype=float) - catcher.position
    if float(np.linalg.norm(d)) > r_catch:
        return False
    opening = catcher.orientation.matrix()[:, 2]
    if float(d @ opening) < 0.0:
        return False
    if ball_velocity is not None and not float(ball_velocity[2]) < 0.0:
        return False
    return True


OVERSHOOT_DEADBAND = 1e-3  # m; smaller start-to-target offsets count as no commanded motion


def overshoot(positions: np.ndarray, start: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-axis excursion beyond the target along the start-to-target direction.

    For each axis: ``max(0, max_t s (p(t) - target))`` with ``s = sign(target - start)``;
    an axis whose offset is within ``OVERSHOOT_DEADBAND`` has no approach
    direction and reports 0.
    """
    positions = np.asarray(positions, dtype=float)
    delta = np.asarray(target, dtype=float) - np.asarray(start, dtype=float)
    s = np.where(np.abs(delta) > OVERSHOOT_DEADBAND, np.sign(delta), 0.0)
    exc = s * (positions - np.asarray(target, dtype=float))
    return np.maximum(0.0, exc.max(axis=0))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def _floats(x, n: int) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(n)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """One planning task.

    Ball scenarios throw a ball from ``ball_p0`` with ``ball_v0`` at t = 0 and
    observe it with Gaussian noise ``sigma`` at ``meas_rate``.  Pose tasks set
    ``fixed_target`` instead; the ball fields are then ignored.
    """

    q0: np.ndarray
    qd0: np.ndarray | None = None
    ball_p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ball_v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: float = 0.01
    meas_rate: float = 30.0
    seed: int = 0
    safe_zone: SafeZone | None = None
    r_catch: float = 0.06
    duration: float = 2.0
    floor: float = 0.0
    fixed_target: Pose | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "q0", _floats(self.q0, 14))
        object.__setattr__(self, "qd0", _floats(np.zeros(14) if self.qd0 is None else self.qd0, 14))
        object.__setattr__(self, "ball_p0", _floats(self.ball_p0, 3))
        object.__setattr__(self, "ball_v0", _floats(self.ball_v0, 3))
        if not self.r_catch > 0:
            raise ValueError("r_catch must be positive")
        if not (self.sigma >= 0 and self.meas_rate > 0 and self.duration > 0):
            raise ValueError("sigma must be >= 0, meas_rate and duration positive")

    def initial_state(self) -> SystemState:
        return SystemState(self.q0, self.qd0)

    def measurements(self) -> list[tuple[float, np.ndarray]]:
        """Noisy ball positions at ``j / meas_rate`` up to the duration (seeded, so identical across modes)."""
        n = int(math.floor(self.duration * self.meas_rate + 1e-9)) + 1
        rng = np.random.default_rng(self.seed)
        noise = rng.normal(0.0, self.sigma, size=(n, 3)) if self.sigma > 0 else np.zeros((n, 3))
        out = []
        for j in range(n):
            t = j / self.meas_rate
            p, _ = ballistic_state(self.ball_p0, self.ball_v0, t, GRAVITY)
            out.append((t, p + noise[j]))
        return out

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "q0": self.q0.tolist(),
            "qd0": self.qd0.tolist(),
            "ball": {"p0": self.ball_p0.tolist(), "v0": self.ball_v0.tolist()},
            "sigma": self.sigma,
            "meas_rate": self.meas_rate,
            "seed": self.seed,
            "r_catch": self.r_catch,
            "duration": self.duration,
            "floor": self.floor,
            "safe_zone": self.safe_zone.to_dict() if self.safe_zone is not None else None,
            "fixed_target": self.fixed_target.to_dict() if self.fixed_target is not None else None,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        ball = d.get("ball", {})
        return cls(
            q0=d["q0"],
            qd0=d.get("qd0"),
            ball_p0=ball.get("p0", [0.0, 0.0, 0.0]),
            ball_v0=ball.get("v0", [0.0, 0.0, 0.0]),
            sigma=float(d.get("sigma", 0.01)),
            meas_rate=float(d.get("meas_rate", 30.0)),
            seed=int(d.get("seed", 0)),
            safe_zone=SafeZone.from_dict(d["safe_zone"]) if d.get("safe_zone") else None,
            r_catch=float(d.get("r_catch", 0.06)),
            duration=float(d.get("duration", 2.0)),
            floor=float(d.get("floor", 0.0)),
            fixed_target=Pose.from_dict(d["fixed_target"]) if d.get("fixed_target") else None,
            name=str(d.get("name", "")),
        )

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form; equal hashes mean identical tasks."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_scenario(path: str | Path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def opening_up_pose(position: Sequence[float], yaw: float) -> Pose:
    return Pose(position, UnitQuaternion.from_axis_angle([0.0, 0.0, 1.0], yaw))


def random_pose_task(
    model: SystemModel,
    zone: SafeZone,
    rng: np.random.Generator,
    min_separation: float = 0.15,
    yaw_range: float = 0.3,
    duration: float = 1.6,
    r_catch: float = 0.06,
    max_tries: int = 50,
) -> Scenario:
    """Random start/target pair inside ``zone``, opening up, at least ``min_separation`` apart.

    The start configuration is a chain-consistent configuration found from
    the model's home posture; unreachable samples are redrawn.
    """
    if model.home_q is None:
        raise ValueError("model has no home configuration to seed the start posture")
    for _ in range(max_tries):
        p0 = rng.uniform(zone.min_corner, zone.max_corner)
        p1 = rng.uniform(zone.min_corner, zone.max_corner)
        y0, y1 = rng.uniform(-yaw_range, yaw_range, size=2)
        if np.linalg.norm(p1 - p0) < min_separation:
            continue
        q0 = consistent_configuration(model, opening_up_pose(p0, y0), model.home_q)
        if q0 is None:
            continue
        return Scenario(q0=q0, fixed_target=opening_up_pose(p1, y1), duration=duration, r_catch=r_catch)
    raise RuntimeError("could not sample a reachable pose task")


# ---------------------------------------------------------------------------
# Episode results
# ---------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    outcome: str
    effort: float
    effort_left: float
    effort_right: float
    max_grasp_deviation: float
    overshoot: np.ndarray  # (3,) m
    final_pos_error: float
    final_ori_error: float
    mean_cycle_time: float
    worst_cycle_time: float
    n_cycles: int
    n_degraded: int
    n_converged: int
    max_chain_converged: float
    max_bound_violation: float
    scenario_hash: str
    profile: str = ""

    @property
    def max_overshoot(self) -> float:
        return float(np.max(self.overshoot))

    def row(self) -> dict:
        """Deterministic CSV row (no wall-clock fields)."""
        return {
            "outcome": self.outcome,
            "E": self.effort,
            "E_left": self.effort_left,
            "E_right": self.effort_right,
            "overshoot_x": float(self.overshoot[0]),
            "overshoot_y": float(self.overshoot[1]),
            "overshoot_z": float(self.overshoot[2]),
            "max_grasp_dev": self.max_grasp_deviation,
            "final_pos_error": self.final_pos_error,
            "final_ori_error": self.final_ori_error,
            "cycles": self.n_cycles,
            "degraded": self.n_degraded,
            "converged": self.n_converged,
            "max_chain_residual": self.max_chain_converged,
            "max_bound_violation": self.max_bound_violation,
            "scenario_hash": self.scenario_hash,
        }

    def to_dict(self, timing: bool = False) -> dict:
        d = {"profile": self.profile, **self.row()}
        if timing:
            d["mean_cycle_ms"] = 1e3 * self.mean_cycle_time
            d["worst_cycle_ms"] = 1e3 * self.worst_cycle_time
        return d


def summarize_episode(scenario: Scenario, cfg, model: SystemModel, records, trace, outcome: str) -> EpisodeResult:
    qs = np.array([s.q for s in trace])
    qds = np.array([s.qdot for s in trace])
    pos = np.array([fk_catcher(model, q[:7], "left").position for q in qs])
    dev = float(np.max(np.abs(grasp_distance_batch(model, qs) - model.d_nom)))
    bound = max(
        float(np.max(np.maximum(qs - model.q_max, model.q_min - qs))),
        float(np.max(np.abs(qds) - model.qd_max)),
        0.0,
    )
    final_target = records[-1].target.pose if records else None
    if final_target is not None:
        ov = overshoot(pos, pos[0], final_target.position)
        last = fk_catcher(model, qs[-1][:7], "left")
        e_pos = float(np.linalg.norm(last.position - final_target.position))
        e_ori = float(qangle(last.orientation.as_array(), final_target.orientation.as_array()))
    else:
        ov, e_pos, e_ori = np.zeros(3), float("nan"), float("nan")
    times = [r.compute_time for r in records]
    conv = [r for r in records if r.plan.stats.converged and not r.degraded]
    e_l, e_r = control_effort_split(records)
    return EpisodeResult(
        outcome=outcome,
        effort=control_effort(records),
        effort_left=e_l,
        effort_right=e_r,
        max_grasp_deviation=float(dev),
        overshoot=ov,
        final_pos_error=e_pos,
        final_ori_error=e_ori,
        mean_cycle_time=float(np.mean(times)) if times else 0.0,
        worst_cycle_time=float(np.max(times)) if times else 0.0,
        n_cycles=len(records),
        n_degraded=sum(r.degraded for r in records),
        n_converged=len(conv),
        max_chain_converged=max((r.plan.max_chain for r in conv), default=0.0),
        max_bound_violation=bound,
        scenario_hash=scenario.hash(),
        profile=cfg.profile,
    )


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

CSV_COLUMNS = ["trial", "mode"] + list(EpisodeResult("", 0, 0, 0, 0, np.zeros(3), 0, 0, 0, 0, 0, 0, 0, 0, 0, "").row())
TIMING_COLUMNS = ["trial", "mode", "mean_cycle_ms", "worst_cycle_ms"]


@dataclass
class TrialResult:
    trial: int
    profile: str
    result: EpisodeResult


@dataclass
class ComparisonReport:
    trials: list[TrialResult]
    profiles: list[str]
    seed: int
    n_trials: int

    def by_profile(self, name: str) -> list[EpisodeResult]:
        return [t.result for t in self.trials if t.profile == name]

    def summary(self, timing: bool = False) -> dict:
        out = {"seed": self.seed, "n_trials": self.n_trials, "modes": {}}
        for name in self.profiles:
            rs = self.by_profile(name)
            E = np.array([r.effort for r in rs])
            entry = {
                "trials": len(rs),
                "outcomes": {o: sum(r.outcome == o for r in rs) for o in OUTCOMES},
                "mean_E": float(E.mean()),
                "std_E": float(E.std(ddof=1)) if len(rs) > 1 else 0.0,
                "mean_E_left": float(np.mean([r.effort_left for r in rs])),
                "mean_E_right": float(np.mean([r.effort_right for r in rs])),
                "mean_overshoot": float(np.mean([r.max_overshoot for r in rs])),
                "std_overshoot": float(np.std([r.max_overshoot for r in rs], ddof=1)) if len(rs) > 1 else 0.0,
                "mean_final_pos_error": float(np.nanmean([r.final_pos_error for r in rs])),
                "max_grasp_dev": float(max(r.max_grasp_deviation for r in rs)),
                "max_chain_residual": float(max(r.max_chain_converged for r in rs)),
                "cycles": int(sum(r.n_cycles for r in rs)),
                "converged_cycles": int(sum(r.n_converged for r in rs)),
                "degraded_cycles": int(sum(r.n_degraded for r in rs)),
            }
            if timing:
                entry["mean_cycle_ms"] = 1e3 * _cycle_weighted_mean(rs)
                entry["worst_cycle_ms"] = 1e3 * max(r.worst_cycle_time for r in rs)
            out["modes"][name] = entry
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in self.trials:
            row = t.result.row()
            w.writerow([t.trial, t.profile] + [_fmt(row[c]) for c in CSV_COLUMNS[2:]])
        return buf.getvalue()

    def timing_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for t in self.trials:
            r = t.result
            w.writerow([t.trial, t.profile, _fmt(1e3 * r.mean_cycle_time), _fmt(1e3 * r.worst_cycle_time)])
        return buf.getvalue()

    def table(self) -> str:
        s = self.summary(timing=True)
        head = f"{'mode':<15}{'trials':>7}{'caught':>8}{'mean_E':>14}{'mean_overshoot':>16}{'mean_cycle_ms':>15}"
        lines = [head]
        for name, e in s["modes"].items():
            lines.append(
                f"{name:<15}{e['trials']:>7d}{e['outcomes']['caught']:>8d}{e['mean_E']:>14.4f}"
                f"{e['mean_overshoot']:>16.5f}{e['mean_cycle_ms']:>15.2f}"
            )
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "csv": out / "comparison.csv",
            "summary": out / "summary.json",
            "timing_csv": out / "timing.csv",
            "timing_summary": out / "timing.json",
        }
        paths["csv"].write_text(self.csv_text(), encoding="utf-8")
        paths["summary"].write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")
        paths["timing_csv"].write_text(self.timing_csv_text(), encoding="utf-8")
        timing = {k: {kk: v[kk] for kk in ("mean_cycle_ms", "worst_cycle_ms")} for k, v in self.summary(timing=True)["modes"].items()}
        paths["timing_summary"].write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
        return paths


def _cycle_weighted_mean(rs: list[EpisodeResult]) -> float:
    n = sum(r.n_cycles for r in rs)
    return sum(r.mean_cycle_time * r.n_cycles for r in rs) / n if n else 0.0


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trial_scenario(model: SystemModel, zone: SafeZone, seed: int, trial: int, duration: float = 1.6) -> Scenario:
    rng = np.random.default_rng([seed, trial])
    sc = random_pose_task(model, zone, rng, duration=duration)
    return replace(sc, seed=int(seed) * 100003 + trial, name=f"trial-{trial}")


def _run_trial(args) -> list[TrialResult]:
    from .mpc import run_episode

    model, cfgs, seed, trial, tracking, duration = args
    sc = trial_scenario(model, cfgs[0][1].safe_zone, seed, trial, duration)
    out = []
    hashes = set()
    for name, cfg in cfgs:
        try:
            _, res = run_episode(sc, cfg, model, tracking)
        except Exception:  # a broken episode is data, not a reason to stop the sweep
            res = EpisodeResult("aborted", 0.0, 0.0, 0.0, float("nan"), np.zeros(3), float("nan"), float("nan"),
                                0.0, 0.0, 0, 0, 0, 0.0, float("nan"), sc.hash(), name)
        hashes.add(res.scenario_hash)
        out.append(TrialResult(trial, name, res))
    if len(hashes) != 1:
        raise AssertionError(f"trial {trial}: modes saw different scenarios")
    return out


def monte_carlo(
    n_trials: int,
    profiles: Sequence[str],
    base_cfg,
    seed: int,
    model: SystemModel,
    tracking: Tracking | None = None,
    jobs: int = 1,
    duration: float = 1.6,
    progress=None,
) -> ComparisonReport:
    """Run every profile on the same ``n_trials`` random pose tasks.

    Scenario k is drawn from ``(seed, k)`` only, so all profiles see
    bitwise-identical tasks; results are collected in trial order whatever
    ``jobs`` is.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not profiles:
        raise ValueError("at least one profile is required")
    cfgs = [(p, base_cfg.with_profile(p)) for p in profiles]
    tasks = [(model, cfgs, seed, k, tracking or Tracking(), duration) for k in range(n_trials)]
    trials: list[TrialResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, res in enumerate(pool.map(_run_trial, tasks)):
                trials.extend(res)
                if progress:
                    progress(k + 1, n_trials)
    else:
        for k, task in enumerate(tasks):
            trials.extend(_run_trial(task))
            if progress:
                progress(k + 1, n_trials)
    return ComparisonReport(trials, list(profiles), seed, n_trials)
