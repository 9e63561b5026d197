"""Receding-horizon planning: planner configuration, per-cycle solve, episode loop."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ballistics import BallTracker, FilterConfig, ballistic_state, propagate
from .geometry import Pose
from .kinematics import SystemModel, SystemState, fk_catcher
from .ocp import N_DOF, PROFILES, Mode, OcpEvaluator, OcpProblem, PlannerWeights, rollout
from .solver import CONVERGED, MAX_ITER, NlpSpec, SolveReport, SolverOptions, solve, warm_start_shift
from .targeting import SafeZone, TargetPose, filter_safe, select_target

# a max_iter exit is still executed when the chain residual is below this
CHAIN_SOFT = 1e-3

DEFAULT_SAFE_ZONE = SafeZone([0.35, -0.2, 0.3], [0.7, 0.2, 0.6])


class ConfigError(ValueError):
    """Invalid planner or run configuration; the message names the offending field."""


@dataclass(frozen=True)
class TargetingConfig:
    t_lock: float = 0.12  # s, freeze the target this close to t_catch
    v_min_impact: float = 0.1  # m/s
    prediction_horizon: float = 1.6  # s
    floor: float = 0.0  # m, prediction stops below this height

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


SHARED_WEIGHT_KEYS = ("R", "W", "eps_pos", "eps_ori")


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    """Everything a planning cycle needs besides the model, state and target."""

    profile: str = "at_balanced"
    mode: Mode = "AT"
    weights: PlannerWeights = field(default_factory=lambda: PROFILES["at_balanced"][1])
    N: int = 20
    T_s: float = 0.04
    solver: SolverOptions = field(default_factory=SolverOptions)
    safe_zone: SafeZone = DEFAULT_SAFE_ZONE
    targeting: TargetingConfig = field(default_factory=TargetingConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    workspace_constraint: bool = False  # keep the planned catcher path inside the safe zone
    warm_start_multipliers: bool = True
    weight_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError("N: horizon must be at least 2")
        if not self.T_s > 0:
            raise ConfigError("T_s: must be positive")
        if self.mode not in ("PT", "AT"):
            raise ConfigError(f"mode: must be 'PT' or 'AT', got {self.mode!r}")

    def with_profile(self, name: str) -> "PlannerConfig":
        """Switch to a named profile, re-applying any explicit weight overrides."""
        if name == "custom":
            return replace(self, profile="custom")
        if name not in PROFILES:
            raise ConfigError(f"profile: unknown {name!r}; choose from {sorted(PROFILES) + ['custom']}")
        mode, w = PROFILES[name]
        if self.weight_overrides:
            w = PlannerWeights.from_dict(self.weight_overrides, base=w)
        return replace(self, profile=name, mode=mode, weights=w)

    def problem(self, model: SystemModel, state: SystemState, target: TargetPose | Pose) -> OcpProblem:
        ws = self.safe_zone if self.workspace_constraint else None
        return OcpProblem(model, state, target, self.N, self.T_s, self.weights, self.mode, ws)

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        known = {
            "profile", "mode", "weights", "N", "T_s", "solver", "safe_zone", "targeting",
            "filter", "workspace_constraint", "warm_start_multipliers",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"planner config: unknown fields {sorted(unknown)}")
        try:
            name = d.get("profile", "at_balanced")
            overrides = dict(d.get("weights", {}))
            if name == "custom":
                if "mode" not in d:
                    raise ConfigError("mode: required for profile 'custom'")
                base = PlannerWeights.from_dict(overrides)
                cfg = cls(profile="custom", mode=d["mode"], weights=base, weight_overrides=overrides)
            else:
                cfg = cls(weight_overrides=overrides).with_profile(name)
            kw = {}
            for key in ("N", "workspace_constraint", "warm_start_multipliers"):
                if key in d:
                    kw[key] = d[key]
            if "T_s" in d:
                kw["T_s"] = float(d["T_s"])
            if "solver" in d:
                kw["solver"] = SolverOptions.from_dict(d["solver"])
            if "safe_zone" in d:
                kw["safe_zone"] = SafeZone.from_dict(d["safe_zone"])
            if "targeting" in d:
                kw["targeting"] = TargetingConfig(**d["targeting"])
            if "filter" in d:
                f = dict(d["filter"])
                if "gravity" in f:
                    f["gravity"] = tuple(f["gravity"])
                kw["filter"] = FilterConfig(**f)
            return replace(cfg, **kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"planner config: {exc}") from exc

    def weights_dict(self) -> dict:
        """Weights as written to a config file.

        A named profile takes its terminal and stage blocks from the profile
        table, so only the shared weights and explicit overrides are written;
        otherwise reloading would pin those blocks across profile switches.
        """
        full = self.weights.to_dict()
        if self.profile == "custom":
            return full
        out = {k: full[k] for k in SHARED_WEIGHT_KEYS}
        out.update({k: v for k, v in self.weight_overrides.items() if k not in SHARED_WEIGHT_KEYS})
        return out

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "mode": self.mode,
            "weights": self.weights_dict(),
            "N": self.N,
            "T_s": self.T_s,
            "solver": self.solver.to_dict(),
            "safe_zone": self.safe_zone.to_dict(),
            "targeting": self.targeting.to_dict(),
            "filter": {
                "dt": self.filter.dt,
                "gravity": list(self.filter.gravity),
                "process_noise_accel": self.filter.process_noise_accel,
                "measurement_noise": self.filter.measurement_noise,
            },
            "workspace_constraint": self.workspace_constraint,
            "warm_start_multipliers": self.warm_start_multipliers,
        }


def load_planner_config(path: str | Path) -> PlannerConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"planner config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"planner config {path}: invalid JSON ({exc})") from None
    return PlannerConfig.from_dict(d)


# ---------------------------------------------------------------------------
# One cycle
# ---------------------------------------------------------------------------


def nlp_from_evaluator(ev: OcpEvaluator) -> NlpSpec:
    """Wrap an evaluator as a solver problem over the flattened input sequence."""
    N = ev.N

    def objective(x):
        c = ev.cost(x)
        return c.value, c.grad.ravel()

    def penalty(x):
        v, g = ev.bound_penalty(x)
        return v, g.ravel()

    return NlpSpec(
        n=N * N_DOF,
        objective=objective,
        lower=np.tile(ev.u_lo, N),
        upper=np.tile(ev.u_hi, N),
        constraints=lambda x: ev.chain_residuals(x).ravel(),
        constraint_vjp=lambda x, y: ev.chain_vjp(x, y).ravel(),
        penalty=penalty,
        refresh=ev.refresh,
        hessian_approx=lambda x, rho, mu: ev.gauss_newton(x, rho, mu),
        constraint_scale=ev.constraint_scale(),
    )


@dataclass(eq=False)
class Plan:
    u: np.ndarray  # (N, 14)
    q: np.ndarray  # (N+1, 14)
    qd: np.ndarray  # (N+1, 14)
    cost: float
    terms: dict
    stats: SolveReport
    P_term: float
    O_term: float
    max_chain: float
    degraded: bool = False

    @property
    def z(self) -> np.ndarray:
        """Rollout as (N+1, 14, 2) with [..., 0] = q and [..., 1] = q'."""
        return np.stack([self.q, self.qd], axis=-1)

    @property
    def multipliers(self) -> np.ndarray:
        return self.stats.multipliers

    def to_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "q": self.q.tolist(),
            "qd": self.qd.tolist(),
            "cost": self.cost,
            "terms": self.terms,
            "terminal_weights": {"P": self.P_term, "O": self.O_term},
            "max_chain_residual": self.max_chain,
            "degraded": self.degraded,
            "solver": self.stats.to_dict(),
        }


@dataclass(eq=False)
class CycleRecord:
    t: float
    target: TargetPose
    plan: Plan
    compute_time: float
    mode: Mode
    state: SystemState
    applied_u: np.ndarray  # first input actually commanded to the plant

    @property
    def degraded(self) -> bool:
        return self.plan.degraded

    def to_dict(self, timing: bool = False) -> dict:
        """Log line.  Wall-clock time is excluded unless ``timing`` so logs stay reproducible."""
        d = {
            "t": self.t,
            "mode": self.mode,
            "target": self.target.to_dict(),
            "q": self.state.q.tolist(),
            "qd": self.state.qdot.tolist(),
            "u0": self.applied_u.tolist(),
            "cost": self.plan.cost,
            "terms": self.plan.terms,
            "terminal_weights": {"P": self.plan.P_term, "O": self.plan.O_term},
            "max_chain_residual": self.plan.max_chain,
            "degraded": self.plan.degraded,
            "solver": self.plan.stats.to_dict(),
        }
        if timing:
            d["compute_time"] = self.compute_time
        return d


def _make_plan(ev: OcpEvaluator, u: np.ndarray, stats: SolveReport, degraded: bool) -> Plan:
    p = ev.problem
    u = np.asarray(u, dtype=float).reshape(ev.N, N_DOF)
    q, qd = rollout(p.z0, u, p.T_s)
    c = ev.cost(u)
    chain = ev.chain_residuals(u)
    return Plan(u, q, qd, c.value, c.terms, stats, ev.P_term if p.mode == "AT" else p.weights.P_e,
                ev.O_term if p.mode == "AT" else p.weights.O_e, float(np.max(np.abs(chain))), degraded)


def _shift_multipliers(lam: np.ndarray, N: int) -> np.ndarray | None:
    if lam is None or lam.size != N * 7:
        return None
    lam = lam.reshape(N, 7)
    return np.concatenate([lam[1:], lam[-1:]]).ravel()


def mpc_step(
    model: SystemModel,
    state: SystemState,
    target: TargetPose | Pose,
    cfg: PlannerConfig,
    prev: CycleRecord | None = None,
    t: float = 0.0,
) -> CycleRecord:
    """Solve one cycle, warm-started from ``prev``.

    A failed solve (infeasible, or out of iterations with a chain residual
    above ``CHAIN_SOFT``) falls back to the previous plan shifted by one
    step and re-rolled from ``state``; the plan is then flagged degraded.
    """
    t0 = time.perf_counter()
    if not isinstance(target, TargetPose):
        target = TargetPose(target, float("inf"), np.zeros(3))
    ev = OcpEvaluator(cfg.problem(model, state, target))
    spec = nlp_from_evaluator(ev)
    prev_u = prev.plan.u if prev is not None and prev.plan.u.shape == (cfg.N, N_DOF) else None
    u_init = warm_start_shift(prev_u, cfg.N, N_DOF)
    lam0 = None
    if cfg.warm_start_multipliers and prev is not None:
        lam0 = _shift_multipliers(prev.plan.multipliers, cfg.N)
    x, rep = solve(spec, u_init.ravel(), cfg.solver, lam0)
    usable = rep.status == CONVERGED or (rep.status == MAX_ITER and rep.max_violation <= CHAIN_SOFT)
    if not usable and prev_u is not None:
        plan = _make_plan(ev, u_init, rep, True)
    else:
        plan = _make_plan(ev, x, rep, not usable)
    return CycleRecord(t, target, plan, time.perf_counter() - t0, cfg.mode, state, plan.u[0].copy())


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------


def run_episode(scenario, cfg: PlannerConfig, model: SystemModel, tracking=None, max_cycles: int | None = None):
    """Closed-loop episode; returns (records, EpisodeResult).

    Ball scenarios run the full pipeline each cycle: measurements up to the
    current time enter the filter, the flight is re-predicted, the target is
    re-selected (frozen within ``t_lock`` of the catch time), one cycle is
    solved and its first input drives the plant.  Pose-task scenarios
    (``scenario.fixed_target``) plan to a constant pose for the scenario
    duration instead.
    """
    from .sim import Tracking, catch_check, integrate, plant_advance, summarize_episode, tracked_acceleration

    tracking = tracking or Tracking()
    if scenario.safe_zone is not None:
        cfg = replace(cfg, safe_zone=scenario.safe_zone)
    T_s = cfg.T_s
    n_cycles = int(round(scenario.duration / T_s)) if max_cycles is None else max_cycles
    state = scenario.initial_state()
    accel = np.zeros(N_DOF)
    records: list[CycleRecord] = []
    trace = [state]
    outcome = None
    prev = None
    target: TargetPose | None = None
    ever_target = False

    tracker = BallTracker(cfg.filter)
    meas = scenario.measurements() if scenario.fixed_target is None else []
    mi = 0
    substeps = 8
    try:
        for k in range(n_cycles):
            t = k * T_s
            if scenario.fixed_target is not None:
                target = TargetPose(scenario.fixed_target, float("inf"), np.zeros(3))
            else:
                p_ball, _ = ballistic_state(scenario.ball_p0, scenario.ball_v0, t, cfg.filter.gravity)
                if p_ball[2] < scenario.floor:
                    outcome = "missed" if ever_target else "no_target"
                    break
                while mi < len(meas) and meas[mi][0] <= t + 1e-12:
                    tracker.ingest(*meas[mi])
                    mi += 1
                locked = target is not None and target.t_catch - t <= cfg.targeting.t_lock
                if tracker.ready and not locked:
                    est = tracker.predict_to(t)
                    traj = propagate(est, cfg.targeting.prediction_horizon, T_s, cfg.filter.gravity,
                                     floor=cfg.targeting.floor)
                    cands = filter_safe(traj, cfg.safe_zone)
                    catcher_now = fk_catcher(model, state.q_left, "left")
                    prev_ori = target.pose.orientation if target is not None else None
                    new = select_target(cands, catcher_now, t, prev_ori, cfg.targeting.v_min_impact)
                    if new is not None:
                        target = new
                        ever_target = True
            if target is None:
                # nothing to intercept yet: hold still
                u0 = np.zeros(N_DOF)
                rec = None
            else:
                rec = mpc_step(model, state, target, cfg, prev, t)
                records.append(rec)
                prev = rec
                u0 = rec.applied_u
            if scenario.fixed_target is None:
                caught = False
                a = tracked_acceleration(u0, accel, T_s, tracking)
                for j in range(1, substeps + 1):
                    tau = T_s * j / substeps
                    sub = integrate(state, a, tau)
                    pb, vb = ballistic_state(scenario.ball_p0, scenario.ball_v0, t + tau, cfg.filter.gravity)
                    if catch_check(pb, fk_catcher(model, sub.q_left, "left"), scenario.r_catch, vb):
                        caught = True
                        break
            state, accel = plant_advance(state, u0, T_s, tracking, accel, model)
            if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
                outcome = "aborted"
                break
            trace.append(state)
            if scenario.fixed_target is None and caught:
                outcome = "caught"
                break
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        outcome = "aborted"

    if outcome is None:
        if scenario.fixed_target is not None:
            outcome = "caught" if _reached(model, state, scenario) else "missed"
        else:
            outcome = "missed" if ever_target else "no_target"
    return records, summarize_episode(scenario, cfg, model, records, trace, outcome)


def _reached(model: SystemModel, state: SystemState, scenario) -> bool:
    p = fk_catcher(model, state.q_left, "left").position
    return bool(np.linalg.norm(p - scenario.fixed_target.position) <= scenario.r_catch)


__all__ = [
    "CHAIN_SOFT",
    "ConfigError",
    "CycleRecord",
    "DEFAULT_SAFE_ZONE",
    "Plan",
    "PlannerConfig",
    "TargetingConfig",
    "load_planner_config",
    "mpc_step",
    "nlp_from_evaluator",
    "run_episode",
]
