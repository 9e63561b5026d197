"""Discrete interception OCP: double-integrator rollout, PT/AT costs, constraints.

Decision variables are the stacked joint accelerations ``u`` of shape
``(N, 14)``; states are eliminated through the exact discrete double
integrator

    q(k+1)  = q(k) + T_s q'(k) + T_s^2/2 u(k)
    q'(k+1) = q'(k) + T_s u(k)

Costs are written on the catcher pose computed through the LEFT arm; the
right arm is tied to it by the closed-chain equality constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .geometry import Pose, qangle, qresidual
from .kinematics import N_JOINTS, SystemModel, SystemState, chain, pose_jacobian
from .targeting import SafeZone, TargetPose

Mode = Literal["PT", "AT"]
N_DOF = 2 * N_JOINTS


def adaptive_weight(e, W_min: float, W_max: float, eps: float):
    """Error-modulated weight ``W_min + (W_max - W_min) * e / (e + eps)``."""
    e = np.asarray(e, dtype=float)
    out = W_min + (W_max - W_min) * (e / (e + eps))
    return float(out) if out.ndim == 0 else out


def _vec14(x) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(x, dtype=float), (N_DOF,)).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlannerWeights:
    R: np.ndarray = field(default_factory=lambda: np.full(N_DOF, 1e-3))
    W: np.ndarray = field(default_factory=lambda: np.full(N_DOF, 1e-1))
    P_e: float = 500.0
    O_e: float = 10.0
    P_e_max: float = 50.0
    P_e_min: float = 20.0
    O_e_max: float = 10.0
    O_e_min: float = 2.0
    Q_pos_max: float = 2.0
    Q_pos_min: float = 0.1
    Q_ori_max: float = 1.0
    Q_ori_min: float = 0.1
    eps_pos: float = 0.05
    eps_ori: float = 0.1

    def __post_init__(self):
        R, W = _vec14(self.R), _vec14(self.W)
        if not (np.all(np.isfinite(R)) and np.all(R >= 0) and np.all(np.isfinite(W)) and np.all(W >= 0)):
            raise ValueError("R and W must be finite and nonnegative")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "W", W)
        for lo, hi in (("P_e_min", "P_e_max"), ("O_e_min", "O_e_max"), ("Q_pos_min", "Q_pos_max"), ("Q_ori_min", "Q_ori_max")):
            if not getattr(self, lo) <= getattr(self, hi):
                raise ValueError(f"{lo} must not exceed {hi}")
        if not (self.eps_pos > 0 and self.eps_ori > 0):
            raise ValueError("eps_pos and eps_ori must be positive")

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(),
            "W": self.W.tolist(),
            "pt_terminal": {"P_e": self.P_e, "O_e": self.O_e},
            "at_terminal": {"P_e_max": self.P_e_max, "P_e_min": self.P_e_min, "O_e_max": self.O_e_max, "O_e_min": self.O_e_min},
            "at_stage": {"Q_pos_max": self.Q_pos_max, "Q_pos_min": self.Q_pos_min, "Q_ori_max": self.Q_ori_max, "Q_ori_min": self.Q_ori_min},
            "eps_pos": self.eps_pos,
            "eps_ori": self.eps_ori,
        }

    @classmethod
    def from_dict(cls, d: dict, base: "PlannerWeights | None" = None) -> "PlannerWeights":
        """Build from the nested JSON layout; missing keys fall back to ``base``."""
        kw = {}
        for key in ("R", "W", "eps_pos", "eps_ori"):
            if key in d:
                kw[key] = d[key]
        for group in ("pt_terminal", "at_terminal", "at_stage"):
            kw.update(d.get(group, {}))
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown weight fields: {sorted(unknown)}")
        return replace(base, **kw) if base is not None else cls(**kw)


_STAGE = dict(Q_pos_max=2.0, Q_pos_min=0.1, Q_ori_max=1.0, Q_ori_min=0.1)

# Named weight configurations.  The PT profile's adaptive fields are collapsed onto
# its fixed weights so that evaluating it in AT mode reproduces PT.
PROFILES: dict[str, tuple[Mode, PlannerWeights]] = {
    "pt": ("PT", PlannerWeights(P_e=500.0, O_e=10.0, P_e_max=500.0, P_e_min=500.0, O_e_max=10.0, O_e_min=10.0,
                                Q_pos_max=0.0, Q_pos_min=0.0, Q_ori_max=0.0, Q_ori_min=0.0)),
    "at_aggressive": ("AT", PlannerWeights(P_e_max=500.0, P_e_min=100.0, O_e_max=10.0, O_e_min=2.0, **_STAGE)),
    "at_balanced": ("AT", PlannerWeights(P_e_max=50.0, P_e_min=20.0, O_e_max=10.0, O_e_min=2.0, **_STAGE)),
    "at_smooth": ("AT", PlannerWeights(P_e_max=0.001, P_e_min=0.0, O_e_max=0.001, O_e_min=0.0, **_STAGE)),
}


def profile(name: str) -> tuple[Mode, PlannerWeights]:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True, eq=False)
class OcpProblem:
    model: SystemModel
    z0: SystemState
    target: TargetPose | Pose
    N: int = 20
    T_s: float = 0.04
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    mode: Mode = "AT"
    workspace: SafeZone | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if not self.T_s > 0:
            raise ValueError("T_s must be positive")
        if self.mode not in ("PT", "AT"):
            raise ValueError(f"mode must be 'PT' or 'AT', got {self.mode!r}")

    @property
    def target_pose(self) -> Pose:
        return self.target.pose if isinstance(self.target, TargetPose) else self.target


def rollout(z0: SystemState, u: np.ndarray, T_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact double-integrator rollout; returns q, q' of shape (N+1, 14)."""
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    q = np.empty((N + 1, u.shape[1]))
    qd = np.empty_like(q)
    q[0], qd[0] = z0.q, z0.qdot
    h2 = 0.5 * T_s * T_s
    for k in range(N):
        q[k + 1] = q[k] + T_s * qd[k] + h2 * u[k]
        qd[k + 1] = qd[k] + T_s * u[k]
    return q, qd


def rollout_coefficients(N: int, T_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrices with q(k) = q0 + k T_s q'0 + Cq[k] @ u and q'(k) = q'0 + Cv[k] @ u."""
    k = np.arange(N + 1)[:, None]
    j = np.arange(N)[None, :]
    past = j < k
    Cq = np.where(past, T_s * T_s * (k - j - 0.5), 0.0)
    Cv = np.where(past, T_s, 0.0)
    return Cq, Cv


@dataclass
class StageWeights:
    """Adaptive stage weights for steps 0..N-1 (frozen during a solver pass)."""

    pos: np.ndarray
    ori: np.ndarray


@dataclass
class CostEval:
    value: float
    grad: np.ndarray  # (N, 14)
    terms: dict


@dataclass
class _Kin:
    """Kinematic quantities of one rollout, shared by costs and constraints."""

    q: np.ndarray
    qd: np.ndarray
    p_left: np.ndarray  # (N+1, 3) catcher position through the left arm
    quat_left: np.ndarray  # (N+1, 4)
    J_left: np.ndarray  # (N+1, 7, 7)
    p_right: np.ndarray | None = None  # (N, 3), steps 1..N
    quat_right: np.ndarray | None = None
    J_right: np.ndarray | None = None


class OcpEvaluator:
    """Cost, gradient and constraint evaluation for one OcpProblem.

    Kinematics are cached for the last ``u`` seen so that objective and
    constraint callbacks at the same iterate share one chain evaluation.
    """

    def __init__(self, problem: OcpProblem):
        self.problem = problem
        m = problem.model
        self.N = problem.N
        self.Cq, self.Cv = rollout_coefficients(problem.N, problem.T_s)
        self.u_lo = -m.qdd_max
        self.u_hi = m.qdd_max
        tp = problem.target_pose
        self.p_tg = tp.position
        self.quat_tg = tp.orientation.as_array()
        self._key = None
        self._kin: _Kin | None = None
        e_pos0, e_ori0 = self.initial_errors()
        w = problem.weights
        # terminal weights: fixed (PT) or once per cycle from e(0) (AT)
        if problem.mode == "PT":
            self.P_term, self.O_term = w.P_e, w.O_e
        else:
            self.P_term = adaptive_weight(e_pos0, w.P_e_min, w.P_e_max, w.eps_pos)
            self.O_term = adaptive_weight(e_ori0, w.O_e_min, w.O_e_max, w.eps_ori)
        self.stage: StageWeights | None = None

    # -- kinematics -------------------------------------------------------
    def initial_errors(self) -> tuple[float, float]:
        m = self.problem.model
        ev = chain(m.left, self.problem.z0.q_left[None, :], catcher=True)
        e_pos = float(np.linalg.norm(ev.position[0] - self.p_tg))
        e_ori = float(qangle(ev.quat[0], self.quat_tg))
        return e_pos, e_ori

    def kin(self, u: np.ndarray) -> _Kin:
        u = np.asarray(u, dtype=float).reshape(self.N, N_DOF)
        key = u.tobytes()
        if self._key == key:
            return self._kin
        p = self.problem
        q, qd = rollout(p.z0, u, p.T_s)
        m = p.model
        ev_l = chain(m.left, q[:, :N_JOINTS], catcher=True)
        ev_r = chain(m.right, q[1:, N_JOINTS:], catcher=True)
        kin = _Kin(q, qd, ev_l.position, ev_l.quat, pose_jacobian(ev_l, m.left),
                   ev_r.position, ev_r.quat, pose_jacobian(ev_r, m.right))
        self._key, self._kin = key, kin
        return kin

    def _to_u_grad(self, Gq: np.ndarray, Gv: np.ndarray) -> np.ndarray:
        return self.Cq.T @ Gq + self.Cv.T @ Gv

    # -- adaptive stage weights -------------------------------------------
    def stage_weights(self, u: np.ndarray) -> StageWeights:
        """Stage weights from the predicted errors e(k), k = 0..N-1, of rollout ``u``."""
        w = self.problem.weights
        kin = self.kin(u)
        e_pos = np.linalg.norm(kin.p_left[:-1] - self.p_tg, axis=-1)
        e_ori = qangle(kin.quat_left[:-1], self.quat_tg[None, :])
        return StageWeights(
            np.asarray(adaptive_weight(e_pos, w.Q_pos_min, w.Q_pos_max, w.eps_pos)),
            np.asarray(adaptive_weight(e_ori, w.Q_ori_min, w.Q_ori_max, w.eps_ori)),
        )

    def refresh(self, u: np.ndarray) -> bool:
        """Re-evaluate and freeze the AT stage weights at iterate ``u``; True if they changed."""
        if self.problem.mode != "AT":
            return False
        new = self.stage_weights(u)
        old, self.stage = self.stage, new
        return old is None or not (np.array_equal(old.pos, new.pos) and np.array_equal(old.ori, new.ori))

    # -- cost -------------------------------------------------------------
    def cost(self, u: np.ndarray, stage: StageWeights | None = None, mode: Mode | None = None) -> CostEval:
        """Cost and gradient.  In AT mode the stage weights are treated as constants."""
        mode = mode or self.problem.mode
        u = np.asarray(u, dtype=float).reshape(self.N, N_DOF)
        kin = self.kin(u)
        w = self.problem.weights
        N = self.N
        Gq = np.zeros((N + 1, N_DOF))
        Gv = np.zeros((N + 1, N_DOF))

        if mode == "PT":
            P_term, O_term = w.P_e, w.O_e
        else:
            P_term, O_term = self.P_term, self.O_term

        # terminal pose error at step N
        e_p = kin.p_left[N] - self.p_tg
        r_q = qresidual(kin.quat_left[N], self.quat_tg)
        term_pos = P_term * float(e_p @ e_p)
        term_ori = O_term * float(r_q @ r_q)
        J = kin.J_left[N]
        Gq[N, :N_JOINTS] += 2.0 * P_term * (J[:3].T @ e_p) + 2.0 * O_term * (J[3:].T @ r_q)

        # running effort and velocity terms, k = 0..N-1
        effort = float(np.sum(w.R * u * u))
        velocity = float(np.sum(w.W * kin.qd[:N] ** 2))
        Gv[:N] += 2.0 * w.W * kin.qd[:N]
        grad_direct = 2.0 * w.R * u

        stage_pos = stage_ori = 0.0
        if mode == "AT":
            if stage is None:
                stage = self.stage if self.stage is not None else self.stage_weights(u)
            E_p = kin.p_left[:N] - self.p_tg
            R_q = qresidual(kin.quat_left[:N], self.quat_tg[None, :])
            stage_pos = float(np.sum(stage.pos * np.sum(E_p * E_p, axis=-1)))
            stage_ori = float(np.sum(stage.ori * np.sum(R_q * R_q, axis=-1)))
            Jl = kin.J_left[:N]
            Gq[:N, :N_JOINTS] += np.einsum("kij,ki->kj", Jl[:, :3], 2.0 * stage.pos[:, None] * E_p)
            Gq[:N, :N_JOINTS] += np.einsum("kij,ki->kj", Jl[:, 3:], 2.0 * stage.ori[:, None] * R_q)

        value = term_pos + term_ori + stage_pos + stage_ori + effort + velocity
        grad = self._to_u_grad(Gq, Gv) + grad_direct
        terms = {
            "terminal_pos": term_pos,
            "terminal_ori": term_ori,
            "stage_pos": stage_pos,
            "stage_ori": stage_ori,
            "effort": effort,
            "velocity": velocity,
        }
        return CostEval(value, grad, terms)

    # -- constraints --------------------------------------------------------
    def chain_residuals(self, u: np.ndarray) -> np.ndarray:
        """(N, 7) closed-chain residuals at steps 1..N."""
        kin = self.kin(u)
        return np.concatenate(
            [kin.p_left[1:] - kin.p_right, qresidual(kin.quat_left[1:], kin.quat_right)], axis=-1
        )

    def chain_vjp(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``J_c(u)^T y`` for ``y`` of shape (N, 7) or (N*7,)."""
        kin = self.kin(u)
        y = np.asarray(y, dtype=float).reshape(self.N, 7)
        s = np.where(np.sum(kin.quat_left[1:] * kin.quat_right, axis=-1) < 0.0, -1.0, 1.0)
        y_r = y.copy()
        y_r[:, 3:] *= s[:, None]
        Gq = np.zeros((self.N + 1, N_DOF))
        Gq[1:, :N_JOINTS] = np.einsum("kij,ki->kj", kin.J_left[1:], y)
        Gq[1:, N_JOINTS:] = -np.einsum("kij,ki->kj", kin.J_right, y_r)
        return self.Cq.T @ Gq

    def constraint_scale(self) -> np.ndarray:
        """(N*7,) row scaling that gives every step's residual unit sensitivity to the inputs.

        In single shooting the step-k residual moves with the inputs only
        through ``Cq[k]`` (``T_s^2 / 2`` at step 1), so unscaled rows differ
        in conditioning by orders of magnitude.
        """
        w = 1.0 / np.linalg.norm(self.Cq[1:], axis=1)
        return np.repeat(w, 7)

    def gauss_newton(self, u: np.ndarray, rho, mu: float) -> np.ndarray:
        """Gauss-Newton approximation of the augmented-Lagrangian Hessian, (N*14, N*14).

        ``rho`` is a scalar or per-row (N*7,) weight on the chain residuals.

        Every cost term, the chain term ``rho/2 ||c||^2`` and the bound penalty
        are sums of squares, so ``2 J^T J`` of each residual is assembled per
        step in joint space and mapped through the rollout coefficients.
        """
        p = self.problem
        w = p.weights
        N, n = self.N, N_JOINTS
        kin = self.kin(u)
        Bq = np.zeros((N + 1, N_DOF, N_DOF))
        Bv = np.zeros((N + 1, N_DOF))
        P_term, O_term = (w.P_e, w.O_e) if p.mode == "PT" else (self.P_term, self.O_term)
        J = kin.J_left[N]
        Bq[N, :n, :n] += 2.0 * (P_term * J[:3].T @ J[:3] + O_term * J[3:].T @ J[3:])
        if p.mode == "AT":
            stage = self.stage if self.stage is not None else self.stage_weights(u)
            Jl = kin.J_left[:N]
            Bq[:N, :n, :n] += 2.0 * (
                np.einsum("k,kia,kib->kab", stage.pos, Jl[:, :3], Jl[:, :3])
                + np.einsum("k,kia,kib->kab", stage.ori, Jl[:, 3:], Jl[:, 3:])
            )
        Bv[:N] += 2.0 * w.W
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (N * 7,)).reshape(N, 7)
        if np.any(rho > 0):
            s = np.where(np.sum(kin.quat_left[1:] * kin.quat_right, axis=-1) < 0.0, -1.0, 1.0)
            Jr = kin.J_right.copy()
            Jr[:, 3:] *= s[:, None, None]
            Jc = np.concatenate([kin.J_left[1:], -Jr], axis=-1)  # (N, 7, 14)
            Bq[1:] += np.einsum("ki,kia,kib->kab", rho, Jc, Jc)
        if mu > 0:
            vq, vv = self.state_violation(u)
            idx = np.arange(N_DOF)
            Bq[1:, idx, idx] += 2.0 * mu * (vq > 0)
            Bv[1:] += 2.0 * mu * (vv > 0)
        H = self._map_blocks(self.Cq, Bq) + self._map_blocks(self.Cv, Bv[:, :, None] * np.eye(N_DOF))
        H[np.diag_indices_from(H)] += np.tile(2.0 * w.R, N)
        return H

    def _map_blocks(self, C: np.ndarray, B: np.ndarray) -> np.ndarray:
        """``sum_k C[k]^T C[k] (x) B[k]`` laid out as a (N*14, N*14) matrix."""
        N = self.N
        CC = (C[:, :, None] * C[:, None, :]).reshape(N + 1, N * N)
        X = (CC.T @ B.reshape(N + 1, -1)).reshape(N, N, N_DOF, N_DOF)
        return X.transpose(0, 2, 1, 3).reshape(N * N_DOF, N * N_DOF)

    def state_violation(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed bound excess of q and q' at steps 1..N (positive = violated)."""
        kin = self.kin(u)
        m = self.problem.model
        q, qd = kin.q[1:], kin.qd[1:]
        vq = np.maximum(q - m.q_max, m.q_min - q)
        vv = np.maximum(qd - m.qd_max, -m.qd_max - qd)
        return vq, vv

    def bound_penalty(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        """Quadratic penalty on q/q' bound violations (and workspace exit)."""
        kin = self.kin(u)
        m = self.problem.model
        N = self.N
        q, qd = kin.q[1:], kin.qd[1:]
        hi_q, lo_q = np.maximum(q - m.q_max, 0.0), np.maximum(m.q_min - q, 0.0)
        hi_v, lo_v = np.maximum(qd - m.qd_max, 0.0), np.maximum(-m.qd_max - qd, 0.0)
        value = float(np.sum(hi_q**2 + lo_q**2 + hi_v**2 + lo_v**2))
        Gq = np.zeros((N + 1, N_DOF))
        Gv = np.zeros((N + 1, N_DOF))
        Gq[1:] = 2.0 * (hi_q - lo_q)
        Gv[1:] = 2.0 * (hi_v - lo_v)
        ws = self.problem.workspace
        if ws is not None:
            p = kin.p_left[1:]
            hi_p = np.maximum(p - ws.max_corner, 0.0)
            lo_p = np.maximum(ws.min_corner - p, 0.0)
            value += float(np.sum(hi_p**2 + lo_p**2))
            Gq[1:, :N_JOINTS] += np.einsum("kij,ki->kj", kin.J_left[1:, :3], 2.0 * (hi_p - lo_p))
        return value, self._to_u_grad(Gq, Gv)


def cost_pt(problem: OcpProblem, u: np.ndarray) -> tuple[float, np.ndarray]:
    ev = OcpEvaluator(problem).cost(u, mode="PT")
    return ev.value, ev.grad


def cost_at(problem: OcpProblem, u: np.ndarray, stage: StageWeights | None = None) -> tuple[float, np.ndarray]:
    """AT cost.  ``stage`` freezes the stage weights; by default they come from ``u``'s own rollout."""
    ev = OcpEvaluator(problem).cost(u, stage=stage, mode="AT")
    return ev.value, ev.grad


@dataclass
class ConstraintReport:
    q_slack_lo: np.ndarray  # (N, 14) q - q_min
    q_slack_hi: np.ndarray  # (N, 14) q_max - q
    qd_slack_lo: np.ndarray
    qd_slack_hi: np.ndarray
    u_slack_lo: np.ndarray  # (N, 14) u - u_min, steps 0..N-1
    u_slack_hi: np.ndarray
    chain: np.ndarray  # (N, 7)

    def violated(self) -> dict[str, np.ndarray]:
        """Boolean masks of violated entries per bound family."""
        return {
            "q": (self.q_slack_lo < 0) | (self.q_slack_hi < 0),
            "qd": (self.qd_slack_lo < 0) | (self.qd_slack_hi < 0),
            "u": (self.u_slack_lo < 0) | (self.u_slack_hi < 0),
        }

    @property
    def max_chain(self) -> float:
        return float(np.max(np.abs(self.chain))) if self.chain.size else 0.0


def constraint_eval(problem: OcpProblem, u: np.ndarray) -> ConstraintReport:
    ev = OcpEvaluator(problem)
    u = np.asarray(u, dtype=float).reshape(problem.N, N_DOF)
    kin = ev.kin(u)
    m = problem.model
    q, qd = kin.q[1:], kin.qd[1:]
    return ConstraintReport(
        q - m.q_min, m.q_max - q,
        qd + m.qd_max, m.qd_max - qd,
        u + m.qdd_max, m.qdd_max - u,
        ev.chain_residuals(u),
    )
