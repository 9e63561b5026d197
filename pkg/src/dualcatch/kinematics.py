"""Forward kinematics, Jacobians and the closed-chain residual of the dual-arm system.

Each arm is a serial chain of seven rows in the modified (Craig) DH
convention.  Row ``i`` maps frame ``i-1`` to frame ``i`` as::

    T_i = Rot_x(alpha_i) · Trans_x(a_i) · Rot_z(theta_i) · Trans_z(d_i)

with ``theta_i = q_i + theta_offset_i`` for revolute joints and
``d_i = d_i + q_i`` for prismatic joints.  The end-effector frame ``E`` is
frame 7; the world pose is ``base_transform · T_1 ··· T_7`` and the catcher
frame is ``E · grasp_transform``.

All heavy functions take stacked configurations of shape ``(B, 7)`` so that a
whole prediction horizon is evaluated in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._kernels import chain_kernel, jacobian_kernel
from .geometry import (
    Pose,
    RigidTransform,
    UnitQuaternion,
    qresidual,
)

Side = Literal["left", "right"]
N_JOINTS = 7


class ModelError(ValueError):
    """Raised when a kinematic model file or object is inconsistent."""


@dataclass(frozen=True)
class MdhRow:
    alpha: float
    a: float
    d: float
    theta: float = 0.0
    joint: Literal["revolute", "prismatic"] = "revolute"

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "a": self.a, "d": self.d, "theta": self.theta, "joint": self.joint}


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ArmModel:
    rows: tuple[MdhRow, ...]
    base_transform: RigidTransform = field(default_factory=RigidTransform.identity)
    grasp_transform: RigidTransform = field(default_factory=RigidTransform.identity)
    q_min: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, -np.pi))
    q_max: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, np.pi))
    qd_max: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 2.0))
    qdd_max: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 10.0))

    def __post_init__(self):
        rows = tuple(r if isinstance(r, MdhRow) else MdhRow(**r) for r in self.rows)
        if len(rows) != N_JOINTS:
            raise ModelError(f"arm needs exactly {N_JOINTS} rows, got {len(rows)}")
        object.__setattr__(self, "rows", rows)
        for name in ("q_min", "q_max", "qd_max", "qdd_max"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (N_JOINTS,) or not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} must be {N_JOINTS} finite values")
            object.__setattr__(self, name, arr)
        if not np.all(self.q_min < self.q_max):
            raise ModelError("q_min must be strictly below q_max")
        if not (np.all(self.qd_max > 0) and np.all(self.qdd_max > 0)):
            raise ModelError("velocity and acceleration bounds must be positive")
        # cached per-row constants for the batched chain
        object.__setattr__(self, "_alpha", np.array([r.alpha for r in rows]))
        object.__setattr__(self, "_a", np.array([r.a for r in rows]))
        object.__setattr__(self, "_d", np.array([r.d for r in rows]))
        object.__setattr__(self, "_theta", np.array([r.theta for r in rows]))
        object.__setattr__(self, "_prismatic", np.array([r.joint == "prismatic" for r in rows]))
        b, g = self.base_transform, self.grasp_transform
        object.__setattr__(self, "_frames", (
            b.rotation.matrix(), np.asarray(b.translation, dtype=float), b.rotation.as_array(),
            g.rotation.matrix(), np.asarray(g.translation, dtype=float), g.rotation.as_array(),
        ))

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        try:
            return cls(
                rows=tuple(MdhRow(**r) for r in d["rows"]),
                base_transform=RigidTransform.from_dict(d.get("base_transform", {})),
                grasp_transform=RigidTransform.from_dict(d.get("grasp_transform", {})),
                q_min=d["q_min"],
                q_max=d["q_max"],
                qd_max=d["qd_max"],
                qdd_max=d["qdd_max"],
            )
        except KeyError as exc:
            raise ModelError(f"arm entry missing field {exc}") from None

    def to_dict(self) -> dict:
        return {
            "base_transform": self.base_transform.to_dict(),
            "rows": [r.to_dict() for r in self.rows],
            "grasp_transform": self.grasp_transform.to_dict(),
            "q_min": self.q_min.tolist(),
            "q_max": self.q_max.tolist(),
            "qd_max": self.qd_max.tolist(),
            "qdd_max": self.qdd_max.tolist(),
        }


def grasp_point_in_catcher(arm: ArmModel) -> np.ndarray:
    """Origin of the end-effector frame expressed in the catcher frame."""
    return arm.grasp_transform.inverse().translation


@dataclass(frozen=True, eq=False)
class SystemModel:
    left: ArmModel
    right: ArmModel
    d_nom: float
    name: str = "dual-arm"
    home_q: np.ndarray | None = None

    def __post_init__(self):
        if not self.d_nom > 0:
            raise ModelError("d_nom must be positive")
        d = np.linalg.norm(grasp_point_in_catcher(self.left) - grasp_point_in_catcher(self.right))
        if abs(d - self.d_nom) > 1e-9:
            raise ModelError(f"d_nom={self.d_nom} inconsistent with grasp transforms (distance {d:.12f})")
        if self.home_q is not None:
            home = _frozen(self.home_q)
            if home.shape != (2 * N_JOINTS,):
                raise ModelError("home q must have 14 entries")
            object.__setattr__(self, "home_q", home)

    def arm(self, side: Side) -> ArmModel:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    @property
    def q_min(self) -> np.ndarray:
        return np.concatenate([self.left.q_min, self.right.q_min])

    @property
    def q_max(self) -> np.ndarray:
        return np.concatenate([self.left.q_max, self.right.q_max])

    @property
    def qd_max(self) -> np.ndarray:
        return np.concatenate([self.left.qd_max, self.right.qd_max])

    @property
    def qdd_max(self) -> np.ndarray:
        return np.concatenate([self.left.qdd_max, self.right.qdd_max])

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        conv = d.get("convention", "mdh")
        if conv != "mdh":
            raise ModelError(f"unsupported convention {conv!r} (only 'mdh')")
        try:
            arms = d["arms"]
            return cls(
                left=ArmModel.from_dict(arms["left"]),
                right=ArmModel.from_dict(arms["right"]),
                d_nom=float(d["d_nom"]),
                name=d.get("name", "dual-arm"),
                home_q=d.get("home", {}).get("q"),
            )
        except KeyError as exc:
            raise ModelError(f"model missing field {exc}") from None

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "convention": "mdh",
            "arms": {"left": self.left.to_dict(), "right": self.right.to_dict()},
            "d_nom": self.d_nom,
        }
        if self.home_q is not None:
            d["home"] = {"q": self.home_q.tolist()}
        return d


def load_model(path: str | Path) -> SystemModel:
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return SystemModel.from_dict(data)


DEFAULT_MODEL_PATH = Path(__file__).parent / "data" / "default_model.json"


def default_model() -> SystemModel:
    """Shipped dual-arm test fixture (not verified hardware parameters)."""
    return load_model(DEFAULT_MODEL_PATH)


@dataclass(frozen=True, eq=False)
class SystemState:
    """Stacked joint positions and velocities, left arm first."""

    q: np.ndarray
    qdot: np.ndarray = None

    def __post_init__(self):
        q = _frozen(self.q).reshape(-1)
        qd = np.zeros_like(q) if self.qdot is None else np.array(self.qdot, dtype=float).reshape(-1)
        if q.shape != (2 * N_JOINTS,) or qd.shape != (2 * N_JOINTS,):
            raise ValueError("state vectors must have 14 entries")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("state has non-finite entries")
        qd.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)

    @property
    def q_left(self) -> np.ndarray:
        return self.q[:N_JOINTS]

    @property
    def q_right(self) -> np.ndarray:
        return self.q[N_JOINTS:]

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "qdot": self.qdot.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemState":
        return cls(d["q"], d.get("qdot"))


# ---------------------------------------------------------------------------
# Batched chain evaluation
# ---------------------------------------------------------------------------


@dataclass
class ChainEval:
    """Result of a batched chain evaluation for ``B`` configurations."""

    origins: np.ndarray  # (B, 7, 3) joint frame origins
    axes: np.ndarray  # (B, 7, 3) joint z-axes
    position: np.ndarray  # (B, 3) evaluated frame position
    quat: np.ndarray  # (B, 4)
    rotation: np.ndarray  # (B, 3, 3)


def chain(arm: ArmModel, Q: np.ndarray, catcher: bool = False) -> ChainEval:
    """Evaluate the arm chain for configurations ``Q`` of shape (B, 7).

    With ``catcher=True`` the returned pose is that of the catcher frame.
    """
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(Q, dtype=float)))
    origins, axes, p, quat, R = chain_kernel(
        Q, arm._alpha, arm._a, arm._d, arm._theta, arm._prismatic, *arm._frames, catcher
    )
    return ChainEval(origins, axes, p, quat, R)


def pose_jacobian(ev: ChainEval, arm: ArmModel) -> np.ndarray:
    """(B, 7, 7) Jacobian of [position; quaternion] of the evaluated frame.

    Quaternion rows follow ``dq/dt = 0.5 * [0, omega] ⊗ q`` with omega the
    world-frame angular velocity.
    """
    return jacobian_kernel(ev.origins, ev.axes, ev.position, ev.quat, arm._prismatic)


# ---------------------------------------------------------------------------
# Scalar operations
# ---------------------------------------------------------------------------


def _as_pose(ev: ChainEval) -> Pose:
    return Pose(ev.position[0], UnitQuaternion.from_array(ev.quat[0]))


def fk_end_effector(model: ArmModel, q_arm: Sequence[float]) -> Pose:
    return _as_pose(chain(model, np.asarray(q_arm, dtype=float)[None, :]))


def fk_catcher(model: SystemModel, q_arm: Sequence[float], side: Side) -> Pose:
    arm = model.arm(side)
    return _as_pose(chain(arm, np.asarray(q_arm, dtype=float)[None, :], catcher=True))


def catcher_jacobian(model: SystemModel, q_arm: Sequence[float], side: Side) -> np.ndarray:
    arm = model.arm(side)
    ev = chain(arm, np.asarray(q_arm, dtype=float)[None, :], catcher=True)
    return pose_jacobian(ev, arm)[0]


def catcher_pose_vector(model: SystemModel, q_arm: Sequence[float], side: Side) -> np.ndarray:
    """Catcher pose as a 7-vector [p; w, x, y, z]."""
    ev = chain(model.arm(side), np.asarray(q_arm, dtype=float)[None, :], catcher=True)
    return np.concatenate([ev.position[0], ev.quat[0]])


def chain_residual_batch(model: SystemModel, Q_left: np.ndarray, Q_right: np.ndarray):
    """Residuals (B, 7) plus the evaluated chains of both arms."""
    ev_l = chain(model.left, Q_left, catcher=True)
    ev_r = chain(model.right, Q_right, catcher=True)
    res = np.concatenate([ev_l.position - ev_r.position, qresidual(ev_l.quat, ev_r.quat)], axis=-1)
    return res, ev_l, ev_r


def chain_residual(model: SystemModel, q_l: Sequence[float], q_r: Sequence[float]) -> np.ndarray:
    """Closed-chain residual: position difference (m) and aligned quaternion difference."""
    res, _, _ = chain_residual_batch(
        model, np.asarray(q_l, dtype=float)[None, :], np.asarray(q_r, dtype=float)[None, :]
    )
    return res[0]


def grasp_distance(model: SystemModel, q: Sequence[float]) -> float:
    """Distance between the two end-effector grasp points for stacked ``q``."""
    q = np.asarray(q, dtype=float)
    pl = chain(model.left, q[None, :N_JOINTS]).position[0]
    pr = chain(model.right, q[None, N_JOINTS:]).position[0]
    return float(np.linalg.norm(pl - pr))


def grasp_distance_batch(model: SystemModel, Q: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(Q)
    pl = chain(model.left, Q[:, :N_JOINTS]).position
    pr = chain(model.right, Q[:, N_JOINTS:]).position
    return np.linalg.norm(pl - pr, axis=-1)


def grasp_deviation_gain(model: SystemModel) -> float:
    """Bound ``kappa`` with ``|d - d_nom| <= kappa * ||chain residual||``.

    Position mismatch moves the grasp-point gap one-for-one; an aligned
    quaternion residual of norm ``r`` rotates one grasp point by at most
    ``~2r`` radians about the catcher origin, displacing it by ``2r`` times its
    lever arm.
    """
    lever = max(np.linalg.norm(grasp_point_in_catcher(model.left)), np.linalg.norm(grasp_point_in_catcher(model.right)))
    return float(1.0 + 2.0 * lever)


# ---------------------------------------------------------------------------
# Configuration helper for building chain-consistent states
# ---------------------------------------------------------------------------


def catcher_ik(
    model: SystemModel,
    side: Side,
    target: Pose,
    q_seed: Sequence[float],
    tol: float = 1e-13,
    max_iter: int = 200,
    damping: float = 1e-6,
) -> tuple[np.ndarray, bool]:
    """Damped Gauss-Newton placement of the catcher through one arm.

    Used to construct chain-consistent start states and fixtures; the planner
    itself never calls it.  Returns (q, success).
    """
    arm = model.arm(side)
    q = np.clip(np.asarray(q_seed, dtype=float).copy(), arm.q_min, arm.q_max)
    tq = target.orientation.as_array()
    for _ in range(max_iter):
        ev = chain(arm, q[None, :], catcher=True)
        r = np.concatenate([ev.position[0] - target.position, qresidual(ev.quat, tq[None, :])[0]])
        if np.linalg.norm(r) < tol:
            return q, True
        J = pose_jacobian(ev, arm)[0]
        step = np.linalg.solve(J.T @ J + damping * np.eye(N_JOINTS), J.T @ r)
        q = np.clip(q - step, arm.q_min, arm.q_max)
    ev = chain(arm, q[None, :], catcher=True)
    r = np.concatenate([ev.position[0] - target.position, qresidual(ev.quat, tq[None, :])[0]])
    return q, bool(np.linalg.norm(r) < tol)


def consistent_configuration(
    model: SystemModel, target: Pose, seed: Sequence[float], margin: float = 0.0
) -> np.ndarray | None:
    """Stacked 14-vector placing both arms on the catcher pose ``target``, or None.

    ``margin`` (rad) rejects solutions closer than that to a joint limit.
    """
    seed = np.asarray(seed, dtype=float)
    ql, ok_l = catcher_ik(model, "left", target, seed[:N_JOINTS])
    qr, ok_r = catcher_ik(model, "right", target, seed[N_JOINTS:])
    if not (ok_l and ok_r):
        return None
    q = np.concatenate([ql, qr])
    if np.any(q < model.q_min + margin) or np.any(q > model.q_max - margin):
        return None
    return q
