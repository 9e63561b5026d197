"""Interception target selection from a predicted ball flight."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ballistics import PredictedTrajectory, TrajectorySample
from .geometry import Pose, UnitQuaternion


@dataclass(frozen=True, eq=False)
class SafeZone:
    """Axis-aligned world-frame box of admissible interception points."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min_corner, dtype=float).reshape(3)
        hi = np.array(self.max_corner, dtype=float).reshape(3)
        if not np.all(lo < hi):
            raise ValueError("safe zone min corner must be below max corner")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, p: Sequence[float]) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def to_dict(self) -> dict:
        return {"min": self.min_corner.tolist(), "max": self.max_corner.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SafeZone":
        return cls(d["min"], d["max"])


@dataclass(frozen=True, eq=False)
class TargetPose:
    pose: Pose
    t_catch: float
    impact_velocity: np.ndarray

    def __post_init__(self):
        v = np.array(self.impact_velocity, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "impact_velocity", v)

    def to_dict(self) -> dict:
        return {**self.pose.to_dict(), "t_catch": self.t_catch, "impact_velocity": self.impact_velocity.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetPose":
        return cls(Pose.from_dict(d), float(d.get("t_catch", 0.0)), d.get("impact_velocity", [0.0, 0.0, 0.0]))


def filter_safe(traj: PredictedTrajectory | Sequence[TrajectorySample], zone: SafeZone) -> list[TrajectorySample]:
    samples = traj.samples if isinstance(traj, PredictedTrajectory) else list(traj)
    return [s for s in samples if zone.contains(s.p)]


def required_speed(sample: TrajectorySample, p_now: np.ndarray, t_now: float) -> float:
    return float(np.linalg.norm(np.asarray(sample.p) - p_now) / (sample.t - t_now))


def select_target(
    candidates: Sequence[TrajectorySample],
    catcher_now: Pose,
    t_now: float,
    orientation: UnitQuaternion | None = None,
    v_min_impact: float = 0.1,
) -> TargetPose | None:
    """Candidate needing the lowest average catcher speed; earliest time wins ties.

    The target orientation is built from the impact velocity; if that is
    degenerate, ``orientation`` (the previous target's) is kept, falling back
    to the catcher's current orientation.
    """
    cands = sorted((c for c in candidates if c.t > t_now), key=lambda c: c.t)
    if not cands:
        return None
    p_now = catcher_now.position
    best, best_speed = None, np.inf
    for c in cands:
        s = required_speed(c, p_now, t_now)
        if s < best_speed:
            best, best_speed = c, s
    try:
        ori = impact_orientation(best.v, v_min_impact=v_min_impact)
    except ValueError:
        ori = orientation if orientation is not None else catcher_now.orientation
    return TargetPose(Pose(best.p, ori), best.t, best.v)


def impact_orientation(
    v_catch: Sequence[float], opening_axis_world_up: bool = True, v_min_impact: float = 0.1
) -> UnitQuaternion:
    """Catcher orientation for an impact velocity.

    The catcher opening axis (catcher +z) is mapped to world +z and the
    lateral axis (catcher +x) to the horizontal projection of the reversed
    impact direction, i.e. facing the incoming ball.  Near-vertical impacts
    keep the lateral axis on world +x.
    """
    v = np.asarray(v_catch, dtype=float)
    speed = np.linalg.norm(v)
    if not speed > v_min_impact:
        raise ValueError(f"impact speed {speed:.3g} m/s below {v_min_impact} m/s")
    if not opening_axis_world_up:
        raise NotImplementedError("only the opening-up task constraint is supported")
    h = -v[:2] / speed
    if np.linalg.norm(h) < 1e-6:
        yaw = 0.0
    else:
        yaw = float(np.arctan2(h[1], h[0]))
    return UnitQuaternion.from_axis_angle([0.0, 0.0, 1.0], yaw)
