"""Quaternion and rigid-transform algebra.

Quaternions are stored w-first, ``[w, x, y, z]``, and use the Hamilton
product.  The array helpers (``qmul``, ``qconj``, ...) broadcast over leading
axes so that the kinematics can evaluate whole horizons in one call; the
``UnitQuaternion`` / ``RigidTransform`` value types wrap them for scalar use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# ---------------------------------------------------------------------------
# Array helpers (broadcasting over leading axes, last axis = 4)
# ---------------------------------------------------------------------------


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b`` on arrays of shape (..., 4)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ),
        axis=-1,
    )


def qconj(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnormalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def qaxis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = np.sin(0.5 * angle)
    return np.array([np.cos(0.5 * angle), *(s * axis)])


def qto_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        (
            np.stack((1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)), -1),
            np.stack((2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)), -1),
            np.stack((2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)), -1),
        ),
        axis=-2,
    )


def qfrom_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) from a single 3x3 rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return qnormalize(q)


def qrotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors (..., 3) by unit quaternions (..., 4)."""
    return np.einsum("...ij,...j->...i", qto_matrix(q), v)


def qangle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations, invariant to the sign of either input."""
    dot = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def qresidual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hemisphere-aligned difference ``a - s*b`` with ``s = sign(<a, b>)``.

    ``s`` is taken as +1 when the inner product is exactly zero.
    """
    s = np.where(np.sum(a * b, axis=-1) < 0.0, -1.0, 1.0)
    return a - s[..., None] * b


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation as a unit quaternion, normalized on construction."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        v = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"cannot normalize quaternion {v.tolist()}")
        v = v / n
        for name, val in zip("wxyz", v):
            object.__setattr__(self, name, float(val))

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "UnitQuaternion":
        w, x, y, z = (float(c) for c in arr)
        return cls(w, x, y, z)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "UnitQuaternion":
        return cls.from_array(qaxis_angle(axis, angle))

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "UnitQuaternion":
        return cls.from_array(qfrom_matrix(R))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_list(self) -> list[float]:
        return [self.w, self.x, self.y, self.z]

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __neg__(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return quat_compose(self, other)

    def matrix(self) -> np.ndarray:
        return qto_matrix(self.as_array())

    def rotate(self, v: Sequence[float]) -> np.ndarray:
        return qrotate(self.as_array(), np.asarray(v, dtype=float))


def quat_compose(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product ``a ⊗ b``, renormalized."""
    return UnitQuaternion.from_array(qmul(a.as_array(), b.as_array()))


def quat_angle_error(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Geodesic angle in [0, pi] between two rotations."""
    return float(qangle(a.as_array(), b.as_array()))


def quat_cost_residual(a: UnitQuaternion, b: UnitQuaternion) -> np.ndarray:
    return qresidual(a.as_array(), b.as_array())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self · other`` (apply ``other`` first, expressed in ``self``'s frame)."""
        return RigidTransform(
            quat_compose(self.rotation, other.rotation),
            self.translation + self.rotation.rotate(other.translation),
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.conjugate()
        return RigidTransform(rinv, -rinv.rotate(self.translation))

    def apply(self, point: Sequence[float]) -> np.ndarray:
        return self.translation + self.rotation.rotate(point)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix()
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.to_list(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(UnitQuaternion.from_array(d.get("rotation", [1, 0, 0, 0])), d.get("translation", [0, 0, 0]))


@dataclass(frozen=True, eq=False)
class Pose:
    """Position (m) plus orientation; used for end-effector, catcher and target frames."""

    position: np.ndarray
    orientation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "position", p)

    def as_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position)

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "orientation": self.orientation.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(d["position"], UnitQuaternion.from_array(d.get("orientation", [1, 0, 0, 0])))
