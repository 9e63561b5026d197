"""Compiled inner loops for the batched arm chain and its pose Jacobian."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _qmul(a, b):
    return np.array(
        (
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        )
    )


@njit(cache=True)
def chain_kernel(Q, alpha, a, d, theta, prismatic, base_R, base_p, base_q, grasp_R, grasp_p, grasp_q, catcher):
    """Modified-DH chain for each row of ``Q`` (B, n).

    Returns joint origins and z-axes (B, n, 3), and the final frame's
    position (B, 3), quaternion (B, 4) and rotation (B, 3, 3).
    """
    B, n = Q.shape
    origins = np.empty((B, n, 3))
    axes = np.empty((B, n, 3))
    pos = np.empty((B, 3))
    quat = np.empty((B, 4))
    rot = np.empty((B, 3, 3))
    row = np.empty((3, 3))
    for b in range(B):
        R = base_R.copy()
        p = base_p.copy()
        q = base_q.copy()
        for i in range(n):
            if prismatic[i]:
                th = theta[i]
                di = d[i] + Q[b, i]
            else:
                th = Q[b, i] + theta[i]
                di = d[i]
            ca, sa = math.cos(alpha[i]), math.sin(alpha[i])
            ct, st = math.cos(th), math.sin(th)
            t0, t1, t2 = a[i], -sa * di, ca * di
            for r in range(3):
                p[r] += R[r, 0] * t0 + R[r, 1] * t1 + R[r, 2] * t2
            row[0, 0], row[0, 1], row[0, 2] = ct, -st, 0.0
            row[1, 0], row[1, 1], row[1, 2] = ca * st, ca * ct, -sa
            row[2, 0], row[2, 1], row[2, 2] = sa * st, sa * ct, ca
            R = R @ row
            ca2, sa2 = math.cos(0.5 * alpha[i]), math.sin(0.5 * alpha[i])
            ct2, st2 = math.cos(0.5 * th), math.sin(0.5 * th)
            q = _qmul(q, np.array((ca2 * ct2, sa2 * ct2, -sa2 * st2, ca2 * st2)))
            for r in range(3):
                origins[b, i, r] = p[r]
                axes[b, i, r] = R[r, 2]
        if catcher:
            for r in range(3):
                p[r] += R[r, 0] * grasp_p[0] + R[r, 1] * grasp_p[1] + R[r, 2] * grasp_p[2]
            q = _qmul(q, grasp_q)
            R = R @ grasp_R
        nq = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        pos[b] = p
        quat[b] = q / nq
        rot[b] = R
    return origins, axes, pos, quat, rot


@njit(cache=True)
def jacobian_kernel(origins, axes, pos, quat, prismatic):
    """(B, 7, n) Jacobian of [position; quaternion]; quaternion rows from ``0.5 [0, w] ⊗ q``."""
    B, n, _ = origins.shape
    J = np.zeros((B, 7, n))
    for b in range(B):
        s, vx, vy, vz = quat[b, 0], quat[b, 1], quat[b, 2], quat[b, 3]
        for i in range(n):
            zx, zy, zz = axes[b, i, 0], axes[b, i, 1], axes[b, i, 2]
            if prismatic[i]:
                J[b, 0, i], J[b, 1, i], J[b, 2, i] = zx, zy, zz
                continue
            rx = pos[b, 0] - origins[b, i, 0]
            ry = pos[b, 1] - origins[b, i, 1]
            rz = pos[b, 2] - origins[b, i, 2]
            J[b, 0, i] = zy * rz - zz * ry
            J[b, 1, i] = zz * rx - zx * rz
            J[b, 2, i] = zx * ry - zy * rx
            J[b, 3, i] = -0.5 * (zx * vx + zy * vy + zz * vz)
            J[b, 4, i] = 0.5 * (s * zx + zy * vz - zz * vy)
            J[b, 5, i] = 0.5 * (s * zy + zz * vx - zx * vz)
            J[b, 6, i] = 0.5 * (s * zz + zx * vy - zy * vx)
    return J
