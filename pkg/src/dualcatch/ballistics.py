"""Kalman-filter tracking of a ballistic ball and mean-only flight prediction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

GRAVITY = (0.0, 0.0, -9.81)


class MeasurementError(ValueError):
    """A measurement was rejected (non-finite values signal a perception dropout)."""


@dataclass(frozen=True)
class FilterConfig:
    dt: float = 1.0 / 30.0
    gravity: tuple[float, float, float] = GRAVITY
    process_noise_accel: float = 1.0  # (m/s^2)^2, white-acceleration intensity
    measurement_noise: float = 1e-4  # m^2, i.e. sigma = 1 cm

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.process_noise_accel > 0 and self.measurement_noise > 0):
            raise ValueError("noise intensities must be positive")

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)


@dataclass(frozen=True, eq=False)
class BallEstimate:
    p: np.ndarray
    v: np.ndarray
    covariance: np.ndarray = field(default_factory=lambda: np.eye(6))
    t: float = 0.0

    def __post_init__(self):
        for name, shape in (("p", (3,)), ("v", (3,)), ("covariance", (6, 6))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])


class TrajectorySample(NamedTuple):
    t: float
    p: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    t: np.ndarray  # (K,)
    p: np.ndarray  # (K, 3)
    v: np.ndarray  # (K, 3)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> list[TrajectorySample]:
        return [TrajectorySample(float(t), p, v) for t, p, v in zip(self.t, self.p, self.v)]


def _transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    return F


def _process_noise(dt: float, q: float) -> np.ndarray:
    """Discrete white-acceleration (piecewise constant) process noise."""
    I = np.eye(3)
    return q * np.block(
        [[0.25 * dt**4 * I, 0.5 * dt**3 * I], [0.5 * dt**3 * I, dt**2 * I]]
    )


def kf_predict(est: BallEstimate, cfg: FilterConfig, dt: float | None = None) -> BallEstimate:
    """Propagate the estimate by ``dt`` (defaults to ``cfg.dt``)."""
    dt = cfg.dt if dt is None else float(dt)
    g = cfg.g
    p = est.p + est.v * dt + 0.5 * g * dt * dt
    v = est.v + g * dt
    F = _transition(dt)
    P = F @ est.covariance @ F.T + _process_noise(dt, cfg.process_noise_accel)
    return BallEstimate(p, v, 0.5 * (P + P.T), est.t + dt)


def kf_update(est: BallEstimate, z: Sequence[float], cfg: FilterConfig) -> BallEstimate:
    """Position-measurement correction (Joseph form)."""
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise MeasurementError(f"non-finite measurement {z.tolist()}")
    H = np.hstack([np.eye(3), np.zeros((3, 3))])
    P = est.covariance
    S = H @ P @ H.T + cfg.measurement_noise * np.eye(3)
    K = np.linalg.solve(S, H @ P).T
    x = est.state + K @ (z - est.p)
    IKH = np.eye(6) - K @ H
    P = IKH @ P @ IKH.T + cfg.measurement_noise * K @ K.T
    return BallEstimate(x[:3], x[3:], 0.5 * (P + P.T), est.t)


def propagate(
    est: BallEstimate,
    horizon_s: float,
    dt_pred: float,
    gravity: Sequence[float] = GRAVITY,
    floor: float | None = None,
) -> PredictedTrajectory:
    """Noise-free forward rollout of ``ceil(horizon_s / dt_pred)`` samples after ``est.t``.

    The rollout stops early at the first sample whose height falls below
    ``floor``.
    """
    if not (horizon_s > 0 and dt_pred > 0):
        raise ValueError("horizon_s and dt_pred must be positive")
    n = int(math.ceil(horizon_s / dt_pred - 1e-9))
    g = np.asarray(gravity, dtype=float)
    p, v = est.p.copy(), est.v.copy()
    ts, ps, vs = [], [], []
    for k in range(1, n + 1):
        p = p + v * dt_pred + 0.5 * g * dt_pred * dt_pred
        v = v + g * dt_pred
        if floor is not None and p[2] < floor:
            break
        ts.append(est.t + k * dt_pred)
        ps.append(p)
        vs.append(v)
    return PredictedTrajectory(np.array(ts), np.array(ps).reshape(-1, 3), np.array(vs).reshape(-1, 3))


class BallTracker:
    """Stateful filter: two-point initialization, then predict/update per measurement."""

    def __init__(self, cfg: FilterConfig | None = None):
        self.cfg = cfg or FilterConfig()
        self.estimate: BallEstimate | None = None
        self._first: tuple[float, np.ndarray] | None = None
        self.n_updates = 0

    @property
    def ready(self) -> bool:
        return self.estimate is not None

    def ingest(self, t: float, z: Sequence[float]) -> BallEstimate | None:
        """Feed one timestamped position; returns the current estimate (None until initialized).

        Non-finite measurements are skipped.
        """
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            return self.estimate
        cfg = self.cfg
        if self.estimate is None:
            if self._first is None:
                self._first = (t, z)
                return None
            t0, z0 = self._first
            dt = t - t0
            if dt <= 0:
                self._first = (t, z)
                return None
            # exact for drag-free flight: z - z0 = v(t)*dt - g*dt^2/2
            v = (z - z0) / dt + 0.5 * cfg.g * dt
            r = cfg.measurement_noise
            P = np.zeros((6, 6))
            P[:3, :3] = r * np.eye(3)
            P[:3, 3:] = P[3:, :3] = (r / dt) * np.eye(3)
            P[3:, 3:] = (2.0 * r / dt**2) * np.eye(3)
            self.estimate = BallEstimate(z, v, P, t)
            self.n_updates = 2
            return self.estimate
        dt = t - self.estimate.t
        est = kf_predict(self.estimate, cfg, dt) if dt > 0 else self.estimate
        self.estimate = kf_update(est, z, cfg)
        self.n_updates += 1
        return self.estimate

    def predict_to(self, t: float) -> BallEstimate | None:
        if self.estimate is None:
            return None
        dt = t - self.estimate.t
        return kf_predict(self.estimate, self.cfg, dt) if dt > 0 else self.estimate


# ---------------------------------------------------------------------------
# Measurement log replay (CSV: t,px,py,pz)
# ---------------------------------------------------------------------------


def write_measurements(path: str | Path, rows: Iterable[tuple[float, Sequence[float]]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "px", "py", "pz"])
        for t, p in rows:
            w.writerow([repr(float(t))] + [repr(float(c)) for c in p])


def read_measurements(path: str | Path) -> list[tuple[float, np.ndarray]]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append((float(row["t"]), np.array([float(row["px"]), float(row["py"]), float(row["pz"])])))
    return out


def ballistic_state(p0: Sequence[float], v0: Sequence[float], t: float, gravity: Sequence[float] = GRAVITY):
    """Closed-form drag-free position and velocity after ``t`` seconds."""
    p0, v0, g = (np.asarray(x, dtype=float) for x in (p0, v0, gravity))
    return p0 + v0 * t + 0.5 * g * t * t, v0 + g * t
