"""Bound-constrained NLP solver with nonlinear equality constraints.

Augmented-Lagrangian outer loop

    L_A(x; lam, rho) = f(x) + mu * p(x) + lam^T c(x) + rho/2 ||c(x)||^2

around a projected limited-memory BFGS inner loop with Armijo backtracking
along the projection arc (plus the approximate Wolfe test of Hager and
Zhang once value differences reach roundoff level).  ``p`` is an optional exterior penalty (state
bounds) whose weight ``mu`` is escalated together with ``rho``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

ObjectiveFn = Callable[[np.ndarray], tuple[float, np.ndarray]]

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_stationary"


@dataclass
class NlpSpec:
    """Problem callbacks.  ``constraints`` / ``constraint_vjp`` come as a pair."""

    n: int
    objective: ObjectiveFn
    lower: np.ndarray
    upper: np.ndarray
    constraints: Callable[[np.ndarray], np.ndarray] | None = None
    constraint_vjp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    penalty: ObjectiveFn | None = None
    # called at the start of every outer iteration; returning True signals that
    # the objective changed and the quasi-Newton memory is discarded
    refresh: Callable[[np.ndarray], bool | None] | None = None
    # (x, rho_rows, mu) -> SPD approximation of the augmented-Lagrangian Hessian,
    # used as the L-BFGS initial matrix; rho_rows is the effective per-row
    # weight rho * scale**2 on the original constraints
    hessian_approx: Callable[[np.ndarray, np.ndarray, float], np.ndarray] | None = None
    # positive row scaling applied to the constraints inside the augmented
    # Lagrangian; violation tests and reported multipliers use original units
    constraint_scale: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")
        if (self.constraints is None) != (self.constraint_vjp is None):
            raise ValueError("constraints and constraint_vjp must be given together")
        if self.constraint_scale is not None:
            self.constraint_scale = np.asarray(self.constraint_scale, dtype=float).ravel()
            if np.any(~np.isfinite(self.constraint_scale)) or np.any(self.constraint_scale <= 0):
                raise ValueError("constraint_scale must be finite and positive")


@dataclass
class SolverOptions:
    tol_kkt: float = 1e-6
    tol_eq: float = 1e-6
    max_outer: int = 20
    max_inner: int = 200
    rho0: float = 10.0
    rho_factor: float = 10.0
    decrease_factor: float = 0.25
    rho_max: float = 1e9
    penalty0: float = 1e3
    penalty_max: float = 1e9
    tol_penalty: float = 1e-4  # sqrt of the penalty value tolerated before mu escalates
    memory: int = 10
    armijo: float = 1e-4
    f_noise: float = 1e-12  # relative objective noise level for approximate Wolfe acceptance
    max_backtrack: int = 40
    record_trace: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SolveReport:
    status: str
    iterations: int
    outer_iterations: int
    objective: float
    max_violation: float
    kkt_residual: float
    wall_time: float
    multipliers: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    rho: float = 0.0
    penalty_weight: float = 0.0
    penalty_value: float = 0.0
    evaluations: int = 0
    trace: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "objective": self.objective,
            "max_violation": self.max_violation,
            "kkt_residual": self.kkt_residual,
            "evaluations": self.evaluations,
        }


class _AugLag:
    """Augmented-Lagrangian value and gradient for fixed (lam, rho, mu).

    ``lam`` belongs to the scaled constraints ``w * c``.
    """

    def __init__(self, spec: NlpSpec, w: np.ndarray):
        self.spec = spec
        self.w = w
        self.lam = None
        self.rho = 0.0
        self.mu = 0.0
        self.evals = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self.evals += 1
        spec = self.spec
        f, g = spec.objective(x)
        L = f
        g = np.array(g, dtype=float, copy=True)
        if spec.penalty is not None and self.mu > 0:
            p, gp = spec.penalty(x)
            L += self.mu * p
            g += self.mu * gp
        if spec.constraints is not None:
            c = self.w * spec.constraints(x)
            y = self.lam + self.rho * c
            L += float(self.lam @ c) + 0.5 * self.rho * float(c @ c)
            g += spec.constraint_vjp(x, self.w * y)
        return float(L), g


class _Preconditioner:
    """Initial inverse-Hessian for the two-loop recursion, restricted to free variables."""

    def __init__(self, H: np.ndarray | None):
        self.H = H
        self._free = None
        self._fac = None

    def apply(self, q: np.ndarray, free: np.ndarray, gamma: float) -> np.ndarray:
        if self.H is None:
            return gamma * q
        if self._free is None or not np.array_equal(free, self._free):
            Hf = self.H[np.ix_(free, free)]
            shift = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(Hf))))) if Hf.size else 0.0
            self._fac = cho_factor(Hf + shift * np.eye(Hf.shape[0]))
            self._free = free.copy()
        out = np.zeros_like(q)
        if np.any(free):
            out[free] = cho_solve(self._fac, q[free])
        return out


def _projected_gradient(x, g, lo, hi) -> np.ndarray:
    return np.clip(x - g, lo, hi) - x


def _lbfgs_direction(g: np.ndarray, S: list, Y: list, free: np.ndarray, pre: _Preconditioner) -> np.ndarray:
    q = np.where(free, g, 0.0)
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        s_f, y_f = np.where(free, s, 0.0), np.where(free, y, 0.0)
        sy = float(s_f @ y_f)
        if sy <= 1e-16:
            alphas.append(None)
            continue
        a = float(s_f @ q) / sy
        q = q - a * y_f
        alphas.append((a, sy, s_f, y_f))
    if S:
        s, y = S[-1], Y[-1]
        gamma = float(s @ y) / float(y @ y)
    else:
        gamma = 1.0 / max(1.0, float(np.max(np.abs(g))))
    r = pre.apply(q, free, gamma)
    for item in reversed(alphas):
        if item is None:
            continue
        a, sy, s_f, y_f = item
        b = float(y_f @ r) / sy
        r = r + (a - b) * s_f
    return -np.where(free, r, 0.0)


def _inner(fun, x, lo, hi, tol, opts: SolverOptions, memory, trace, outer, pre):
    """Projected L-BFGS; returns (x, f, g, iterations, stalled)."""
    S, Y = memory
    f, g = fun(x)
    it = 0
    stalled = False
    while it < opts.max_inner:
        pg = _projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg)) <= tol:
            break
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        d = _lbfgs_direction(g, S, Y, free, pre)
        if not float(g @ d) < 0.0:
            S.clear()
            Y.clear()
            d = _lbfgs_direction(g, S, Y, free, pre)
        alpha = 1.0
        accepted = False
        # value changes below this are roundoff; near the optimum the
        # approximate Wolfe test decides from the directional derivative
        f_noise = opts.f_noise * max(1.0, abs(f))
        for _ in range(opts.max_backtrack):
            x_new = np.clip(x + alpha * d, lo, hi)
            step = x_new - x
            f_new, g_new = fun(x_new)
            slope = float(g @ step)
            if f_new <= f + opts.armijo * slope:
                accepted = True
                break
            if f_new <= f + f_noise and slope < 0 and float(g_new @ step) <= (2.0 * opts.armijo - 1.0) * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if S:
                S.clear()
                Y.clear()
                continue
            stalled = True
            break
        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(y)) and sy > 0:
            S.append(step)
            Y.append(y)
            if len(S) > opts.memory:
                S.pop(0)
                Y.pop(0)
        x, f, g = x_new, f_new, g_new
        it += 1
        if trace is not None:
            trace.append((outer, it, f))
    return x, f, g, it, stalled


def solve(
    spec: NlpSpec,
    x_init: np.ndarray,
    opts: SolverOptions | None = None,
    multipliers: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Minimize ``spec.objective`` subject to bounds and ``constraints(x) = 0``.

    ``multipliers`` optionally seeds the equality multipliers (default zero).
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    lo, hi = spec.lower, spec.upper
    x = np.clip(np.asarray(x_init, dtype=float).reshape(spec.n), lo, hi)
    has_c = spec.constraints is not None
    m = len(spec.constraints(x)) if has_c else 0
    w = np.ones(m) if spec.constraint_scale is None else spec.constraint_scale
    if len(w) != m:
        raise ValueError(f"constraint_scale has {len(w)} entries for {m} constraints")
    al = _AugLag(spec, w)
    al.lam = np.zeros(m) if multipliers is None else np.array(multipliers, dtype=float).reshape(m) / w
    al.rho = opts.rho0 if has_c else 0.0
    al.mu = opts.penalty0 if spec.penalty is not None else 0.0
    trace = [] if opts.record_trace else None

    memory = ([], [])
    total_it = 0
    status = MAX_ITER
    omega = max(opts.tol_kkt, 1e-3)
    prev_viol = np.inf
    viol = 0.0
    kkt = np.inf
    outer = 0
    f_obj = np.nan
    for outer in range(1, opts.max_outer + 1):
        if spec.refresh is not None and spec.refresh(x):
            memory[0].clear()
            memory[1].clear()
        pre = _Preconditioner(spec.hessian_approx(x, al.rho * w * w, al.mu) if spec.hessian_approx else None)
        x, L, g, it, stalled = _inner(al, x, lo, hi, omega, opts, memory, trace, outer, pre)
        total_it += it
        f_obj = float(spec.objective(x)[0])
        c = spec.constraints(x) if has_c else np.zeros(0)
        viol = float(np.max(np.abs(c))) if m else 0.0
        # g is the gradient of L_A, i.e. of the Lagrangian at lam + rho*c
        kkt = float(np.max(np.abs(_projected_gradient(x, g, lo, hi)))) if spec.n else 0.0
        pen_ok = True
        if spec.penalty is not None:
            pen_val = spec.penalty(x)[0]
            pen_ok = np.sqrt(pen_val) <= opts.tol_penalty
        if viol <= opts.tol_eq and kkt <= opts.tol_kkt and omega <= opts.tol_kkt:
            status = CONVERGED
            if has_c:
                al.lam = al.lam + al.rho * w * c
            break
        if stalled and kkt > omega and viol <= opts.tol_eq and pen_ok:
            # line search cannot make progress on a feasible point
            status = MAX_ITER
            break
        reset = False
        if has_c:
            al.lam = al.lam + al.rho * w * c
            if viol > opts.tol_eq and viol > opts.decrease_factor * prev_viol:
                if al.rho >= opts.rho_max:
                    status = INFEASIBLE
                    break
                al.rho *= opts.rho_factor
                reset = True
            prev_viol = viol
        if not pen_ok and al.mu < opts.penalty_max:
            al.mu *= opts.rho_factor
            reset = True
        if reset:
            memory[0].clear()
            memory[1].clear()
        omega = max(opts.tol_kkt, 0.1 * omega)

    pen_val = float(spec.penalty(x)[0]) if spec.penalty is not None else 0.0
    report = SolveReport(
        status=status,
        iterations=total_it,
        outer_iterations=outer,
        objective=f_obj,
        max_violation=viol,
        kkt_residual=kkt,
        wall_time=time.perf_counter() - t0,
        multipliers=al.lam * w,
        rho=al.rho,
        penalty_weight=al.mu,
        penalty_value=pen_val,
        evaluations=al.evals,
        trace=trace or [],
    )
    return x, report


def warm_start_shift(prev_u: np.ndarray | None, N: int | None = None, n_u: int = 14) -> np.ndarray:
    """Drop the first input and repeat the last; zeros without a previous plan."""
    if prev_u is None:
        if N is None:
            raise ValueError("N is required when there is no previous plan")
        return np.zeros((N, n_u))
    prev_u = np.asarray(prev_u, dtype=float)
    return np.concatenate([prev_u[1:], prev_u[-1:]], axis=0)
