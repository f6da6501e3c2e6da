"""Dense linear algebra and local optimisation kernels.

Cholesky factorisation is delegated to LAPACK through numpy; the jitter
policy, solves and the two optimisers are implemented here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (NonFiniteObjective, NonFiniteResidual, NotPositiveDefinite,
                     SingularNormalEquations)


def sym_matrix(a) -> np.ndarray:
    """Return a symmetric copy of ``a``; the lower triangle is authoritative."""
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return np.tril(a) + np.tril(a, -1).T


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    lower: np.ndarray
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def cholesky(a, max_jitter: float = 0.0) -> CholeskyFactor:
    """Factor ``a = L L^T``, adding diagonal jitter only if ``a`` is not positive definite.

    Jitter starts at 1e-10 times the mean diagonal and grows tenfold per retry
    until it would exceed ``max_jitter``.
    """
    if max_jitter < 0:
        raise ValueError("max_jitter must be >= 0")
    a = sym_matrix(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return CholeskyFactor(np.linalg.cholesky(a), 0.0)
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.mean(np.abs(np.diag(a)))) or 1.0
    jitter = 1e-10 * mean_diag
    eye = np.eye(a.shape[0])
    while jitter <= max_jitter:
        try:
            return CholeskyFactor(np.linalg.cholesky(a + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(f"matrix not positive definite with jitter up to {max_jitter:g}")


def solve_chol(f: CholeskyFactor, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` for a vector or a matrix of right-hand sides."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: factor is {f.n}x{f.n}, rhs has {b.shape[0]} rows")
    z = solve_triangular(f.lower, b, lower=True, check_finite=False)
    return solve_triangular(f.lower.T, z, lower=False, check_finite=False)


def log_det(f: CholeskyFactor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))


# -- damped least squares ------------------------------------------------------

@dataclass
class ConvergenceReport:
    converged: bool
    reason: str
    n_iter: int
    n_accepted: int
    lambda_init: float
    lambda_final: float
    nu: float
    sse_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged, "reason": self.reason, "n_iter": self.n_iter,
            "n_accepted": self.n_accepted, "lambda_init": self.lambda_init,
            "lambda_final": self.lambda_final, "nu": self.nu,
            "sse_history": list(self.sse_history),
        }


@dataclass
class LeastSquaresProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    x0: Sequence[float]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    xtol: float = 1e-12
    gtol: float = 1e-14
    max_iter: int = 200


def fd_jacobian(fun, x, f0=None):
    """Central finite-difference Jacobian, step max(1e-6, 1e-6*|x_i|)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_gradient(fun, x):
    return fd_jacobian(lambda z: np.atleast_1d(fun(z)), x)[0]


LAMBDA_INIT = 1e-3
NU = 10.0
LAMBDA_MAX = 1e16


def least_squares(p: LeastSquaresProblem) -> Tuple[np.ndarray, float, ConvergenceReport]:
    """Levenberg-Marquardt with Marquardt diagonal scaling and box clamping.

    A trial step is accepted only if it lowers the sum of squares, so the
    accepted SSE sequence is strictly decreasing.
    """
    x = np.array(p.x0, dtype=float)
    n = x.size
    lo = np.full(n, -np.inf) if p.lower is None else np.asarray(p.lower, dtype=float)
    hi = np.full(n, np.inf) if p.upper is None else np.asarray(p.upper, dtype=float)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("initial parameters outside bounds")

    r = np.asarray(p.residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("residual is not finite at the initial parameters")
    sse = float(r @ r)
    jac = p.jacobian if p.jacobian is not None else (lambda z: fd_jacobian(p.residual, z))

    lam = LAMBDA_INIT
    report = ConvergenceReport(False, "max_iter", 0, 0, LAMBDA_INIT, lam, NU, [sse])
    ever_solved = False
    for it in range(1, p.max_iter + 1):
        report.n_iter = it
        J = np.asarray(jac(x), dtype=float)
        g = J.T @ r
        if np.max(np.abs(g)) <= p.gtol:
            report.converged, report.reason = True, "gradient"
            break
        A = J.T @ J
        d = np.maximum(np.diag(A), 1e-300)
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                fac = cholesky(A + lam * np.diag(d))
            except NotPositiveDefinite:
                lam *= NU
                continue
            ever_solved = True
            step = -solve_chol(fac, g)
            x_new = np.clip(x + step, lo, hi)
            r_new = np.asarray(p.residual(x_new), dtype=float)
            sse_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if sse_new < sse:
                accepted = True
                break
            lam *= NU
        if not accepted:
            if not ever_solved:
                raise SingularNormalEquations("normal equations singular for every damping value")
            report.converged, report.reason = True, "no_improvement"
            break
        dx = x_new - x
        x, r, sse = x_new, r_new, sse_new
        lam = max(lam / NU, 1e-300)
        report.n_accepted += 1
        report.sse_history.append(sse)
        if sse == 0.0:
            report.converged, report.reason = True, "zero_residual"
            break
        if np.linalg.norm(dx) <= p.xtol * (np.linalg.norm(x) + p.xtol):
            report.converged, report.reason = True, "step"
            break
    report.lambda_final = lam
    return x, sse, report


# -- bounded maximisation --------------------------------------------------------

@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    n_iter: int
    start_index: int
    all_values: List[float] = field(default_factory=list)


def _projected_gradient(g, x, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g < 0)] = 0.0
    pg[(x >= hi) & (g > 0)] = 0.0
    return pg


def _ascend(objective, gradient, x, lo, hi, gtol, max_iter, ftol):
    """Projected ascent along a BFGS-scaled gradient with Armijo backtracking.

    Coordinates pinned at a bound with the gradient pointing outward are held
    fixed; the curvature estimate is reset whenever that active set changes.
    """
    n = x.size
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=float)
    H = np.eye(n) / max(1.0, float(np.max(np.abs(g))))
    active = np.zeros(n, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        pg = _projected_gradient(g, x, lo, hi)
        if np.max(np.abs(pg)) < gtol:
            break
        now_active = pg != g
        if np.any(now_active != active):
            H = np.eye(n) * float(np.mean(np.diag(H)))
            active = now_active
        free = ~active
        d = np.zeros(n)
        d[free] = H[np.ix_(free, free)] @ g[free]
        if float(g @ d) <= 0:
            H = np.eye(n) / max(1.0, float(np.max(np.abs(g))))
            d = pg / max(1.0, float(np.max(np.abs(g))))
        t = 1.0
        while True:
            x_new = np.clip(x + t * d, lo, hi)
            dx = x_new - x
            f_new = float(objective(x_new))
            if np.isfinite(f_new) and f_new >= f + 1e-4 * float(g @ dx):
                break
            t *= 0.5
            if t < 1e-14:
                return x, f, it
        g_new = np.asarray(gradient(x_new), dtype=float)
        # BFGS on -f: curvature pair (s, -dg) must have positive inner product
        y = g - g_new
        sy = float(dx @ y)
        if sy > 1e-12 * float(np.linalg.norm(dx) * np.linalg.norm(y)):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(dx, y)
            H = V @ H @ V.T + rho * np.outer(dx, dx)
        improvement = f_new - f
        x, f, g = x_new, f_new, g_new
        if improvement <= ftol * (1.0 + abs(f)):
            break
    return x, f, it


def maximize(objective: Callable[[np.ndarray], float], starts, lower, upper,
             gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             gtol: float = 1e-6, max_iter: int = 500, ftol: float = 1e-12) -> MaximizeResult:
    """Multi-start projected (quasi-Newton scaled) gradient ascent with
    backtracking line search.

    Returns the best local optimum over ``starts``. Ties keep the earliest start.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    grad = gradient if gradient is not None else (lambda z: fd_gradient(objective, z))
    best = None
    values = []
    for k, x0 in enumerate(starts):
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError(f"start {k} outside the box")
        f0 = float(objective(x0))
        if not math.isfinite(f0):
            raise NonFiniteObjective(f"objective is not finite at start {k}")
        x, f, it = _ascend(objective, grad, x0.copy(), lo, hi, gtol, max_iter, ftol)
        values.append(f)
        if best is None or f > best.value:
            best = MaximizeResult(x, f, it, k)
    if best is None:
        raise ValueError("at least one start point is required")
    best.all_values = values
    return best
