"""Direct banded LU baseline and a classical BiCGSTAB with trace collection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from .exceptions import BreakdownError, SingularMatrixError, ValidationError
from .stencil import BandedSystem

PIVOT_RTOL = 1e-14
BREAKDOWN_ATOL = 1e-30


@dataclass(frozen=True)
class BandedFactorization:
    """Partially pivoted LU factors of a :class:`BandedSystem` (LAPACK ``gbtrf`` layout)."""

    lu: np.ndarray
    piv: np.ndarray
    kl: int
    ku: int
    n: int


def lu_factor(system: BandedSystem) -> BandedFactorization:
    ab = system.to_lapack()
    H, n = system.H, system.size
    scale = max(float(np.max(np.abs(b))) for b in system.bands.values())
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")
    lu, piv, info = lapack.dgbtrf(ab, H, H, overwrite_ab=True)
    if info < 0:
        raise ValueError(f"dgbtrf: illegal argument {-info}")
    # pivots of U sit on row kl + ku of the band layout
    pivots = np.abs(lu[2 * H, :])
    if info > 0 or pivots.min() < PIVOT_RTOL * scale:
        k = int(np.argmin(pivots))
        raise SingularMatrixError(f"pivot {k} has magnitude {pivots[k]:.3e} (scale {scale:.3e})")
    return BandedFactorization(lu=lu, piv=piv, kl=H, ku=H, n=n)


def lu_solve(fact: BandedFactorization, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (fact.n,):
        raise ValidationError(f"rhs length {b.shape} does not match factorization size {fact.n}")
    x, info = lapack.dgbtrs(fact.lu, fact.kl, fact.ku, b, fact.piv)
    if info != 0:
        raise ValueError(f"dgbtrs: illegal argument {-info}")
    return x


@dataclass
class SolveStats:
    """Outcome of one linear solve.

    ``trace`` holds ``r0`` followed by ``p_k, r_k`` for every iteration, in
    generation order, when trace collection was requested.
    """

    iterations: int = 0
    final_residual: float = 0.0
    wall_time: float = 0.0
    converged: bool = True
    trace: list = field(default_factory=list, repr=False)
    warm_start: bool = False
    fallback: bool = False
    method: str = "bicgstab"

    def summary(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "warm_start": self.warm_start,
            "fallback": self.fallback,
        }


def bicgstab(
    A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
    collect_trace: bool = False,
) -> tuple[np.ndarray, SolveStats]:
    """Solve ``A x = b`` with unpreconditioned BiCGSTAB (van der Vorst, 1992).

    ``A`` is any callable computing a matrix-vector product.  Convergence is
    ``||b - A x|| <= tol * ||b||``, confirmed with an explicit residual; if the
    recursively updated residual has drifted the iteration restarts from the
    current iterate.  Hitting ``max_iter`` is reported via
    ``stats.converged = False`` and returns the best iterate seen.

    Raises :class:`BreakdownError` when ``rho``, ``r_hat . v`` or ``omega`` vanishes.
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValidationError(f"x0 length {x.shape} does not match rhs length {n}")
    stats = SolveStats(warm_start=x0 is not None and bool(np.any(x)))
    trace = stats.trace

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        stats.wall_time = time.perf_counter() - start
        return np.zeros(n), stats
    threshold = tol * bnorm

    r = b - A(x)
    rnorm = np.linalg.norm(r)
    best_x, best_norm = x.copy(), rnorm
    if collect_trace:
        trace.append(r.copy())

    it = 0
    while rnorm > threshold and it < max_iter:
        # (re)start: shadow residual equals the current residual
        r_hat = r.copy()
        rho_old = alpha = omega = 1.0
        p = np.zeros(n)
        v = np.zeros(n)
        while it < max_iter:
            rho = r_hat @ r
            if abs(rho) < BREAKDOWN_ATOL:
                _finish(stats, it, best_norm / bnorm, False, start)
                raise BreakdownError(f"rho = {rho:.3e} at iteration {it}", x=best_x, stats=stats)
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
            v = A(p)
            sigma = r_hat @ v
            if abs(sigma) < BREAKDOWN_ATOL:
                _finish(stats, it, best_norm / bnorm, False, start)
                raise BreakdownError(f"r_hat . v = {sigma:.3e} at iteration {it}", x=best_x, stats=stats)
            alpha = rho / sigma
            s = r - alpha * v
            it += 1
            if collect_trace:
                trace.append(p.copy())
            snorm = np.linalg.norm(s)
            if snorm <= threshold:
                x = x + alpha * p
                r = s
                rnorm = snorm
                break
            t = A(s)
            tt = t @ t
            omega = (t @ s) / tt if tt > 0 else 0.0
            if abs(omega) < BREAKDOWN_ATOL:
                x = x + alpha * p
                cand = np.linalg.norm(b - A(x))
                if cand < best_norm:
                    best_x, best_norm = x, cand
                _finish(stats, it, best_norm / bnorm, False, start)
                raise BreakdownError(f"omega = {omega:.3e} at iteration {it}", x=best_x, stats=stats)
            x = x + alpha * p + omega * s
            r = s - omega * t
            rho_old = rho
            rnorm = np.linalg.norm(r)
            if collect_trace:
                trace.append(r.copy())
            if rnorm < best_norm:
                best_x, best_norm = x, rnorm
            if rnorm <= threshold:
                break
        # recursive residual says done; confirm against the true residual
        r = b - A(x)
        rnorm = np.linalg.norm(r)
        if rnorm < best_norm:
            best_x, best_norm = x, rnorm

    if rnorm <= threshold:
        best_x, best_norm = x, rnorm
    else:
        # best_norm may come from a recursive residual; report the true one
        best_norm = np.linalg.norm(b - A(best_x))
    _finish(stats, it, best_norm / bnorm, best_norm <= threshold, start)
    return best_x, stats


def _finish(stats, it, rel, converged, start):
    stats.iterations = it
    stats.final_residual = float(rel)
    stats.converged = bool(converged)
    stats.wall_time = time.perf_counter() - start
