"""Cross-matrix Krylov projection: per-timestep bases harvested from a seed solve.

The seed image's BiCGSTAB trace is orthonormalized into a small basis ``V``
for each timestep, and ``V^T A_seed V`` is cached.  Target images with the
same timestep reuse that reduced operator to turn their right-hand side into
a warm-start guess ``V alpha`` before running BiCGSTAB on their own operator.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .exceptions import EmptyBasisError, ValidationError
from .solvers import SolveStats, bicgstab
from .stencil import StencilCoefficients, apply_operator

logger = logging.getLogger(__name__)

DISCARD_RTOL = 1e-12
PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class RecycleConfig:
    a_max: int = 20
    seed_cycle: int = 50
    target_tol: float = 1e-8
    target_max_iter: int = 1000

    def __post_init__(self):
        if self.a_max < 1:
            raise ValidationError(f"a_max must be >= 1, got {self.a_max}")
        if self.seed_cycle < 2:
            raise ValidationError(f"seed_cycle must be >= 2, got {self.seed_cycle}")
        if not self.target_tol > 0 or self.target_max_iter < 1:
            raise ValidationError("target_tol must be positive and target_max_iter >= 1")


@dataclass(frozen=True)
class KrylovBasis:
    """Orthonormal columns for one timestep plus the cached reduced seed operator."""

    timestep: int
    columns: np.ndarray
    reduced_operator: Optional[np.ndarray] = None
    source_image_id: str = ""
    reduced_lu: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.reduced_operator is not None and self.reduced_lu is None:
            object.__setattr__(self, "reduced_lu", factor_dense(self.reduced_operator))

    @property
    def a(self) -> int:
        return self.columns.shape[1]

    @property
    def size(self) -> int:
        return self.columns.shape[0]

    def orthonormality_error(self) -> float:
        V = self.columns
        return float(np.max(np.abs(V.T @ V - np.eye(self.a))))


def harvest_basis(trace: Sequence[np.ndarray], a_max: int = 20, timestep: int = 0, source_image_id: str = "") -> KrylovBasis:
    """Orthonormalize solver trace vectors in order with modified Gram-Schmidt.

    Each candidate is orthogonalized twice against the accepted columns; it is
    dropped when what remains is below ``1e-12`` of its original norm.
    Collection stops once ``a_max`` columns are accepted.
    """
    if len(trace) == 0:
        raise EmptyBasisError("empty trace")
    if a_max < 1:
        raise ValidationError(f"a_max must be >= 1, got {a_max}")
    n = len(trace[0])
    cols: list[np.ndarray] = []
    for vec in trace:
        w = np.array(vec, dtype=np.float64)
        if w.shape != (n,):
            raise ValidationError("trace vectors must share one length")
        norm0 = np.linalg.norm(w)
        if norm0 == 0.0 or not np.isfinite(norm0):
            continue
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        norm = np.linalg.norm(w)
        if norm < DISCARD_RTOL * norm0:
            continue
        cols.append(w / norm)
        if len(cols) == a_max:
            break
    if not cols:
        raise EmptyBasisError("all trace vectors were degenerate")
    return KrylovBasis(timestep=timestep, columns=np.column_stack(cols), source_image_id=source_image_id)


def reduced_operator(basis: KrylovBasis, coeffs: StencilCoefficients) -> np.ndarray:
    """``V^T A V`` via ``a`` matrix-free products."""
    V = basis.columns
    if V.shape[0] != coeffs.size:
        raise ValidationError(f"basis length {V.shape[0]} does not match system size {coeffs.size}")
    AV = np.column_stack([apply_operator(coeffs, V[:, k]) for k in range(basis.a)])
    return V.T @ AV


def cache_reduced_operator(basis: KrylovBasis, seed_coeffs: StencilCoefficients) -> KrylovBasis:
    if basis.timestep and seed_coeffs.timestep and basis.timestep != seed_coeffs.timestep:
        raise ValidationError(f"basis timestep {basis.timestep} != coefficient timestep {seed_coeffs.timestep}")
    return replace(basis, reduced_operator=reduced_operator(basis, seed_coeffs))


def factor_dense(M: np.ndarray):
    """Partially pivoted LU of a small dense matrix; ``None`` if a pivot is tiny."""
    M = np.asarray(M, dtype=np.float64)
    scale = np.max(np.abs(M)) if M.size else 0.0
    if scale == 0.0:
        return None
    lu, piv, info = lapack.dgetrf(M)
    if info > 0 or np.min(np.abs(np.diag(lu))) < PIVOT_RTOL * scale:
        return None
    return lu, piv


def dense_solve(M: np.ndarray, rhs: np.ndarray, factors=None) -> Optional[np.ndarray]:
    """Solve ``M x = rhs`` by pivoted elimination; ``None`` when ``M`` is singular."""
    f = factor_dense(M) if factors is None else factors
    if f is None:
        return None
    x, info = lapack.dgetrs(f[0], f[1], np.asarray(rhs, dtype=np.float64))
    return x


def reduced_solve(basis: KrylovBasis, b_target: np.ndarray) -> Optional[np.ndarray]:
    """Coefficients ``alpha`` of the projected guess, or ``None`` when singular."""
    if basis.reduced_operator is None:
        raise ValidationError("basis has no cached reduced operator")
    b_target = np.asarray(b_target, dtype=np.float64)
    if b_target.shape != (basis.size,):
        raise ValidationError(f"rhs length {b_target.shape} does not match basis length {basis.size}")
    if basis.reduced_lu is None:
        return None
    return dense_solve(basis.reduced_operator, basis.columns.T @ b_target, basis.reduced_lu)


def project_and_guess(basis: KrylovBasis, b_target: np.ndarray) -> np.ndarray:
    """Initial guess ``V (V^T A_seed V)^{-1} V^T b``; zeros if the reduced system is singular."""
    alpha = reduced_solve(basis, b_target)
    if alpha is None:
        logger.warning("singular reduced operator at timestep %d; using a zero guess", basis.timestep)
        return np.zeros(basis.size)
    return basis.columns @ alpha


def solve_target(
    coeffs_target: StencilCoefficients,
    b_target: np.ndarray,
    basis: Optional[KrylovBasis],
    config: RecycleConfig,
    x_base: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, SolveStats]:
    """Warm-started BiCGSTAB on the target's own operator.

    Without ``x_base`` the guess is the projection of ``b_target``.  With it,
    the projection is applied to the residual of ``x_base`` and added on,
    which is the same Galerkin step taken around a nonzero starting point.
    A missing or singular basis falls back to ``x_base`` (or zero).
    """
    A = lambda v: apply_operator(coeffs_target, v)
    b_target = np.asarray(b_target, dtype=np.float64)
    fallback = basis is None
    x0 = None if x_base is None else np.asarray(x_base, dtype=np.float64)
    if basis is not None:
        rhs = b_target if x0 is None else b_target - A(x0)
        alpha = reduced_solve(basis, rhs)
        if alpha is None:
            fallback = True
            logger.warning("singular reduced operator at timestep %d; cold start", basis.timestep)
        else:
            guess = basis.columns @ alpha
            x0 = guess if x0 is None else x0 + guess
    x, stats = bicgstab(A, b_target, x0=x0, tol=config.target_tol, max_iter=config.target_max_iter)
    stats.method = "recycled"
    stats.fallback = fallback
    return x, stats


# --- persistence -------------------------------------------------------------

_MAGIC = b"KRYB"
_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def save_basis(path, basis: KrylovBasis) -> None:
    """Write the header, the columns (column-major) and the reduced operator."""
    if basis.reduced_operator is None:
        raise ValidationError("cache the reduced operator before saving a basis")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, basis.size, basis.a))
        fh.write(np.asarray(basis.columns, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(basis.reduced_operator, dtype="<f8").tobytes(order="F"))


def load_basis(path, timestep: int = 0, source_image_id: str = "") -> KrylovBasis:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated basis file")
    magic, version, n, a = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValidationError(f"{path}: not a version-{_VERSION} KRYB file")
    if len(data) != _HEADER.size + 8 * (n * a + a * a):
        raise ValidationError(f"{path}: payload size does not match header")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    cols = flat[: n * a].reshape((n, a), order="F")
    red = flat[n * a :].reshape((a, a), order="F")
    basis = KrylovBasis(timestep=timestep, columns=cols, reduced_operator=red, source_image_id=source_image_id)
    if basis.orthonormality_error() >= 1e-10:
        raise ValidationError(f"{path}: stored basis is not orthonormal")
    return basis
