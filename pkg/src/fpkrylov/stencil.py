"""Semi-explicit five-point stencil for the log-density equation.

Each outer iteration freezes one gradient factor of the quadratic term at the
previous iterate ``m_tilde``, giving a linear pentadiagonal system
``A m = b``.  Grid points outside the image are zero (zero padding): their
couplings are dropped from ``A`` and they contribute zero to every difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .grid import DiffusionParams, GridSpec, LogDensityField


def _shifted(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """``a`` sampled at index + step along ``axis`` with zeros outside."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, n), slice(0, n - step)
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def central_difference(a: np.ndarray, axis: int) -> np.ndarray:
    """``a[k+1] - a[k-1]`` along ``axis`` under zero padding (no division)."""
    return _shifted(a, axis, 1) - _shifted(a, axis, -1)


@dataclass(frozen=True)
class StencilCoefficients:
    """Per-pixel stencil weights of ``A`` for one timestep and outer iteration.

    north/south couple ``(i, j±1)``, east/west couple ``(i±1, j)``.
    """

    c_diag: np.ndarray
    c_north: np.ndarray
    c_south: np.ndarray
    c_east: np.ndarray
    c_west: np.ndarray
    timestep: int = 0
    outer_iter: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.c_diag.shape

    @property
    def size(self) -> int:
        return self.c_diag.size


def compute_coefficients(
    m_tilde: LogDensityField, params: DiffusionParams, spec: GridSpec, n: int, outer_iter: int = 0
) -> StencilCoefficients:
    """Stencil weights linearized around ``m_tilde`` at timestep ``n``."""
    m_tilde.check(spec)
    if not 1 <= n <= spec.T:
        raise ValidationError(f"timestep {n} outside 1..{spec.T}")
    g2 = params.g_at(n) ** 2
    h, dt = spec.h, spec.dt
    mt = m_tilde.values
    di = central_difference(mt, 0)
    dj = central_difference(mt, 1)

    base = -g2 / (2 * h * h)
    nonlin = g2 / (8 * h * h)
    f = params.drift_at(n, spec)
    fx = f[..., 0] / (2 * h) if f is not None else 0.0
    fy = f[..., 1] / (2 * h) if f is not None else 0.0

    c_diag = np.full(spec.shape, 1.0 / dt + 2.0 * g2 / (h * h))
    c_north = base + fy - nonlin * dj
    c_south = base - fy + nonlin * dj
    c_east = base + fx - nonlin * di
    c_west = base - fx + nonlin * di
    return StencilCoefficients(c_diag, c_north, c_south, c_east, c_west, timestep=n, outer_iter=outer_iter)


def assemble_rhs(m_prev: LogDensityField, params: DiffusionParams, spec: GridSpec, n: int) -> np.ndarray:
    """Right-hand side ``m^{n-1}/dt - div f^n`` as a flat vector."""
    m_prev.check(spec)
    b = m_prev.values * (1.0 / spec.dt)
    f = params.drift_at(n, spec)
    if f is not None:
        div = central_difference(f[..., 0], 0) + central_difference(f[..., 1], 1)
        b = b - div / (2 * spec.h)
    return np.ascontiguousarray(b).ravel()


def apply_operator(coeffs: StencilCoefficients, m: np.ndarray) -> np.ndarray:
    """Matrix-free ``A @ m`` for a flat vector ``m``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (coeffs.size,):
        raise ValidationError(f"vector length {m.shape} does not match system size {coeffs.size}")
    u = m.reshape(coeffs.shape)
    out = coeffs.c_diag * u
    out[:, :-1] += coeffs.c_north[:, :-1] * u[:, 1:]
    out[:, 1:] += coeffs.c_south[:, 1:] * u[:, :-1]
    out[:-1, :] += coeffs.c_east[:-1, :] * u[1:, :]
    out[1:, :] += coeffs.c_west[1:, :] * u[:-1, :]
    return out.ravel()


@dataclass(frozen=True)
class BandedSystem:
    """Five-diagonal storage of ``A`` plus its right-hand side.

    ``bands[o][k]`` holds ``A[k, k + o]`` for offsets ``o`` in
    ``(-H, -1, 0, 1, H)``; entries whose column would fall outside the matrix
    or wrap across a block boundary are zero.
    """

    H: int
    main: np.ndarray
    upper1: np.ndarray
    lower1: np.ndarray
    upperH: np.ndarray
    lowerH: np.ndarray
    rhs: np.ndarray

    @property
    def size(self) -> int:
        return self.main.size

    @property
    def bands(self) -> dict[int, np.ndarray]:
        return {-self.H: self.lowerH, -1: self.lower1, 0: self.main, 1: self.upper1, self.H: self.upperH}

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise ValidationError(f"vector length {x.shape} does not match system size {self.size}")
        y = self.main * x
        for off, band in self.bands.items():
            if off > 0:
                y[:-off] += band[:-off] * x[off:]
            elif off < 0:
                y[-off:] += band[-off:] * x[:off]
        return y

    def to_dense(self) -> np.ndarray:
        n = self.size
        A = np.zeros((n, n))
        rows = np.arange(n)
        for off, band in self.bands.items():
            cols = rows + off
            ok = (cols >= 0) & (cols < n)
            A[rows[ok], cols[ok]] = band[ok]
        return A

    def to_lapack(self) -> np.ndarray:
        """LAPACK general-band layout with ``kl = ku = H`` and room for fill-in."""
        n, H = self.size, self.H
        ab = np.zeros((3 * H + 1, n))
        rows = np.arange(n)
        for off, band in self.bands.items():
            cols = rows + off
            ok = (cols >= 0) & (cols < n)
            # A[r, c] lives at ab[kl + ku + r - c, c]
            ab[2 * H - off, cols[ok]] = band[ok]
        return ab


def to_banded(coeffs: StencilCoefficients, rhs: np.ndarray) -> BandedSystem:
    """Lay the stencil weights out as five diagonals."""
    W, H = coeffs.shape
    rhs = np.asarray(rhs, dtype=np.float64).copy()
    if rhs.shape != (W * H,):
        raise ValidationError(f"rhs length {rhs.shape} does not match system size {W * H}")
    upper1 = coeffs.c_north.copy()
    upper1[:, -1] = 0.0
    lower1 = coeffs.c_south.copy()
    lower1[:, 0] = 0.0
    upperH = coeffs.c_east.copy()
    upperH[-1, :] = 0.0
    lowerH = coeffs.c_west.copy()
    lowerH[0, :] = 0.0
    return BandedSystem(
        H=H,
        main=coeffs.c_diag.ravel().copy(),
        upper1=upper1.ravel(),
        lower1=lower1.ravel(),
        upperH=upperH.ravel(),
        lowerH=lowerH.ravel(),
        rhs=rhs,
    )
