"""Grid geometry, diffusion parameters and field containers.

Fields are stored as ``(W, H)`` arrays indexed ``[i - 1, j - 1]`` for the
1-based grid coordinates ``(i, j)``.  Flattening in C order then yields the
system-vector layout ``m_{1,1}, m_{1,2}, ..., m_{1,H}, m_{2,1}, ...`` where
``j`` runs fastest inside each block of length ``H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .exceptions import ValidationError

DEFAULT_FLOOR = 1e-4


@dataclass(frozen=True)
class GridSpec:
    """Square image grid with ``T`` implicit timesteps on the unit square/interval."""

    H: int
    W: int
    T: int
    h: float
    dt: float

    @property
    def size(self) -> int:
        return self.H * self.W

    @property
    def shape(self) -> tuple[int, int]:
        return (self.W, self.H)

    def to_dict(self) -> dict:
        return {"H": self.H, "W": self.W, "T": self.T, "h": self.h, "dt": self.dt}


def make_grid(H: int, W: int, T: int) -> GridSpec:
    """Build a :class:`GridSpec` with ``h = 1/H`` and ``dt = 1/T``."""
    for name, v in (("H", H), ("W", W), ("T", T)):
        if isinstance(v, bool) or int(v) != v:
            raise ValidationError(f"{name} must be an integer, got {v!r}")
    H, W, T = int(H), int(W), int(T)
    if H != W:
        raise ValidationError(f"only square grids are supported, got H={H}, W={W}")
    if H < 3:
        raise ValidationError(f"grid must be at least 3x3, got H={H}")
    if T < 1:
        raise ValidationError(f"need at least one timestep, got T={T}")
    return GridSpec(H=H, W=W, T=T, h=1.0 / H, dt=1.0 / T)


def flatten_index(spec: GridSpec, i: int, j: int) -> int:
    """Map 1-based grid coordinates ``(i, j)`` to the 0-based system index."""
    if not (1 <= i <= spec.W and 1 <= j <= spec.H):
        raise ValidationError(f"grid point ({i}, {j}) outside 1..{spec.W} x 1..{spec.H}")
    return (i - 1) * spec.H + (j - 1)


def unflatten_index(spec: GridSpec, k: int) -> tuple[int, int]:
    """Inverse of :func:`flatten_index`."""
    if not 0 <= k < spec.size:
        raise ValidationError(f"flat index {k} outside 0..{spec.size - 1}")
    i, j = divmod(k, spec.H)
    return i + 1, j + 1


GSchedule = Union[float, Callable[[int], float]]
Drift = Union[None, tuple, Callable[[int, GridSpec], np.ndarray]]


@dataclass(frozen=True)
class DiffusionParams:
    """Forward-SDE coefficients plus the solver tolerances.

    ``g`` is either a constant or a callable ``n -> g^n``.  ``drift`` is
    ``None`` (zero drift), a constant 2-vector ``(f_x, f_y)``, or a callable
    ``(n, spec) -> array`` of shape ``(W, H, 2)``.
    """

    g: GSchedule = 0.5
    drift: Drift = None
    nl_tol: float = 1e-6
    nl_max_iter: int = 50
    lin_tol: float = 1e-8
    lin_max_iter: int = 1000

    def __post_init__(self):
        if not 0 < self.nl_tol < 1:
            raise ValidationError(f"nl_tol must lie in (0, 1), got {self.nl_tol}")
        if not 0 < self.lin_tol < 1:
            raise ValidationError(f"lin_tol must lie in (0, 1), got {self.lin_tol}")
        if self.nl_max_iter < 1 or self.lin_max_iter < 1:
            raise ValidationError("iteration caps must be positive")
        if not callable(self.g) and not (np.isfinite(self.g) and self.g >= 0):
            raise ValidationError(f"g must be a finite non-negative number, got {self.g}")

    def g_at(self, n: int) -> float:
        g = float(self.g(n)) if callable(self.g) else float(self.g)
        if not np.isfinite(g) or g < 0:
            raise ValidationError(f"g^{n} = {g} is not a finite non-negative number")
        return g

    def drift_at(self, n: int, spec: GridSpec) -> Optional[np.ndarray]:
        """Drift samples ``(W, H, 2)`` at timestep ``n``, or ``None`` when zero."""
        if self.drift is None:
            return None
        if callable(self.drift):
            f = np.asarray(self.drift(n, spec), dtype=np.float64)
        else:
            f = np.broadcast_to(np.asarray(self.drift, dtype=np.float64), spec.shape + (2,))
        if f.shape != spec.shape + (2,):
            raise ValidationError(f"drift must have shape {spec.shape + (2,)}, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError(f"drift at timestep {n} has non-finite entries")
        return f

    def to_dict(self) -> dict:
        """JSON-friendly summary; callables are recorded by name only."""

        def describe(v):
            if v is None or isinstance(v, (int, float)):
                return v
            if callable(v):
                return f"<callable {getattr(v, '__name__', type(v).__name__)}>"
            return [float(x) for x in v]

        return {
            "g": describe(self.g),
            "drift": describe(self.drift),
            "nl_tol": self.nl_tol,
            "nl_max_iter": self.nl_max_iter,
            "lin_tol": self.lin_tol,
            "lin_max_iter": self.lin_max_iter,
        }


@dataclass(frozen=True)
class LogDensityField:
    """Log-density values ``m^n`` on the grid at timestep ``n``."""

    values: np.ndarray
    timestep: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"field must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def check(self, spec: GridSpec) -> "LogDensityField":
        if self.values.shape != spec.shape:
            raise ValidationError(f"field shape {self.values.shape} does not match grid {spec.shape}")
        return self

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True)
class ScoreTensor:
    """Scores for every stored timestep, shape ``(T, W, H, 2)``.

    Component 0 differences along ``i``, component 1 along ``j``.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[-1] != 2:
            raise ValidationError(f"score tensor must have shape (T, W, H, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("score tensor contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def init_log_density(image, spec: GridSpec, floor: float = DEFAULT_FLOOR) -> LogDensityField:
    """Initial log-density ``log(max(image, floor))`` of a single-channel image."""
    if not 0 < floor < 1:
        raise ValidationError(f"floor must lie in (0, 1), got {floor}")
    img = np.asarray(image, dtype=np.float64)
    if img.shape != spec.shape:
        raise ValidationError(f"image shape {img.shape} does not match grid {spec.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValidationError("image values must lie in [0, 1]")
    return LogDensityField(np.log(np.maximum(img, floor)), timestep=0)
