"""Time marching, the semi-explicit outer loop, score extraction and embedding."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .exceptions import EmptyBasisError, ValidationError
from .grid import DEFAULT_FLOOR, DiffusionParams, GridSpec, LogDensityField, ScoreTensor, init_log_density
from .krylov import KrylovBasis, RecycleConfig, cache_reduced_operator, harvest_basis, solve_target
from .solvers import SolveStats, bicgstab, lu_factor, lu_solve
from .stencil import apply_operator, assemble_rhs, central_difference, compute_coefficients, to_banded

MODES = ("direct", "iterative", "recycled")
RULES = ("sum", "x", "y")


@dataclass(frozen=True)
class SolveMode:
    """How each linear system of the outer loop is solved.

    ``zero_start`` makes the first outer iteration of every timestep start
    BiCGSTAB from zero instead of the previous timestep's field.
    """

    kind: str = "iterative"
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    recycle: Optional[RecycleConfig] = None
    zero_start: bool = False

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValidationError(f"unknown solve mode {self.kind!r}; expected one of {MODES}")
        if self.kind == "recycled" and self.recycle is None:
            object.__setattr__(self, "recycle", RecycleConfig())

    @classmethod
    def direct(cls):
        return cls("direct")

    @classmethod
    def iterative(cls, tol=None, max_iter=None, zero_start=False):
        return cls("iterative", tol=tol, max_iter=max_iter, zero_start=zero_start)

    @classmethod
    def recycled(cls, config: Optional[RecycleConfig] = None):
        return cls("recycled", recycle=config or RecycleConfig())

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "tol": self.tol, "max_iter": self.max_iter, "zero_start": self.zero_start}
        if self.recycle is not None:
            r = self.recycle
            d["recycle"] = {"a_max": r.a_max, "seed_cycle": r.seed_cycle,
                            "target_tol": r.target_tol, "target_max_iter": r.target_max_iter}
        return d


@dataclass
class StepStats:
    """Outer-loop record for one timestep."""

    timestep: int
    outer_iterations: int = 0
    outer_converged: bool = False
    solves: list = field(default_factory=list)
    wall_time: float = 0.0
    bases: list = field(default_factory=list, repr=False)
    empty_basis: bool = False

    @property
    def linear_iterations(self) -> int:
        return sum(s.iterations for s in self.solves)

    @property
    def linear_converged(self) -> bool:
        return all(s.converged for s in self.solves)


def _basis_for(bases, k):
    if bases is None:
        return None
    if isinstance(bases, KrylovBasis):
        return bases
    if len(bases) == 0:
        return None
    return bases[min(k, len(bases)) - 1]


def solve_timestep(
    m_prev: LogDensityField,
    params: DiffusionParams,
    spec: GridSpec,
    n: int,
    mode: SolveMode = SolveMode(),
    basis: Union[None, KrylovBasis, Sequence[KrylovBasis]] = None,
    harvest_a_max: Optional[int] = None,
    image_id: str = "",
) -> tuple[LogDensityField, StepStats]:
    """Advance ``m^{n-1}`` to ``m^n`` by iterating the linearized system.

    Outer iteration ``k`` linearizes around the previous iterate (``m^{n-1}``
    for ``k = 1``) and stops when the relative change drops below
    ``params.nl_tol`` or after ``params.nl_max_iter`` iterations.  Linear
    solves after the first start from the previous outer iterate.

    In recycled mode ``basis`` holds the seed's bases for this timestep, one
    per outer iteration; iteration ``k`` uses the ``k``-th (or the last).  The
    projected correction is applied to the residual of the current iterate.

    ``harvest_a_max`` turns on trace collection: each outer iteration's trace
    is orthonormalized and its reduced operator cached in ``stats.bases``.
    """
    m_prev.check(spec)
    start = time.perf_counter()
    stats = StepStats(timestep=n)
    b = assemble_rhs(m_prev, params, spec, n)
    current = m_prev.flat().copy()
    tol = mode.tol if mode.tol is not None else params.lin_tol
    max_iter = mode.max_iter if mode.max_iter is not None else params.lin_max_iter
    if mode.kind == "recycled" and basis is None:
        raise ValidationError(f"recycled mode needs a basis for timestep {n}")

    for k in range(1, params.nl_max_iter + 1):
        coeffs = compute_coefficients(LogDensityField(current.reshape(spec.shape), n), params, spec, n, outer_iter=k)
        if mode.kind == "direct":
            t0 = time.perf_counter()
            system = to_banded(coeffs, b)
            # solve for the correction so an already-exact iterate stays bit-identical
            new = current + lu_solve(lu_factor(system), b - system.matvec(current))
            bn = np.linalg.norm(b)
            res = np.linalg.norm(b - system.matvec(new)) / bn if bn > 0 else 0.0
            sstats = SolveStats(iterations=0, final_residual=float(res), converged=True,
                                wall_time=time.perf_counter() - t0, method="direct")
        elif mode.kind == "iterative":
            x0 = None if (k == 1 and mode.zero_start) else current
            new, sstats = bicgstab(lambda v: apply_operator(coeffs, v), b, x0=x0, tol=tol,
                                   max_iter=max_iter, collect_trace=harvest_a_max is not None)
        else:
            cfg = mode.recycle
            new, sstats = solve_target(coeffs, b, _basis_for(basis, k), cfg, x_base=current)
        stats.solves.append(sstats)

        if harvest_a_max is not None:
            try:
                vb = harvest_basis(sstats.trace, harvest_a_max, timestep=n, source_image_id=image_id)
                stats.bases.append(cache_reduced_operator(vb, coeffs))
            except EmptyBasisError:
                stats.empty_basis = True
            sstats.trace.clear()

        change = np.linalg.norm(new - current) / max(np.linalg.norm(new), 1e-30)
        current = new
        stats.outer_iterations = k
        if change < params.nl_tol:
            stats.outer_converged = True
            break

    stats.wall_time = time.perf_counter() - start
    return LogDensityField(current.reshape(spec.shape), n), stats


def score_from_field(m: np.ndarray, h: Optional[float] = None) -> np.ndarray:
    """Central-difference score ``(W, H, 2)`` under zero padding.

    The differences are halved; pass ``h`` to divide by the grid spacing as
    well and get a true gradient approximation.
    """
    m = np.asarray(m, dtype=np.float64)
    s = np.stack([central_difference(m, 0), central_difference(m, 1)], axis=-1) / 2.0
    return s / h if h is not None else s


@dataclass
class Trajectory:
    """Everything produced by marching one image channel through ``T`` steps."""

    fields: list
    stats: list
    bases: Optional[list] = None
    wall_time: float = 0.0

    @property
    def final(self) -> LogDensityField:
        return self.fields[-1]

    @property
    def linear_iterations(self) -> int:
        return sum(s.linear_iterations for s in self.stats)

    def scores(self, spec: GridSpec, divide_by_h: bool = False) -> ScoreTensor:
        """Scores of ``m^0 .. m^{T-1}``, i.e. the fields the embedding step consumes."""
        h = spec.h if divide_by_h else None
        return ScoreTensor(np.stack([score_from_field(f.values, h) for f in self.fields[:-1]]))


def march(
    image,
    params: DiffusionParams,
    spec: GridSpec,
    mode: SolveMode = SolveMode(),
    bases: Optional[Sequence] = None,
    harvest_a_max: Optional[int] = None,
    floor: float = DEFAULT_FLOOR,
    image_id: str = "",
) -> Trajectory:
    """March ``m^0 = log(max(image, floor))`` through all ``T`` timesteps."""
    start = time.perf_counter()
    if mode.kind == "recycled":
        if bases is None or len(bases) != spec.T:
            raise ValidationError(f"recycled mode needs bases for all {spec.T} timesteps")
    m = init_log_density(image, spec, floor)
    fields, stats, harvested = [m], [], []
    for n in range(1, spec.T + 1):
        basis = bases[n - 1] if mode.kind == "recycled" else None
        if mode.kind == "recycled" and basis is not None and len(basis) == 0:
            # seed produced no usable basis here: fall back to plain warm starts
            step_mode = SolveMode.iterative(tol=mode.recycle.target_tol, max_iter=mode.recycle.target_max_iter)
            basis = None
        else:
            step_mode = mode
        m, st = solve_timestep(m, params, spec, n, step_mode, basis, harvest_a_max, image_id)
        fields.append(m)
        stats.append(st)
        if harvest_a_max is not None:
            harvested.append(list(st.bases))
    return Trajectory(fields, stats, harvested if harvest_a_max is not None else None,
                      time.perf_counter() - start)


def precompute_scores(
    image,
    params: DiffusionParams,
    spec: GridSpec,
    mode: SolveMode = SolveMode(),
    bases: Optional[Sequence] = None,
    divide_by_h: bool = False,
    floor: float = DEFAULT_FLOOR,
) -> tuple[ScoreTensor, list]:
    """Score tensor ``(T, W, H, 2)`` for one single-channel image and per-step stats."""
    traj = march(image, params, spec, mode, bases, floor=floor)
    return traj.scores(spec, divide_by_h), traj.stats


def seed_solve(
    image,
    params: DiffusionParams,
    spec: GridSpec,
    config: RecycleConfig = RecycleConfig(),
    divide_by_h: bool = False,
    floor: float = DEFAULT_FLOOR,
    image_id: str = "seed",
) -> tuple[ScoreTensor, list, list]:
    """Iterative-mode march that also harvests the per-timestep bases.

    Returns ``(scores, bases, stats)`` where ``bases[n - 1]`` lists one
    :class:`KrylovBasis` per outer iteration of timestep ``n`` (empty when
    every trace vector was degenerate).
    """
    traj = march(image, params, spec, SolveMode.iterative(), harvest_a_max=config.a_max,
                 floor=floor, image_id=image_id)
    return traj.scores(spec, divide_by_h), traj.bases, traj.stats


@dataclass(frozen=True)
class EmbeddedSequence:
    values: np.ndarray
    combination_rule: str = "sum"


def _combine(v: np.ndarray, rule: str) -> np.ndarray:
    if rule == "sum":
        return v[..., 0] + v[..., 1]
    if rule == "x":
        return v[..., 0]
    if rule == "y":
        return v[..., 1]
    raise ValidationError(f"unknown combination rule {rule!r}; expected one of {RULES}")


def embed_scores(image, scores: ScoreTensor, params: DiffusionParams, spec: GridSpec, rule: str = "sum") -> EmbeddedSequence:
    """Explicit Euler transport ``x^n = x^{n-1} + (f - g^2 s / 2) dt`` of the image.

    The 2-vector score and drift are reduced to scalars by ``rule``:
    ``"sum"`` adds both components, ``"x"``/``"y"`` keep one.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.shape != spec.shape:
        raise ValidationError(f"image shape {x.shape} does not match grid {spec.shape}")
    s = scores.values
    if s.shape != (spec.T,) + spec.shape + (2,):
        raise ValidationError(f"scores shape {s.shape} does not match {(spec.T,) + spec.shape + (2,)}")
    _combine(s[:1], rule)
    out = np.empty((spec.T + 1,) + spec.shape)
    out[0] = x
    for n in range(1, spec.T + 1):
        g = params.g_at(n - 1)
        f = params.drift_at(n - 1, spec)
        velocity = -0.5 * g * g * _combine(s[n - 1], rule)
        if f is not None:
            velocity = velocity + _combine(f, rule)
        out[n] = out[n - 1] + velocity * spec.dt
    return EmbeddedSequence(out, rule)
