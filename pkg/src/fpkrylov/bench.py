"""Batch benchmark: direct LU baseline vs plain and recycled BiCGSTAB."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .exceptions import FPKrylovError, ValidationError
from .grid import DEFAULT_FLOOR, DiffusionParams, GridSpec
from .io import channels_of, load_image
from .krylov import RecycleConfig
from .pipeline import SolveMode, march

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
TIMING_BOUNDARY = "monotonic clock around assembly and solves for all timesteps of one image; file I/O excluded"

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "environment", "records", "aggregates"],
    "properties": {
        "version": {"type": "integer"},
        "environment": {
            "type": "object",
            "required": ["grid", "T", "tolerances", "seed_cycle", "a_max", "timestamp", "concurrency"],
        },
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "mode", "role", "status", "wall_time_s",
                             "total_bicgstab_iterations", "l2_rel_error_vs_direct"],
                "properties": {
                    "image_id": {"type": "string"},
                    "mode": {"enum": ["direct", "iterative", "recycled"]},
                    "role": {"enum": ["seed", "target", "baseline"]},
                    "status": {"type": "string"},
                    "wall_time_s": {"type": ["number", "null"]},
                    "total_bicgstab_iterations": {"type": ["integer", "null"]},
                    "l2_rel_error_vs_direct": {"type": ["number", "null"], "minimum": 0},
                },
            },
        },
        "aggregates": {
            "type": "object",
            "required": ["total_time_per_mode", "avg_l2_error", "avg_l2_error_per_mode",
                         "time_reduction_pct", "iteration_reduction_pct"],
            "properties": {
                "total_time_per_mode": {"type": "object", "additionalProperties": {"type": "number"}},
                "avg_l2_error": {"type": ["number", "null"], "minimum": 0},
                "time_reduction_pct": {"type": ["number", "null"]},
                "iteration_reduction_pct": {"type": ["number", "null"]},
            },
        },
    },
}


def gen_correlated_batch(base_seed: int, N: int, spec: GridSpec, sigma_p: float) -> list[np.ndarray]:
    """A smooth random base image followed by ``N - 1`` noisy copies of it.

    The base is three Gaussian bumps rescaled to ``[0.1, 0.9]``; each copy adds
    i.i.d. ``N(0, sigma_p^2)`` pixel noise and clamps to ``[0, 1]``.
    """
    if N < 2:
        raise ValidationError(f"a correlated batch needs N >= 2, got {N}")
    if not 0 < sigma_p < 0.5:
        raise ValidationError(f"sigma_p must lie in (0, 0.5), got {sigma_p}")
    rng = np.random.default_rng(base_seed)
    ii, jj = np.meshgrid(np.arange(spec.W), np.arange(spec.H), indexing="ij")
    base = np.zeros(spec.shape)
    for _ in range(3):
        ci, cj = rng.uniform(0, spec.W), rng.uniform(0, spec.H)
        width = rng.uniform(spec.H / 8, spec.H / 3)
        amp = rng.uniform(0.5, 1.0)
        base += amp * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * width * width))
    base = 0.1 + 0.8 * (base - base.min()) / (base.max() - base.min())
    batch = [base]
    for _ in range(N - 1):
        batch.append(np.clip(base + sigma_p * rng.standard_normal(spec.shape), 0.0, 1.0))
    return batch


def l2_rel_error(a, b) -> float:
    """``||a - b|| / ||b||`` over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    nb = np.linalg.norm(b)
    if nb == 0:
        raise ValidationError("baseline has zero norm")
    return float(np.linalg.norm(a - b) / nb)


@dataclass
class BatchSpec:
    """What to run.  Exactly one of ``images``, ``input_dir`` or ``synthetic_n`` is used."""

    grid: GridSpec
    params: DiffusionParams = field(default_factory=DiffusionParams)
    recycle: RecycleConfig = field(default_factory=RecycleConfig)
    images: Optional[Sequence[np.ndarray]] = None
    image_ids: Optional[Sequence[str]] = None
    input_dir: Optional[str] = None
    synthetic_n: Optional[int] = None
    sigma_p: float = 0.05
    seed: Optional[int] = None
    modes: tuple = ("direct", "iterative", "recycled")
    floor: float = DEFAULT_FLOOR

    def load(self) -> tuple[list[str], list[np.ndarray]]:
        sources = sum(x is not None for x in (self.images, self.input_dir, self.synthetic_n))
        if sources != 1:
            raise ValidationError("give exactly one of images, input_dir or synthetic_n")
        if self.images is not None:
            imgs = [np.asarray(im, dtype=np.float64) for im in self.images]
            ids = list(self.image_ids) if self.image_ids else [f"img{k:04d}" for k in range(len(imgs))]
        elif self.input_dir is not None:
            paths = sorted(p for p in Path(self.input_dir).iterdir()
                           if p.suffix.lower() in (".pgm", ".png"))
            imgs = [load_image(p, self.grid) for p in paths]
            ids = [p.name for p in paths]
        else:
            if self.seed is None:
                raise ValidationError("synthetic batches need an explicit seed")
            imgs = gen_correlated_batch(self.seed, self.synthetic_n, self.grid, self.sigma_p)
            ids = [f"syn{k:04d}" for k in range(len(imgs))]
        if not imgs:
            raise ValidationError("batch is empty")
        if len(ids) != len(imgs):
            raise ValidationError("image_ids and images differ in length")
        bad = set(self.modes) - {"direct", "iterative", "recycled"}
        if bad or "direct" not in self.modes:
            raise ValidationError(f"modes must include 'direct' and come from direct/iterative/recycled, got {self.modes}")
        return ids, imgs


@dataclass
class BenchReport:
    environment: dict
    records: list
    aggregates: dict
    version: int = REPORT_VERSION
    final_fields: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"version": self.version, "environment": self.environment,
                "records": self.records, "aggregates": self.aggregates}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False))

    def write_csv(self, path) -> None:
        keys = sorted({k for r in self.records for k in r})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.records:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _pct(before, after):
    if before is None or after is None or before == 0:
        return None
    return 100.0 * (before - after) / before


def compute_aggregates(records: Sequence[dict]) -> dict:
    """Aggregate columns from per-image records (used both to build and to check reports)."""
    ok = [r for r in records if r["status"] == "ok"]
    modes = sorted({r["mode"] for r in ok})
    total_time = {m: math.fsum(r["wall_time_s"] for r in ok if r["mode"] == m) for m in modes}
    err = {}
    for m in modes:
        vals = [r["l2_rel_error_vs_direct"] for r in ok if r["mode"] == m and r["l2_rel_error_vs_direct"] is not None]
        err[m] = math.fsum(vals) / len(vals) if vals else None
    # image ids that completed in every mode, so totals compare like with like
    complete = None
    for m in modes:
        ids = {r["image_id"] for r in ok if r["mode"] == m}
        complete = ids if complete is None else complete & ids
    complete = complete or set()
    targets = {r["image_id"] for r in ok if r["mode"] == "recycled" and r["role"] == "target"} & complete

    def total(mode, key, ids):
        rows = [r[key] for r in ok if r["mode"] == mode and r["image_id"] in ids]
        return math.fsum(rows) if rows else None

    time_red = None
    if targets and "recycled" in modes:
        time_red = _pct(total("direct", "wall_time_s", complete), total("recycled", "wall_time_s", complete))
    iter_red = None
    if targets and "iterative" in modes:
        iter_red = _pct(total("iterative", "total_bicgstab_iterations", targets),
                        total("recycled", "total_bicgstab_iterations", targets))
    return {
        "total_time_per_mode": total_time,
        "avg_l2_error": err.get("recycled"),
        "avg_l2_error_per_mode": err,
        "time_reduction_pct": time_red,
        "iteration_reduction_pct": iter_red,
        "n_images": len({r["image_id"] for r in records}),
        "n_targets": len(targets),
        "n_failed": len(records) - len(ok),
    }


def validate_report(doc: dict) -> None:
    """Schema check plus exact recomputation of the aggregates from the records."""
    jsonschema.validate(doc, REPORT_SCHEMA)
    again = compute_aggregates(doc["records"])
    for key in ("total_time_per_mode", "avg_l2_error", "avg_l2_error_per_mode",
                "time_reduction_pct", "iteration_reduction_pct"):
        if again[key] != doc["aggregates"][key]:
            raise ValidationError(f"aggregate {key} does not recompute: {doc['aggregates'][key]} vs {again[key]}")


def _run_image(img, spec, params, mode, bases=None, harvest=None, floor=DEFAULT_FLOOR, image_id=""):
    """March every channel; returns (final fields, wall time, bicgstab iterations, outer ok, bases)."""
    finals, iters, wall, converged, harvested = [], 0, 0.0, True, []
    for ch in channels_of(img):
        t0 = time.perf_counter()
        cb = bases[len(finals)] if bases is not None else None
        traj = march(ch, params, spec, mode, cb, harvest_a_max=harvest, floor=floor, image_id=image_id)
        wall += time.perf_counter() - t0
        finals.append(traj.final.values)
        iters += traj.linear_iterations
        converged &= all(s.outer_converged and s.linear_converged for s in traj.stats)
        harvested.append(traj.bases)
    return np.stack(finals), wall, iters, converged, harvested


def run_benchmark(batch: BatchSpec) -> BenchReport:
    """Direct baseline on every image, then the other requested modes.

    Recycled mode works in cycles of ``recycle.seed_cycle`` images: the first
    image of a cycle is solved plainly while harvesting bases, the rest are
    warm-started from them.  Failures are recorded and skipped.
    """
    ids, imgs = batch.load()
    spec, params, cfg = batch.grid, batch.params, batch.recycle
    records, direct_final, finals = [], {}, {}

    def record(image_id, mode, role, status="ok", wall=None, iters=None, err=None, converged=None):
        records.append({"image_id": image_id, "mode": mode, "role": role, "status": status,
                        "wall_time_s": wall, "total_bicgstab_iterations": iters,
                        "l2_rel_error_vs_direct": err, "converged": converged})

    for image_id, img in zip(ids, imgs):
        try:
            final, wall, iters, conv, _ = _run_image(img, spec, params, SolveMode.direct(), floor=batch.floor)
        except (FPKrylovError, ArithmeticError, ValueError) as exc:
            logger.error("direct solve failed for %s: %s", image_id, exc)
            record(image_id, "direct", "baseline", status=f"failed: {exc}")
            continue
        direct_final[image_id] = final
        record(image_id, "direct", "baseline", wall=wall, iters=iters,
               err=l2_rel_error(final, final), converged=conv)
    finals["direct"] = direct_final

    def err_vs_direct(image_id, final):
        return l2_rel_error(final, direct_final[image_id]) if image_id in direct_final else None

    if "iterative" in batch.modes:
        finals["iterative"] = {}
        for idx, (image_id, img) in enumerate(zip(ids, imgs)):
            role = "seed" if idx % cfg.seed_cycle == 0 else "target"
            try:
                final, wall, iters, conv, _ = _run_image(img, spec, params, SolveMode.iterative(), floor=batch.floor)
            except (FPKrylovError, ArithmeticError, ValueError) as exc:
                logger.error("iterative solve failed for %s: %s", image_id, exc)
                record(image_id, "iterative", role, status=f"failed: {exc}")
                continue
            finals["iterative"][image_id] = final
            record(image_id, "iterative", role, wall=wall, iters=iters,
                   err=err_vs_direct(image_id, final), converged=conv)

    if "recycled" in batch.modes:
        finals["recycled"] = {}
        bases = None
        target_mode = SolveMode.recycled(cfg)
        for idx, (image_id, img) in enumerate(zip(ids, imgs)):
            seed = idx % cfg.seed_cycle == 0
            try:
                if seed:
                    bases = None
                    final, wall, iters, conv, bases = _run_image(
                        img, spec, params, SolveMode.iterative(), harvest=cfg.a_max,
                        floor=batch.floor, image_id=image_id)
                elif bases is None:
                    raise ValidationError("no seed bases available for this cycle")
                else:
                    # a seed with fewer channels than the target reuses its first channel's bases
                    chan = len(channels_of(img))
                    cb = [bases[min(c, len(bases) - 1)] for c in range(chan)]
                    final, wall, iters, conv, _ = _run_image(img, spec, params, target_mode, cb, floor=batch.floor)
            except (FPKrylovError, ArithmeticError, ValueError) as exc:
                logger.error("recycled solve failed for %s: %s", image_id, exc)
                record(image_id, "recycled", "seed" if seed else "target", status=f"failed: {exc}")
                continue
            finals["recycled"][image_id] = final
            record(image_id, "recycled", "seed" if seed else "target", wall=wall, iters=iters,
                   err=err_vs_direct(image_id, final), converged=conv)

    environment = {
        "grid": spec.to_dict(),
        "T": spec.T,
        "tolerances": {"lin_tol": params.lin_tol, "nl_tol": params.nl_tol, "nl_max_iter": params.nl_max_iter,
                       "target_tol": cfg.target_tol, "target_max_iter": cfg.target_max_iter},
        "params": params.to_dict(),
        "seed_cycle": cfg.seed_cycle,
        "a_max": cfg.a_max,
        "modes": list(batch.modes),
        "source": ("images" if batch.images is not None else
                   f"dir:{batch.input_dir}" if batch.input_dir is not None else
                   f"synthetic:n={batch.synthetic_n},sigma_p={batch.sigma_p},seed={batch.seed}"),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "concurrency": False,
        "workers": 1,
        "timing_boundary": TIMING_BOUNDARY,
    }
    return BenchReport(environment, records, compute_aggregates(records), final_fields=finals)
