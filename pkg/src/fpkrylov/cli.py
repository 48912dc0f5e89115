"""Command-line interface: ``fpkrylov {precompute,bench,embed,solve-one}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import BatchSpec, gen_correlated_batch, run_benchmark, validate_report
from .exceptions import FPKrylovError, ImageLoadError, ValidationError
from .grid import DiffusionParams, ScoreTensor, init_log_density, make_grid
from .io import channels_of, load_image, read_scores, write_embedded, write_scores, write_system
from .krylov import RecycleConfig, save_basis
from .pipeline import SolveMode, embed_scores, march
from .solvers import lu_factor, lu_solve
from .stencil import assemble_rhs, compute_coefficients, to_banded

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("fpkrylov")


class NumericalFailure(FPKrylovError):
    pass


def _params(args) -> DiffusionParams:
    return DiffusionParams(g=args.g, lin_tol=args.tol, nl_tol=args.nl_tol, nl_max_iter=args.nl_max_iter)


def cmd_precompute(args) -> int:
    image = load_image(args.image)
    chans = channels_of(image)
    H, W = chans[0].shape
    spec = make_grid(H, W, args.timesteps)
    params = _params(args)
    cfg = RecycleConfig(a_max=args.krylov_dim, target_tol=args.target_tol, target_max_iter=args.target_max_iter)
    if args.mode == "recycled":
        seed_img = load_image(args.seed_image, spec) if args.seed_image else image
        seed_chans = channels_of(seed_img)
        bank = [march(c, params, spec, SolveMode.iterative(), harvest_a_max=cfg.a_max).bases for c in seed_chans]
        if args.save_bases:
            out = Path(args.save_bases)
            out.mkdir(parents=True, exist_ok=True)
            for c, bases in enumerate(bank):
                for n, per_k in enumerate(bases, start=1):
                    for k, b in enumerate(per_k, start=1):
                        save_basis(out / f"c{c}_t{n:04d}_k{k:02d}.kryb", b)
        mode = SolveMode.recycled(cfg)
    else:
        bank = None
        mode = SolveMode(args.mode)

    scores, iters = [], 0
    for c, ch in enumerate(chans):
        bases = bank[min(c, len(bank) - 1)] if bank else None
        traj = march(ch, params, spec, mode, bases)
        scores.append(traj.scores(spec, args.divide_by_h).values)
        iters += traj.linear_iterations
    tensor = np.stack(scores, axis=1)  # (T, C, H, W, 2)
    manifest = {
        "image_id": Path(args.image).name,
        "grid": spec.to_dict(),
        "params": params.to_dict(),
        "mode": mode.to_dict(),
        "tolerances": {"lin_tol": params.lin_tol, "nl_tol": params.nl_tol,
                       "target_tol": cfg.target_tol, "target_max_iter": cfg.target_max_iter},
        "score_scale": "central difference / (2h)" if args.divide_by_h else "central difference / 2",
        "score_fields": "m^0 .. m^(T-1)",
    }
    write_scores(args.out, tensor, manifest)
    print(f"wrote {args.out} shape={tensor.shape} bicgstab_iterations={iters}")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = make_grid(args.grid, args.grid, args.timesteps)
    batch = BatchSpec(
        grid=spec,
        params=_params(args),
        recycle=RecycleConfig(a_max=args.krylov_dim, seed_cycle=args.seed_cycle,
                              target_tol=args.target_tol, target_max_iter=args.target_max_iter),
        input_dir=args.input,
        synthetic_n=args.synthetic,
        sigma_p=args.sigma_p,
        seed=args.seed,
        modes=tuple(args.modes.split(",")),
    )
    report = run_benchmark(batch)
    doc = report.to_dict()
    validate_report(doc)
    report.write_json(args.report)
    report.write_csv(Path(args.report).with_suffix(".csv"))
    agg = report.aggregates
    print(json.dumps({k: agg[k] for k in ("total_time_per_mode", "avg_l2_error",
                                           "time_reduction_pct", "iteration_reduction_pct", "n_failed")}, indent=2))
    if all(r["status"] != "ok" for r in report.records):
        raise NumericalFailure("every image failed")
    return EXIT_OK


def cmd_embed(args) -> int:
    image = load_image(args.image)
    chans = channels_of(image)
    scores = read_scores(args.scores)
    T, C = scores.shape[:2]
    if C != len(chans):
        raise ValidationError(f"score file has {C} channels, image has {len(chans)}")
    spec = make_grid(chans[0].shape[0], chans[0].shape[1], T)
    params = DiffusionParams(g=args.g)

    seqs = [embed_scores(ch, ScoreTensor(scores[:, c]), params, spec, args.rule).values for c, ch in enumerate(chans)]
    values = seqs[0] if len(seqs) == 1 else np.stack(seqs, axis=1)
    write_embedded(args.out, values, args.rule)
    print(f"wrote {args.out} shape={values.shape}")
    return EXIT_OK


def cmd_solve_one(args) -> int:
    spec = make_grid(args.grid, args.grid, args.timesteps)
    params = _params(args)
    if args.image:
        img = channels_of(load_image(args.image, spec))[0]
    else:
        img = gen_correlated_batch(args.seed, 2, spec, 0.05)[0]
    m0 = init_log_density(img, spec)
    coeffs = compute_coefficients(m0, params, spec, 1, outer_iter=1)
    system = to_banded(coeffs, assemble_rhs(m0, params, spec, 1))
    x = lu_solve(lu_factor(system), system.rhs)
    res = np.linalg.norm(system.matvec(x) - system.rhs) / np.linalg.norm(system.rhs)
    if args.dump_system:
        write_system(args.dump_system, system)
    print(f"n={system.size} bandwidth={system.H} lu_relative_residual={res:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpkrylov", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_opts(sp, timesteps=100):
        sp.add_argument("--timesteps", type=int, default=timesteps)
        sp.add_argument("--g", type=float, default=0.5)
        sp.add_argument("--tol", type=float, default=1e-8, help="BiCGSTAB relative tolerance")
        sp.add_argument("--nl-tol", type=float, default=1e-6)
        sp.add_argument("--nl-max-iter", type=int, default=50)

    def recycle_opts(sp):
        sp.add_argument("--krylov-dim", type=int, default=20)
        sp.add_argument("--target-tol", type=float, default=1e-8)
        sp.add_argument("--target-max-iter", type=int, default=1000)

    sp = sub.add_parser("precompute", help="score tensor for one image")
    sp.add_argument("image")
    sp.add_argument("--mode", choices=["direct", "iterative", "recycled"], default="iterative")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed-image", help="seed for recycled mode (default: the image itself)")
    sp.add_argument("--save-bases", help="directory for harvested KRYB basis files")
    sp.add_argument("--divide-by-h", action="store_true")
    solver_opts(sp)
    recycle_opts(sp)
    sp.set_defaults(func=cmd_precompute)

    sp = sub.add_parser("bench", help="direct vs recycled batch benchmark")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="directory of PGM/PNG images")
    src.add_argument("--synthetic", type=int, metavar="N", help="generate N correlated images")
    sp.add_argument("--sigma-p", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid", type=int, default=32)
    sp.add_argument("--seed-cycle", type=int, default=50)
    sp.add_argument("--modes", default="direct,iterative,recycled")
    sp.add_argument("--report", default="report.json")
    solver_opts(sp)
    recycle_opts(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("embed", help="transport an image along its scores")
    sp.add_argument("image")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--rule", choices=["sum", "x", "y"], default="sum")
    sp.add_argument("--g", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("solve-one", help="assemble (and LU-solve) the first system of one image")
    sp.add_argument("--grid", type=int, default=8)
    sp.add_argument("--image")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dump-system")
    solver_opts(sp, timesteps=1)
    sp.set_defaults(func=cmd_solve_one)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ImageLoadError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (NumericalFailure, ArithmeticError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
