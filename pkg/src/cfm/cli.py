"""Command line for phantoms, acquisition, reconstruction and studies.

Exit codes: 0 success, 1 usage or parameter error, 2 file I/O error,
3 validation or data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as cfm_io
from .errors import CFMError, ParameterError, SizeError
from .forward import BeadPhantomSpec, PsfSpec, acquire, make_bead_phantom
from .hadamard import ORDERINGS, HadamardIndexer, SensingOperator
from .hyperspectral import (RGB_BANDS, HyperCube, SpectralPhantomSpec, hyper_acquire,
                            hyper_solve, make_spectral_phantom, pool_bands)
from .metrics import NoiseStudyConfig, median_psnr, psnr, psnr_sweep, variance_study
from .sampling import m_from_ratio, select_full, select_half_half, select_random
from .solver import ALPHA_RULES, STEP_RULES, SolverConfig, reconstruct
from .sparsity import FILTERS, SparsityBasis

log = logging.getLogger("cfm")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3
MAX_NOISE_STUDY_SIDE = 64
BASIS_KINDS = {"dirac": "dirac", "wavelet": "wavelet_orthonormal",
               "undecimated": "wavelet_undecimated"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared argument groups ---------------------------------------------------

def _add_solver_args(p):
    p.add_argument("--alpha", type=float, help="regularization weight (default: data rule)")
    p.add_argument("--alpha-rule", choices=ALPHA_RULES, default="median")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--no-nonneg", action="store_true", help="drop the x >= 0 constraint")
    p.add_argument("--step-rule", choices=STEP_RULES, default="fixed_from_operator_norm")
    p.add_argument("--inner-iters", type=int, default=10)


def _add_basis_args(p, default="dirac"):
    p.add_argument("--basis", choices=sorted(BASIS_KINDS), default=default)
    p.add_argument("--filter", choices=sorted(FILTERS), default="haar")
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--weights", choices=("none", "scale"), default="none",
                   help="'scale' weights level j by 1/j")


def _add_acquire_args(p):
    p.add_argument("--strategy", choices=("random", "halfhalf", "full"), default="random")
    p.add_argument("--ratio", type=float, help="undersampling ratio N/M")
    p.add_argument("--m", type=int, help="number of patterns")
    p.add_argument("--ordering", choices=ORDERINGS, default="natural")
    p.add_argument("--noise", choices=("poisson", "none"), default="poisson")
    p.add_argument("--scale", type=float, default=1.0, help="illumination scale lambda_CS")
    p.add_argument("--psf-sigma", type=float, default=0.0, help="Gaussian blur sigma in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="measurement CSV")
    p.add_argument("--selection", help="selection JSON to write")


def build_parser():
    parser = _Parser(prog="cfm", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file supplying any flag of the subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("phantom", help="write a bead phantom")
    p.add_argument("--side", type=int, default=256)
    p.add_argument("--beads", type=int, default=50)
    p.add_argument("--fwhm", type=float, default=3.0)
    p.add_argument("--flux", type=float, default=6.4e3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--pgm", help="also export a 16-bit PGM preview")

    p = sub.add_parser("acquire", help="simulate measurements of an image")
    p.add_argument("--image")
    _add_acquire_args(p)

    p = sub.add_parser("reconstruct", help="reconstruct an image from measurements")
    p.add_argument("--measurements")
    p.add_argument("--selection")
    _add_basis_args(p)
    _add_solver_args(p)
    p.add_argument("--ref", help="reference CFM-IMG for PSNR")
    p.add_argument("--out")
    p.add_argument("--metrics", help="metrics JSON (default: <out>.metrics.json)")
    p.add_argument("--trace", help="objective trace CSV (default: <out>.trace.csv)")
    p.add_argument("--pgm")
    p.add_argument("--figure", help="PNG rendering of the reconstruction")

    p = sub.add_parser("hyper-phantom", help="write a spectral bead cube")
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--beads", type=int, default=10)
    p.add_argument("--n-lambda", type=int, default=16)
    p.add_argument("--fwhm", type=float, default=3.0)
    p.add_argument("--flux", type=float, default=1.6e4)
    p.add_argument("--lambda-start", type=float, default=520.0)
    p.add_argument("--lambda-step", type=float, default=7.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("hyper-acquire", help="simulate spectral measurements of a cube")
    p.add_argument("--cube")
    _add_acquire_args(p)
    p.add_argument("--reject", type=float, nargs=2, metavar=("LO_NM", "HI_NM"),
                   help="zero the channels in [LO, HI) nm")

    p = sub.add_parser("hyper-reconstruct", help="joint space-spectrum reconstruction")
    p.add_argument("--measurements")
    p.add_argument("--selection")
    p.add_argument("--spectral-basis", choices=("dirac", "wavelet"), default="wavelet")
    p.add_argument("--filter", choices=sorted(FILTERS), default="haar")
    p.add_argument("--levels", type=int, default=1)
    _add_solver_args(p)
    p.add_argument("--ref", help="reference CFM-CUBE for pooled-band PSNR")
    p.add_argument("--out")
    p.add_argument("--metrics")
    p.add_argument("--trace")
    p.add_argument("--figure", help="PNG of the pooled band images")

    p = sub.add_parser("sweep", help="PSNR versus undersampling ratio and illumination")
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--beads", type=int, default=50)
    p.add_argument("--fwhm", type=float, default=3.0)
    p.add_argument("--flux", type=float, default=1600.0)
    p.add_argument("--phantom-seed", type=int, default=0)
    p.add_argument("--ratios", type=float, nargs="+", default=[8, 16, 32, 64, 128])
    p.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.1, 0.01])
    p.add_argument("--seeds", type=int, default=3, help="seeds 0..S-1 per point")
    _add_basis_args(p, default="wavelet")
    _add_solver_args(p)
    p.add_argument("--out")
    p.add_argument("--figure", help="PNG of median PSNR curves (default: <out>.png)")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG report")

    p = sub.add_parser("noise-study", help="Monte Carlo variance of the full-sampling inverse")
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--value", type=float, default=10.0, help="uniform pixel value")
    p.add_argument("--image", help="CFM-IMG sample instead of a uniform one")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--scale", type=float, default=1.0, help="illumination scale lambda_CS")
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--keep-special-pixel", action="store_true",
                   help="do not force pixel (0, 0) dark")
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--figure", help="PNG of the variance maps (default: <out>.png)")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG report")
    return parser


# -- config handling ------------------------------------------------------------

def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    """Parse ``argv``; a ``--config`` JSON supplies defaults the command line overrides."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("cfm: a subcommand is required (see --help)")
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        sub = _subparser(parser, args.command)
        dests = {a.dest for a in sub._actions} - {"help"}
        updates = {}
        for key, value in doc.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in dests:
                raise UsageError(f"config key {key!r} is not a flag of '{args.command}'")
            updates[dest] = value
        sub.set_defaults(**updates)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"cfm {args.command}: missing {flags}")


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _check_outputs(*paths):
    for p in paths:
        if p is None:
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise PermissionError(f"cannot write to {p}")


def _workers():
    raw = os.environ.get("CFM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"CFM_THREADS must be an integer, got {raw!r}") from None


def _positive(name, value):
    if not value > 0:
        raise ParameterError(f"{name} must be positive")


# -- builders -------------------------------------------------------------------

def _solver_config(args) -> SolverConfig:
    return SolverConfig(alpha=args.alpha, alpha_rule=args.alpha_rule, max_iters=args.max_iters,
                        rel_tol=args.rel_tol, nonneg=not args.no_nonneg,
                        step_rule=args.step_rule, inner_iters=args.inner_iters)


def _basis(kind, filter_name, levels, weights="none") -> SparsityBasis:
    basis = SparsityBasis(kind=kind, filter=filter_name, levels=levels)
    if weights == "scale":
        if kind == "dirac":
            raise ParameterError("scale weights need a wavelet basis")
        basis = basis.with_scale_weights()
    return basis


def _selection(args, indexer):
    n = indexer.n_total
    if args.strategy == "full":
        return select_full(n)
    if (args.ratio is None) == (args.m is None):
        raise UsageError(f"cfm {args.command}: give exactly one of --ratio and --m")
    m = m_from_ratio(n, args.ratio) if args.ratio is not None else args.m
    if args.strategy == "halfhalf":
        return select_half_half(indexer, m, args.seed)
    return select_random(n, m, args.seed)


def _load_selection(path):
    sel, doc = cfm_io.read_selection(path)
    side = cfm_io.side_of(sel.n_total)
    ordering = doc.get("ordering", "natural")
    return sel, HadamardIndexer(side, ordering)


def _report_figure(args):
    if args.no_figure:
        return None
    return args.figure or str(Path(args.out).with_suffix(".png"))


def _fmt_psnr(value):
    return "inf" if math.isinf(value) else value


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- commands -------------------------------------------------------------------

def cmd_phantom(args):
    _require(args, "out")
    spec = BeadPhantomSpec(side=args.side, n_beads=args.beads, fwhm_px=args.fwhm,
                           total_flux=args.flux, seed=args.seed)
    _check_outputs(args.out, args.pgm)
    img = make_bead_phantom(spec)
    cfm_io.write_image(args.out, img)
    if args.pgm:
        cfm_io.write_pgm(args.pgm, img)
    print(f"total_flux={img.sum():.6f}")
    print(f"sha256={_sha256_file(args.out)}")


def _acquire_common(args, load, acquire_fn, **extra):
    _require(args, "out", "selection")
    _positive("--scale", args.scale)
    _check_outputs(args.out, args.selection)
    sample = load()
    indexer = HadamardIndexer(sample.shape[0] if hasattr(sample, "shape") else sample.side,
                              args.ordering)
    sel = _selection(args, indexer)
    op = SensingOperator(indexer, sel, args.scale)
    psf = PsfSpec("gaussian", args.psf_sigma) if args.psf_sigma > 0 else PsfSpec()
    meas = acquire_fn(sample, op, psf=psf, noise=args.noise, seed=args.seed, **extra)
    cfm_io.write_selection(args.selection, sel, ordering=args.ordering)
    return meas, sel, indexer


def cmd_acquire(args):
    _require(args, "image")
    _check_inputs(args.image)
    meas, sel, _ = _acquire_common(args, lambda: cfm_io.read_image(args.image), acquire)
    cfm_io.write_measurements(args.out, meas, seed=args.seed, ordering=args.ordering)
    print(f"m={sel.m} undersampling_ratio={sel.n_total / sel.m:.6g}")


def cmd_hyper_acquire(args):
    _require(args, "cube")
    _check_inputs(args.cube)
    cube_holder = {}

    def load():
        cube_holder["cube"] = cfm_io.read_cube(args.cube)
        return cube_holder["cube"]

    meas, sel, _ = _acquire_common(
        args, load,
        lambda c, op, psf, noise, seed, **kw: hyper_acquire(c, op, noise, seed, psf, **kw),
        rejection_nm=tuple(args.reject) if args.reject else None)
    axis = cube_holder["cube"].lambda_axis
    step = float(axis[1] - axis[0]) if axis.size > 1 else 1.0
    cfm_io.write_measurements(args.out, meas, seed=args.seed, ordering=args.ordering,
                              lambda_start_nm=float(axis[0]), lambda_step_nm=step)
    print(f"m={sel.m} n_lambda={axis.size} undersampling_ratio={sel.n_total / sel.m:.6g}")


def _write_solve_outputs(args, res, metrics, default_stem):
    trace_path = args.trace or f"{default_stem}.trace.csv"
    metrics_path = args.metrics or f"{default_stem}.metrics.json"
    cfm_io.write_csv(trace_path, ["iteration", "objective"],
                     ([i + 1, float(v)] for i, v in enumerate(res.objective_trace)))
    Path(metrics_path).write_text(json.dumps(metrics, indent=1) + "\n")
    return metrics_path


def _solve_metrics(args, res, basis_doc):
    return {**basis_doc, "alpha": res.alpha, "iterations": res.iterations_used,
            "converged": res.converged, "residual_norm": res.residual_norm,
            "objective_final": float(res.objective_trace[-1]),
            "nonneg": not args.no_nonneg, "step_rule": args.step_rule}


def cmd_reconstruct(args):
    _require(args, "measurements", "selection", "out")
    _check_inputs(args.measurements, args.selection, args.ref)
    _check_outputs(args.out, args.metrics, args.trace, args.pgm, args.figure)
    sel, indexer = _load_selection(args.selection)
    meas, _ = cfm_io.read_measurements(args.measurements, sel)
    if meas.values.ndim != 1:
        raise UsageError("multi-channel measurements: use hyper-reconstruct")
    basis = _basis(BASIS_KINDS[args.basis], args.filter, args.levels, args.weights)
    op = SensingOperator(indexer, sel, meas.illumination_scale)
    res = reconstruct(meas, op, basis, _solver_config(args))
    cfm_io.write_image(args.out, res.image)
    metrics = _solve_metrics(args, res, {"basis": args.basis, "filter": args.filter,
                                         "levels": args.levels, "weights": args.weights})
    if args.ref:
        metrics["psnr_db"] = _fmt_psnr(psnr(res.image, cfm_io.read_image(args.ref)))
    path = _write_solve_outputs(args, res, metrics, args.out)
    if args.pgm:
        cfm_io.write_pgm(args.pgm, res.image)
    if args.figure:
        from .plotting import plot_image
        plot_image(res.image, args.figure, "reconstruction")
    print(f"iterations={res.iterations_used} residual_norm={res.residual_norm:.6g}")
    if "psnr_db" in metrics:
        print(f"psnr_db={metrics['psnr_db']}")
    print(f"metrics={path}")


def cmd_hyper_phantom(args):
    _require(args, "out")
    spec = SpectralPhantomSpec(side=args.side, n_beads=args.beads, n_lambda=args.n_lambda,
                               fwhm_px=args.fwhm, total_flux=args.flux,
                               lambda_start_nm=args.lambda_start,
                               lambda_step_nm=args.lambda_step, seed=args.seed)
    _check_outputs(args.out)
    phantom = make_spectral_phantom(spec)
    cfm_io.write_cube(args.out, phantom.cube)
    print(f"total_flux={phantom.cube.values.sum():.6f}")
    print(f"sha256={_sha256_file(args.out)}")


def cmd_hyper_reconstruct(args):
    _require(args, "measurements", "selection", "out")
    _check_inputs(args.measurements, args.selection, args.ref)
    _check_outputs(args.out, args.metrics, args.trace, args.figure)
    sel, indexer = _load_selection(args.selection)
    meas, meta = cfm_io.read_measurements(args.measurements, sel)
    if meas.values.ndim == 1:
        meas = type(meas)(sel, meas.values[:, None], meas.illumination_scale, meas.noise_model)
    kind = "dirac" if args.spectral_basis == "dirac" else "wavelet_orthonormal"
    basis = _basis(kind, args.filter, args.levels)
    op = SensingOperator(indexer, sel, meas.illumination_scale)
    res = hyper_solve(meas, op, basis, _solver_config(args))
    n_lambda = res.image.shape[2]
    axis = (float(meta.get("lambda_start_nm", 0.0))
            + float(meta.get("lambda_step_nm", 1.0)) * np.arange(n_lambda))
    cube = HyperCube(np.maximum(res.image, 0.0), axis)
    cfm_io.write_cube(args.out, cube)
    metrics = _solve_metrics(args, res, {"spectral_basis": args.spectral_basis,
                                         "filter": args.filter, "levels": args.levels})
    pooled = pool_bands(cube, RGB_BANDS) if args.ref or args.figure else None
    if args.ref:
        ref = cfm_io.read_cube(args.ref)
        if ref.values.shape != cube.values.shape:
            raise SizeError("reference cube shape differs from the reconstruction")
        ref_pooled = pool_bands(ref, RGB_BANDS)
        metrics["band_psnr_db"] = {k: _fmt_psnr(psnr(pooled[k], ref_pooled[k])) for k in pooled}
    path = _write_solve_outputs(args, res, metrics, args.out)
    if args.figure:
        from .plotting import plot_image
        composite = np.stack([pooled[k] for k in ("red", "green", "blue")], axis=2)
        plot_image(composite.sum(axis=2), args.figure, "pooled bands (sum)")
    print(f"iterations={res.iterations_used} residual_norm={res.residual_norm:.6g}")
    print(f"metrics={path}")


def _sweep_point(job):
    spec, ratio, scale, seed, basis, cfg = job
    return psnr_sweep(spec, [ratio], [scale], [seed], basis, cfg)[0]


def cmd_sweep(args):
    _require(args, "out")
    figure = _report_figure(args)
    _check_outputs(args.out, figure)
    if args.seeds < 1:
        raise ParameterError("--seeds must be at least 1")
    spec = BeadPhantomSpec(side=args.side, n_beads=args.beads, fwhm_px=args.fwhm,
                           total_flux=args.flux, seed=args.phantom_seed)
    basis = _basis(BASIS_KINDS[args.basis], args.filter, args.levels, args.weights)
    cfg = _solver_config(args)
    for r in args.ratios:
        m_from_ratio(spec.side ** 2, r)
    for s in args.scales:
        _positive("--scales", s)
    jobs = [(spec, r, s, seed, basis, cfg)
            for r in args.ratios for s in args.scales for seed in range(args.seeds)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    cfm_io.write_csv(args.out, ["undersampling_ratio", "illumination_scale", "psnr_db", "seed"],
                     ([r, s, _fmt_psnr(p), seed] for r, s, p, seed in rows))
    med = median_psnr(rows)
    for (r, s), v in sorted(med.items()):
        print(f"ratio={r:g} scale={s:g} median_psnr_db={v:.3f}")
    if figure:
        from .plotting import plot_psnr_curves
        plot_psnr_curves(med, figure)


def cmd_noise_study(args):
    _require(args, "out")
    _check_inputs(args.image)
    figure = _report_figure(args)
    _check_outputs(args.out, figure)
    if args.image:
        x = cfm_io.read_image(args.image)
    else:
        x = np.full((args.side, args.side), float(args.value))
    if x.shape[0] > MAX_NOISE_STUDY_SIDE:
        raise ParameterError(
            f"noise-study side {x.shape[0]} exceeds {MAX_NOISE_STUDY_SIDE}; the Monte Carlo "
            "cost grows as N^2 log N per trial, so use a smaller image or crop it")
    cfg = NoiseStudyConfig(n_trials=args.trials, lambda_cs=args.scale,
                           special_pixel_zero=not args.keep_special_pixel,
                           background_offset=args.background, seed=args.seed)
    study = variance_study(x, cfg)
    rel = study.relative_error()
    side = x.shape[0]
    rows = ([i // side, i % side, float(study.empirical.flat[i]), float(study.theory.flat[i]),
             float(rel.flat[i])] for i in range(side * side))
    cfm_io.write_csv(args.out, ["row", "col", "empirical_variance", "theory_variance",
                                "relative_error"], rows)
    verdict = "PASS" if study.passes(args.tol) else "FAIL"
    print(f"max_relative_error={rel.max():.4f} tolerance={args.tol} {verdict}")
    if figure:
        from .plotting import plot_variance_maps
        plot_variance_maps(study.empirical, study.theory, figure)


COMMANDS = {"phantom": cmd_phantom, "acquire": cmd_acquire, "reconstruct": cmd_reconstruct,
            "hyper-phantom": cmd_hyper_phantom, "hyper-acquire": cmd_hyper_acquire,
            "hyper-reconstruct": cmd_hyper_reconstruct, "sweep": cmd_sweep,
            "noise-study": cmd_noise_study}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, SizeError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CFMError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
