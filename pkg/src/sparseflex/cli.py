"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 I/O or parse error, 4 validation
error, 5 numerical abort.

Config files are JSON objects with optional sections ``global`` (seed,
threads, verbose), ``voxelize`` (res, samples, margin), ``fit`` (any
:class:`~sparseflex.optimize.FitConfig` field), ``camera`` (camera schema of
:mod:`sparseflex.frustum`) and ``bench`` (shape, res, alphas, repeats,
image_size). Unknown sections or keys are rejected. Command line flags
override file values.
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from ._validation import ContractError
from .bench import ordering_violations, run_bench
from .flexicubes import FlexParams, extract, load_params, save_params
from .frustum import adapt_frustum, camera_from_dict, load_camera
from .grid import load_grid, save_grid, voxelize_points
from .meshio import MeshParseError, check_orientation, load_mesh, normalize_mesh, sample_surface, save_mesh
from .metrics import boundary_stats, evaluate_meshes
from .optimize import FitConfig, NumericalAbort, fit
from .shapes import SHAPES, sample_sdf

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4, 5

DEFAULT_VOXEL_SAMPLES = 500_000

_SECTIONS = {
    "global": {"seed", "threads", "verbose"},
    "voxelize": {"res", "samples", "margin"},
    "fit": None,
    "camera": None,
    "bench": {"shape", "res", "alphas", "repeats", "image_size"},
}

logger = logging.getLogger("sparseflex")


def load_config(path):
    """Read and validate a sectioned JSON config."""
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    for name, keys in _SECTIONS.items():
        sec = cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ValueError(f"{path}: section {name!r} must be an object")
        if keys is not None and set(sec) - keys:
            raise ValueError(f"{path}: unknown keys in {name!r}: {sorted(set(sec) - keys)}")
    if "fit" in cfg:
        FitConfig.from_dict(cfg["fit"])
    if "camera" in cfg:
        camera_from_dict(cfg["camera"])
    return cfg


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _ratio(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1], got {v}")
    return v


def _int_list(text):
    return [_positive_int(t) for t in text.split(",") if t]


def _ratio_list(text):
    return [_ratio(t) for t in text.split(",") if t]


def _seed(args, section=None):
    if getattr(args, "seed", None) is not None:
        return args.seed
    if section is not None and "seed" in section:
        return int(section["seed"])
    return 0


def _sdf_params(grid, spec):
    """Parameters from an analytic shape name or a saved ``.npz`` parameter file."""
    if spec in SHAPES:
        return FlexParams.default(grid, sample_sdf(grid, SHAPES[spec][0]()))
    return load_params(spec, grid)


def cmd_voxelize(args):
    mesh, _ = normalize_mesh(load_mesh(args.mesh))
    pc = sample_surface(mesh, args.samples, _seed(args))
    grid = voxelize_points(pc, args.res, margin=args.margin)
    save_grid(grid, args.out)
    print(f"voxels={grid.n_voxels} corners={grid.n_corners} resolution={grid.resolution}")
    return EXIT_OK


def cmd_extract(args):
    grid = load_grid(args.grid)
    params = _sdf_params(grid, args.sdf)
    active = None
    if args.camera is not None:
        cam = load_camera(args.camera)
        fr = adapt_frustum(grid, cam, args.alpha)
        active = fr.active
        print(f"achieved_ratio={fr.achieved_ratio:.6f} active={len(fr.active)} reached={fr.reached}")
    mesh = extract(grid, params, active)
    if args.out:
        save_mesh(mesh, args.out)
    bs = boundary_stats(mesh)
    print(f"vertices={mesh.n_vertices} faces={mesh.n_faces} boundary_edges={bs.boundary_edges} "
          f"boundary_loops={bs.boundary_loops} euler={bs.euler_characteristic}")
    return EXIT_OK


def build_fit_config(args, file_cfg):
    section = dict(file_cfg.get("fit", {}))
    glob = file_cfg.get("global", {})
    if args.seed is not None:
        section["seed"] = args.seed
    elif "seed" in glob and "seed" not in section:
        section["seed"] = int(glob["seed"])
    if args.iterations is not None:
        section["iterations"] = args.iterations
    return FitConfig.from_dict(section)


def cmd_fit(args):
    file_cfg = load_config(args.config)
    cfg = build_fit_config(args, file_cfg)
    target = load_mesh(args.target)
    check_orientation(target)
    if args.normalize:
        target, _ = normalize_mesh(target)
    params, grid, report = fit(target, cfg)
    mesh = extract(grid, params)
    save_mesh(mesh, args.out)
    report.save(args.report)
    metrics_path = args.metrics or str(Path(args.report).with_suffix(".metrics.json"))
    Path(metrics_path).write_text(json.dumps(report.final_metrics, indent=2))
    if args.params:
        save_params(params, args.params)
    fm = report.final_metrics
    print(f"cd_e4={fm['cd_e4']:.6f} f1_001={fm['f1_001']:.3f} f1_01={fm['f1_01']:.3f} "
          f"wall_clock_s={report.wall_clock_s:.1f}")
    return EXIT_OK


def cmd_cull(args):
    grid = load_grid(args.grid)
    cam = load_camera(args.camera)
    fr = adapt_frustum(grid, cam, args.alpha)
    print(f"achieved_ratio={fr.achieved_ratio:.6f} active={len(fr.active)} total={grid.n_voxels} "
          f"near={fr.near:.9g} far={fr.far:.9g} iterations={fr.iterations} reached={fr.reached}")
    if args.out:
        mesh = extract(grid, _sdf_params(grid, args.sdf), fr.active)
        save_mesh(mesh, args.out)
        print(f"faces={mesh.n_faces}")
    return EXIT_OK


def cmd_bench(args):
    section = load_config(args.config).get("bench", {}) if args.config else {}
    shape = args.shape or section.get("shape", "sphere")
    res = args.res or section.get("res", [64, 128, 256])
    alphas = args.alphas or section.get("alphas", [0.1, 0.3, 1.0])
    repeats = args.repeats or section.get("repeats", 5)
    image_size = section.get("image_size", 128)
    # alpha = 1 is the full sparse row, which is always measured
    sectional = [a for a in alphas if a < 1.0]
    report = run_bench(shape, res, sectional, repeats, _seed(args), image_size)
    report.threads = args.threads
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    if args.gnuplot:
        Path(args.gnuplot).write_text(report.gnuplot())
    sys.stdout.write(text)
    for p in ordering_violations(report):
        print(f"# ordering violation: {p}")
    return EXIT_OK


def cmd_metrics(args):
    a, b = load_mesh(args.a), load_mesh(args.b)
    report = evaluate_meshes(a, b, args.samples, _seed(args))
    if args.out:
        report.save(args.out)
    print(report.summary())
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sparseflex", description="Sparse Flexicubes toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--threads", type=_positive_int, default=1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    # per-command --seed overrides the global one without clobbering it when absent
    seed_kw = dict(type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("voxelize", help="normalise, sample and voxelise a mesh")
    p.add_argument("mesh")
    p.add_argument("--res", type=_positive_int, required=True)
    p.add_argument("--samples", type=_positive_int, default=DEFAULT_VOXEL_SAMPLES)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("extract", help="extract a mesh from a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--sdf", default="sphere", help="shape name or saved parameter file")
    p.add_argument("--camera")
    p.add_argument("--alpha", type=_ratio, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit", help="fit parameters to a target mesh")
    p.add_argument("--target", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--metrics")
    p.add_argument("--params")
    p.add_argument("--iterations", type=int)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--seed", **seed_kw)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cull", help="adaptive frustum activation")
    p.add_argument("--grid", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--alpha", type=_ratio, required=True)
    p.add_argument("--sdf", default="sphere")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cull)

    p = sub.add_parser("bench", help="dense / sparse / sectional benchmark")
    p.add_argument("--shape", choices=sorted(SHAPES))
    p.add_argument("--res", type=_int_list)
    p.add_argument("--alphas", type=_ratio_list)
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--gnuplot")
    p.add_argument("--seed", **seed_kw)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="Chamfer distance and F-scores between two meshes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--samples", type=_positive_int, default=100_000)
    p.add_argument("--out")
    p.add_argument("--seed", **seed_kw)
    p.set_defaults(func=cmd_metrics)
    return parser


def _set_threads(n):
    import numba

    # probing the threading layer may warn about an old TBB; any layer gives identical results
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", numba.NumbaWarning)
        try:
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        except ValueError:
            pass


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"sparseflex: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MeshParseError, json.JSONDecodeError) as exc:
        print(f"sparseflex: parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"sparseflex: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, ValueError, OverflowError, KeyError) as exc:
        print(f"sparseflex: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
