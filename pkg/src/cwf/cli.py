"""Command-line front end: ``cwf simplify | metrics | rvd | replay``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from .energy import KernelConfig, density_field
from .mesh import MeshError, load_mesh, normalize_area, write_mesh
from .metrics import MetricsConfig, full_report
from .optimizer import OptimizerConfig, initialize_sites, simplify
from .remesh import extract_dual, quality_report
from .rvd import cell_component_counts, compute_rvd, compute_rvd_thinplate, export_rvd
from .spatial import SurfaceIndex

log = logging.getLogger("cwf")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_OPT = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _versions() -> dict:
    import numba
    import scipy
    try:
        from importlib.metadata import version
        own = version("artifact")
    except Exception:  # not installed as a distribution
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "cwf": own, "platform": platform.platform()}


def _sha256(path) -> str | None:
    if not path or not os.path.exists(path):
        return None
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("CWF_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"CWF_THREADS must be an integer, got '{env}'")
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError("--threads must be >= 1")
    # numba kernels are serial; the cap applies to kd-tree queries
    return value


def _read_points(path: str) -> np.ndarray:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".npy":
        pts = np.load(path)
    elif ext in (".obj", ".ply"):
        pts = load_mesh(path).vertices
    else:
        pts = np.loadtxt(path, ndmin=2)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 3 or len(pts) == 0:
        raise ConfigError(f"{path}: expected rows of x y z")
    return pts[:, :3]


def _denormalized_rvd(d, mesh, transform):
    return dataclasses.replace(d, mesh=mesh, verts=transform.invert(d.verts))


# ---------------------------------------------------------------------------
# simplify


def _simplify_config(args) -> dict:
    return {
        "target_vertices": args.target_vertices, "lambda_na": args.lambda_na, "lambda_cvt": args.lambda_cvt,
        "tau": args.tau, "mu": args.mu, "grad_tol": args.grad_tol, "max_iters": args.max_iters,
        "init": args.init, "init_file": args.init_file, "density": args.density, "bias": args.bias,
        "seed": args.seed, "thin_fix": not args.no_thin_fix,
    }


def cmd_simplify(args) -> int:
    t0 = time.perf_counter()
    workers = _threads(args.threads)
    cfg = _simplify_config(args)
    if args.target_vertices is None or args.target_vertices < 1:
        raise ConfigError("--target-vertices must be a positive integer")
    if not args.bias > 0:
        raise ConfigError("--bias must be positive")
    if args.init == "file" and not args.init_file:
        raise ConfigError("--init file needs --init-file")
    opt = OptimizerConfig(lambda_na0=args.lambda_na, lambda_cvt0=args.lambda_cvt, tau=args.tau, mu=args.mu,
                          grad_tol=args.grad_tol, max_iters=args.max_iters, seed=args.seed)

    src = load_mesh(args.input)
    mesh, transform = normalize_area(src)
    density = None if args.density == "uniform" else density_field(mesh, args.density)
    kernel = KernelConfig(args.lambda_na, args.lambda_cvt, density)
    points = None
    if args.init == "file":
        points = transform.apply(_read_points(args.init_file))

    index = SurfaceIndex(mesh, workers)
    init = "custom" if args.init == "file" else args.init
    sites0 = initialize_sites(mesh, args.target_vertices, init, args.seed, points, index)
    bias = args.bias * mesh.bbox_diagonal

    def progress(r):
        log.info("iter %3d  lambda_cvt %.4g  E_na %.6e  E_cvt %.6e  |g| %.3e",
                 r.iter, r.lambda_cvt, r.e_na, r.e_cvt, r.grad_norm)

    sites, d, trace = simplify(mesh, opt, kernel, sites=sites0, thin_plate=not args.no_thin_fix,
                               bias=bias, callback=progress, workers=workers)
    dual = extract_dual(d, sites).denormalized(transform)
    q = quality_report(dual)

    out = args.output
    write_mesh(dual.mesh, out)
    outputs = {"mesh": out}
    if args.trace_csv:
        trace.to_csv(args.trace_csv)
        outputs["trace_csv"] = args.trace_csv
    if args.export_rvd:
        export_rvd(_denormalized_rvd(d, src, transform), args.export_rvd)
        outputs["rvd"] = args.export_rvd
    manifest_path = args.manifest or os.path.splitext(out)[0] + ".manifest.json"
    manifest = {
        "command": "simplify",
        "input": os.path.abspath(args.input),
        "input_sha256": _sha256(args.input),
        "outputs": {k: os.path.abspath(v) for k, v in outputs.items()},
        "output_sha256": {k: _sha256(v) for k, v in outputs.items()},
        "config": cfg,
        "seed": args.seed,
        "normalization": transform.to_dict(),
        "versions": _versions(),
        "stop_reason": trace.stop_reason,
        "iterations": trace.records[-1].iter,
        "initial_e_na": trace.records[0].e_na,
        "final_e_na": trace.records[-1].e_na,
        "final_e_cvt": trace.records[-1].e_cvt,
        "dual": {"vertices": dual.mesh.n_vertices, "faces": dual.mesh.n_faces,
                 "open_b": q.open_b, "nmv": q.nmv},
        "wallclock": time.perf_counter() - t0,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"{out}: {dual.mesh.n_vertices} vertices, {dual.mesh.n_faces} faces; "
          f"stop: {trace.stop_reason} after {trace.records[-1].iter} iterations; "
          f"OpenB {q.open_b}, NMV {q.nmv}; TriangleQ mean {q.triangle_q_mean:.4f}")
    if trace.stop_reason == "line-search-failure":
        print("optimization failed: line search failed twice in a row (partial outputs written)",
              file=sys.stderr)
        return EXIT_OPT
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics

_COLUMNS = ("cd", "hd", "f1", "nc", "ecd", "ef1", "triangle_q_mean", "triangle_q_min", "open_b", "nmv")


def cmd_metrics(args) -> int:
    _threads(args.threads)
    cfg = MetricsConfig(sample_count=args.samples, f1_threshold=args.f1_threshold,
                        edge_dihedral_deg=args.edge_angle, edge_sample_count=args.edge_samples, seed=args.seed)
    gt = load_mesh(args.reference)
    simp = load_mesh(args.simplified)
    rep = full_report(gt, simp, cfg)
    row = rep.to_dict()
    print("  ".join(f"{c:>15s}" for c in _COLUMNS))
    print("  ".join(f"{row[c]:>15d}" if isinstance(row[c], int) else f"{row[c]:>15.6g}" for c in _COLUMNS))
    print(f"F1 distance threshold: {rep.config_echo['f1_distance']:.6g}")
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(rep.to_json(indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# rvd


def cmd_rvd(args) -> int:
    workers = _threads(args.threads)
    if not args.bias > 0:
        raise ConfigError("--bias must be positive")
    src = load_mesh(args.input)
    mesh, transform = normalize_area(src)
    index = SurfaceIndex(mesh, workers)
    if args.sites_file:
        sites = initialize_sites(mesh, 0, "custom", args.seed, transform.apply(_read_points(args.sites_file)), index)
    else:
        if args.sites is None or args.sites < 1:
            raise ConfigError("give --sites N or --sites-file")
        sites = initialize_sites(mesh, args.sites, args.init, args.seed, index=index)
    if args.no_thin_fix:
        d = compute_rvd(mesh, sites.positions)
    else:
        d = compute_rvd_thinplate(mesh, sites, args.bias * mesh.bbox_diagonal, index)
    counts = cell_component_counts(d)
    multi = np.flatnonzero(counts > 1)
    export_rvd(_denormalized_rvd(d, src, transform), args.output)
    print(f"{args.output}: {len(sites)} sites, {d.n_polygons} polygons, {len(d.empty_sites)} empty cells")
    if len(multi):
        print(f"multi-component cells: {len(multi)} (sites {', '.join(map(str, multi[:20]))}"
              f"{', ...' if len(multi) > 20 else ''})")
    else:
        print("multi-component cells: 0")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    try:
        with open(args.manifest) as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read manifest {args.manifest}: {exc}") from exc
    if man.get("command") != "simplify":
        raise ConfigError("only simplify manifests can be replayed")
    c = man["config"]
    outdir = args.output_dir
    outs = man["outputs"]

    def relocate(p):
        return os.path.join(outdir, os.path.basename(p)) if outdir else p

    argv = ["simplify", man["input"], "--target-vertices", str(c["target_vertices"]),
            "--lambda-na", repr(c["lambda_na"]), "--lambda-cvt", repr(c["lambda_cvt"]), "--tau", repr(c["tau"]),
            "--mu", repr(c["mu"]), "--grad-tol", repr(c["grad_tol"]), "--max-iters", str(c["max_iters"]),
            "--init", c["init"], "--density", c["density"], "--bias", repr(c["bias"]), "--seed", str(c["seed"]),
            "-o", relocate(outs["mesh"])]
    if c.get("init_file"):
        argv += ["--init-file", c["init_file"]]
    if not c.get("thin_fix", True):
        argv.append("--no-thin-fix")
    if "trace_csv" in outs:
        argv += ["--trace-csv", relocate(outs["trace_csv"])]
    if "rvd" in outs:
        argv += ["--export-rvd", relocate(outs["rvd"])]
    new_manifest = relocate(os.path.splitext(outs["mesh"])[0] + ".replay.json")
    argv += ["--manifest", new_manifest]
    if args.threads is not None:
        argv += ["--threads", str(args.threads)]
    code = main(argv)
    if code not in (EXIT_OK, EXIT_OPT):
        return code
    with open(new_manifest) as fh:
        new = json.load(fh)
    same = all(new["output_sha256"].get(k) == v for k, v in man["output_sha256"].items())
    print("replay matches recorded outputs" if same else "replay differs from recorded outputs")
    return code if same else EXIT_OPT


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="cwf", description="Feature-preserving mesh simplification by "
                                "restricted Voronoi site optimization.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simplify", help="optimize sites and write the dual mesh", formatter_class=fmt)
    s.add_argument("input", help="input mesh (.obj or .ply)")
    s.add_argument("--target-vertices", type=int, required=True, help="number of output vertices")
    s.add_argument("--lambda-na", type=float, default=1.0, help="normal-anisotropy weight")
    s.add_argument("--lambda-cvt", type=float, default=1.0, help="initial CVT weight")
    s.add_argument("--tau", type=float, default=0.95, help="per-iteration decay of the CVT weight")
    s.add_argument("--mu", type=float, default=1.05, help="stop when E_CVT rises above mu * its minimum")
    s.add_argument("--grad-tol", type=float, default=1e-8, help="gradient-norm stopping tolerance")
    s.add_argument("--max-iters", type=int, default=100, help="iteration cap")
    s.add_argument("--init", choices=("poisson", "random", "file"), default="poisson", help="site initialization")
    s.add_argument("--init-file", help="xyz/npy/obj points for --init file")
    s.add_argument("--density", choices=("uniform", "lfs"), default="uniform", help="CVT density")
    s.add_argument("--bias", type=float, default=0.01,
                   help="thin-plate twin offset as a fraction of the bbox diagonal")
    s.add_argument("--no-thin-fix", action="store_true", help="use the plain decomposition")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--export-rvd", help="write the final decomposition as a coloured OBJ")
    s.add_argument("--trace-csv", help="write the per-iteration trace")
    s.add_argument("--manifest", help="manifest path (default: OUTPUT with .manifest.json)")
    s.add_argument("--threads", type=int, default=None, help="worker threads (default: $CWF_THREADS or all cores)")
    s.add_argument("-o", "--output", required=True, help="output mesh (.obj or .ply)")
    s.set_defaults(func=cmd_simplify)

    m = sub.add_parser("metrics", help="compare a simplified mesh with its reference", formatter_class=fmt)
    m.add_argument("reference")
    m.add_argument("simplified")
    m.add_argument("--samples", type=int, default=100_000, help="surface samples per mesh")
    m.add_argument("--edge-samples", type=int, default=20_000, help="feature-edge samples per mesh")
    m.add_argument("--f1-threshold", type=float, default=0.005, help="F1 distance as a fraction of bbox diagonal")
    m.add_argument("--edge-angle", type=float, default=30.0, help="dihedral angle (degrees) of feature edges")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--json", help="write the report as JSON")
    m.add_argument("--threads", type=int, default=None)
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("rvd", help="compute and export a decomposition without optimizing", formatter_class=fmt)
    r.add_argument("input")
    r.add_argument("--sites", type=int, help="number of initialized sites")
    r.add_argument("--sites-file", help="xyz/npy/obj site positions")
    r.add_argument("--init", choices=("poisson", "random"), default="poisson")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--bias", type=float, default=0.01)
    r.add_argument("--no-thin-fix", action="store_true")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("-o", "--output", required=True, help="output OBJ (a .mtl is written next to it)")
    r.set_defaults(func=cmd_rvd)

    rp = sub.add_parser("replay", help="re-run a simplify manifest and compare outputs", formatter_class=fmt)
    rp.add_argument("manifest")
    rp.add_argument("--output-dir", help="write outputs here instead of the recorded paths")
    rp.add_argument("--threads", type=int, default=None)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, MeshError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
