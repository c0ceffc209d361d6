"""End-to-end acceptance checks. Each test prints one PASS/FAIL line for its criterion."""

import time
from math import factorial

import numpy as np
import pytest

from cwf.energy import KernelConfig, eval_energy
from cwf.mesh import TriangleMesh, manifold_report, normalize_area
from cwf.metrics import MetricsConfig, chamfer, fscore, full_report, hausdorff
from cwf.optimizer import OptimizerConfig, decay_schedule, simplify
from cwf.quadrature import ALBRECHT_COLLATZ, integrate_triangles
from cwf.remesh import extract_dual, triangle_quality
from cwf.rvd import SiteSet, cell_component_counts, compute_rvd, compute_rvd_thinplate
from cwf.shapes import convex_polyhedron, cube, square, thin_box
from cwf.spatial import sample_surface

from conftest import brute_nearest, cube_edges_coverage, termination_violations
from test_energy import GRADIENT_MESHES, assert_per_site_close, frozen_fd
from test_rvd import MESHES, locate, random_sites

RUNS = {}


def record(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nacceptance criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def feature_recovery(mesh, sites, d, trace, seconds, ratio_limit, reference=None):
    dual = extract_dual(d, sites)
    ratio = trace.records[-1].e_na / trace.records[0].e_na
    open_b, nmv = manifold_report(dual.mesh)
    ref = mesh if reference is None else reference
    edges = cube_edges_coverage(dual.vertices, ref, 0.01 * ref.bbox_diagonal)
    checks = {"ratio": ratio < ratio_limit, "manifold": (open_b, nmv) == (0, 0), "edges": edges == 12,
              "time": seconds < 60}
    detail = (f"E_NA ratio {ratio:.3g} (limit {ratio_limit:g}), OpenB {open_b}, NMV {nmv}, edges {edges}/12, "
              f"{seconds:.1f}s, stop {trace.stop_reason} at iter {trace.records[-1].iter}")
    return all(checks.values()), detail


def test_criterion_01_cube_feature_recovery(cube_run, capsys):
    r = cube_run
    RUNS["cube"] = r["trace"]
    assert r["mesh"].n_faces == 4800
    ok, detail = feature_recovery(r["mesh"], r["sites"], r["decomposition"], r["trace"], r["seconds"], 1e-6)
    record(capsys, 1, ok, detail)


def test_criterion_02_decay_arithmetic(capsys):
    v = decay_schedule(1.0, 0.95, 50)
    record(capsys, 2, 0.0769 <= v <= 0.0770, f"lambda after 50 iterations = {v:.6f}")


def test_criterion_03_quadrature_exactness(capsys):
    ref = [np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]), np.array([[0.0, 1, 0]])]
    worst = 0.0
    for a in range(ALBRECHT_COLLATZ.degree + 1):
        for b in range(ALBRECHT_COLLATZ.degree + 1 - a):
            got = integrate_triangles(*ref, lambda p: p[..., 0] ** a * p[..., 1] ** b)[0]
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            worst = max(worst, abs(got - exact) / exact)
    record(capsys, 3, worst <= 1e-12, f"degree {ALBRECHT_COLLATZ.degree}, worst relative error {worst:.2e}")


def test_criterion_04_frozen_gradients(capsys):
    cases = 0
    for name, make in GRADIENT_MESHES.items():
        mesh = make()
        for n in (5, 20, 60):
            x = sample_surface(mesh, n, n)[0]
            d = compute_rvd(mesh, x)
            rep = eval_energy(d, x)
            assert_per_site_close(frozen_fd(d, x, "e_cvt"), rep.grad_cvt, 1e-5)
            assert_per_site_close(frozen_fd(d, x, "e_na"), rep.grad_na, 1e-5)
            cases += 1
    record(capsys, 4, cases == 9, f"{cases} mesh/site-count cases within 1e-5 relative")


def test_criterion_05_partition_of_area(capsys):
    worst = 0.0
    for name, make in MESHES.items():
        mesh = make()
        for n in (1, 7, 60):
            sites = random_sites(mesh, n, seed=n)
            for d in (compute_rvd(mesh, sites.positions), compute_rvd_thinplate(mesh, sites)):
                worst = max(worst, abs(d.cell_areas.sum() - mesh.total_area) / mesh.total_area)
    agree = []
    for name in ("cube", "bumpy", "square"):
        mesh = MESHES[name]()
        sites = random_sites(mesh, 40, seed=11)
        d = compute_rvd(mesh, sites.positions)
        pts, _, fids = sample_surface(mesh, 20000, seed=5)
        agree.append(np.mean(locate(d, pts, fids) == brute_nearest(pts, sites.positions)[0]))
    ok = worst <= 1e-7 and min(agree) >= 0.9999
    record(capsys, 5, ok, f"worst area error {worst:.1e}, ownership agreement {min(agree):.5f}")


def test_criterion_06_thin_plate_repair(capsys):
    t = 0.005
    mesh = thin_box(t, 16)
    ring = np.arange(7) * 2 * np.pi / 7
    top = np.vstack([[0, 0], np.c_[0.35 * np.cos(ring), 0.35 * np.sin(ring)]])
    sites = SiteSet.on_surface(mesh, np.c_[top, np.full(8, t / 2)])
    plain = cell_component_counts(compute_rvd(mesh, sites.positions)).max()
    fixed = cell_component_counts(compute_rvd_thinplate(mesh, sites)).max()
    thick, _ = normalize_area(cube(12))
    tsites = SiteSet.on_surface(thick, sample_surface(thick, 150, 0)[0])
    identical = compute_rvd_thinplate(thick, tsites).same_polygons(compute_rvd(thick, tsites.positions))
    ok = plain >= 2 and fixed == 1 and identical
    record(capsys, 6, ok, f"8 top-face sites: max components plain {plain}, repaired {fixed}; "
                          f"thick cube identical {identical}")


def test_criterion_07_metric_identities(capsys):
    mesh = cube(6)
    rep = full_report(mesh, mesh, MetricsConfig(sample_count=20000, edge_sample_count=5000))
    ident = (rep.cd <= 1e-9 and rep.hd <= 1e-9 and rep.ecd == 0 and rep.f1 == 1 and rep.nc == 1 and rep.ef1 == 1)
    q = triangle_quality([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]])[0]
    rng = np.random.default_rng(0)
    exact = True
    for _ in range(20):
        x = rng.uniform(-1, 1, (rng.integers(1, 201), 3))
        y = rng.uniform(-1, 1, (rng.integers(1, 201), 3))
        dxy, dyx = brute_nearest(x, y)[1], brute_nearest(y, x)[1]
        exact &= chamfer(x, y) == 0.5 * dxy.mean() + 0.5 * dyx.mean()
        exact &= hausdorff(x, y) == max(dxy.max(), dyx.max())
        p, r = np.mean(dyx <= 0.1), np.mean(dxy <= 0.1)
        exact &= fscore(x, y, 0.1) == (0.0 if p + r == 0 else 2 * p * r / (p + r))
    ok = ident and q == 1.0 and exact
    record(capsys, 7, ok, f"identity row {ident}, TriangleQ(equilateral) = {float(q)!r}, brute-force agreement {exact}")


def test_criterion_08_pure_cvt_monotone(capsys):
    cfg = OptimizerConfig(lambda_na0=0.0, tau=1.0, seed=1)
    _, _, trace = simplify(square(10), cfg, KernelConfig(0.0, 1.0), n=50)
    RUNS["pure-cvt"] = trace
    rise = np.diff(trace.column("e_cvt")).max()
    ok = rise <= 1e-12 * trace.records[0].e_cvt
    record(capsys, 8, ok, f"{len(trace) - 1} iterations, largest step change {rise:.2e}, stop {trace.stop_reason}")


def test_criterion_09_termination_soundness(capsys):
    rng = np.random.default_rng(1)
    p = rng.normal(size=(30, 3))
    hull, _ = normalize_area(convex_polyhedron(p / np.linalg.norm(p, axis=1)[:, None]))
    RUNS["hull-300"] = simplify(hull, OptimizerConfig(seed=0), n=300)[2]
    small, _ = normalize_area(cube(8))
    RUNS["grad-tol"] = simplify(small, OptimizerConfig(grad_tol=1e3), n=10)[2]
    RUNS["max-iters"] = simplify(small, OptimizerConfig(max_iters=3), n=10)[2]
    bad = [list(RUNS)[k] for k in termination_violations(list(RUNS.values()))]
    rises = sum(t.stop_reason == "cvt-rise" for t in RUNS.values())
    ok = not bad and rises >= 1
    reasons = ", ".join(f"{k}={t.stop_reason}" for k, t in RUNS.items())
    record(capsys, 9, ok, f"{len(RUNS)} runs ({reasons}); cvt-rise runs {rises}; violations {bad}")


def test_criterion_10_noisy_cube(capsys):
    base = cube(20)
    rng = np.random.default_rng(0)
    noisy = TriangleMesh(base.vertices + rng.normal(0, 0.0025 * base.bbox_diagonal, base.vertices.shape), base.faces)
    mesh, tf = normalize_area(noisy)
    # noise pushes the bbox outward, so locate the edges on the clean cube in the same frame
    clean = TriangleMesh(tf.apply(base.vertices), base.faces)
    t0 = time.perf_counter()
    sites, d, trace = simplify(mesh, OptimizerConfig(seed=0), n=200)
    seconds = time.perf_counter() - t0
    RUNS["noisy-cube"] = trace
    ok, detail = feature_recovery(mesh, sites, d, trace, seconds, 1e-3, clean)
    record(capsys, 10, ok, detail)
