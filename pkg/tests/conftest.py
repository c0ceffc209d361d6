import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import cwf.optimizer
from cwf.mesh import TriangleMesh, normalize_area
from cwf.shapes import cube

# Every optimizer run in the session is recorded so termination can be audited at the end.
SUITE_TRACES = []
_simplify = cwf.optimizer.simplify


@functools.wraps(_simplify)
def _recording_simplify(*args, **kwargs):
    out = _simplify(*args, **kwargs)
    SUITE_TRACES.append(out[2])
    return out


cwf.optimizer.simplify = _recording_simplify
simplify = _recording_simplify
OptimizerConfig = cwf.optimizer.OptimizerConfig


def termination_violations(traces, mu=1.05):
    """Indices of traces without a known stop reason or with an unsupported cvt-rise claim."""
    bad = []
    for k, t in enumerate(traces):
        if t.stop_reason not in cwf.optimizer.STOP_REASONS:
            bad.append(k)
        elif t.stop_reason == "cvt-rise":
            e = t.column("e_cvt")
            if not e[-1] >= mu * e[:-1].min():
                bad.append(k)
    return bad


def pytest_terminal_summary(terminalreporter):
    if not SUITE_TRACES:
        return
    bad = termination_violations(SUITE_TRACES)
    reasons = {}
    for t in SUITE_TRACES:
        reasons[t.stop_reason] = reasons.get(t.stop_reason, 0) + 1
    status = "PASS" if not bad else "FAIL"
    terminalreporter.write_line(f"acceptance criterion  9 (suite-wide): {status}  {len(SUITE_TRACES)} optimizer "
                                f"runs, stop reasons {reasons}, violations {len(bad)}")


settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def brute_nearest(src, dst):
    """O(n*m) nearest neighbour: index and distance, lowest index on ties."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    d = src[:, None, :] - dst[None, :, :]
    dist = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
    idx = dist.argmin(axis=1)
    return idx, dist[np.arange(len(src)), idx]


def cube_edges_coverage(vertices, mesh, tol):
    """Number of the 12 axis-aligned bbox edges of ``mesh`` with a vertex within ``tol``."""
    lo, hi = mesh.bbox
    covered = 0
    for ax in range(3):
        o = [a for a in range(3) if a != ax]
        for a in (lo, hi):
            for b in (lo, hi):
                d = np.hypot(vertices[:, o[0]] - a[o[0]], vertices[:, o[1]] - b[o[1]])
                covered += bool(d.min() < tol)
    return covered


@pytest.fixture(scope="session")
def unit_cube():
    mesh, transform = normalize_area(cube(20))
    return mesh, transform


@pytest.fixture(scope="session")
def cube_run(unit_cube):
    """Default-parameter optimization of 200 sites on the normalized cube, shared across modules."""
    import time
    mesh, _ = unit_cube
    t0 = time.perf_counter()
    sites, d, trace = simplify(mesh, OptimizerConfig(seed=0), n=200)
    return {"mesh": mesh, "sites": sites, "decomposition": d, "trace": trace,
            "seconds": time.perf_counter() - t0}


def tetra_mesh():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, f)
