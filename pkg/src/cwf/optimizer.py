"""L-BFGS site optimization with a decaying CVT weight."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

from .energy import EnergyReport, KernelConfig, eval_energy
from .mesh import TriangleMesh
from .rvd import Decomposition, SiteSet, compute_rvd, compute_rvd_thinplate, default_bias
from .spatial import SurfaceIndex, sample_surface

log = logging.getLogger(__name__)

STOP_REASONS = ("grad-tol", "cvt-rise", "max-iters", "line-search-failure")


def decay_schedule(lambda0: float, tau: float, i: int) -> float:
    """CVT weight after ``i`` decays: ``lambda0 * tau**i``."""
    if i < 0:
        raise ValueError("iteration index must be non-negative")
    return float(lambda0) * float(tau) ** int(i)


@dataclass(frozen=True)
class OptimizerConfig:
    lambda_na0: float = 1.0
    lambda_cvt0: float = 1.0
    tau: float = 0.95
    mu: float = 1.05
    grad_tol: float = 1e-8
    max_iters: int = 100
    lbfgs_memory: int = 7
    seed: int = 0
    c1: float = 1e-4
    c2: float = 0.9

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.lambda_na0 < 0 or self.lambda_cvt0 < 0 or self.lambda_na0 + self.lambda_cvt0 == 0:
            raise ValueError("weights must be non-negative and not both zero")


@dataclass
class TraceRecord:
    iter: int
    lambda_cvt: float
    e_na: float
    e_cvt: float
    e_total: float
    grad_norm: float
    wallclock: float
    evaluations: int = 0
    accepted: bool = True


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    stop_reason: str | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "lambda_cvt", "e_na", "e_cvt", "e_total", "grad_norm", "stop_reason"])
            last = len(self.records) - 1
            for k, r in enumerate(self.records):
                w.writerow([r.iter, repr(r.lambda_cvt), repr(r.e_na), repr(r.e_cvt), repr(r.e_total),
                            repr(r.grad_norm), self.stop_reason if k == last else ""])

    def to_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.records]


# ---------------------------------------------------------------------------
# initialization


def _poisson_disk(mesh: TriangleMesh, n: int, rng: np.random.Generator):
    """Dart throwing on the surface with a hash grid; shrinks the radius by 0.9 when stuck."""
    radius = 0.7 * np.sqrt(mesh.total_area / n)
    level = 0
    accepted: list[np.ndarray] = []
    faces: list[int] = []
    while True:
        cell = radius
        grid: dict[tuple[int, int, int], list[int]] = {}
        for k, p in enumerate(accepted):
            grid.setdefault(tuple(np.floor(p / cell).astype(int)), []).append(k)
        r2 = radius * radius
        attempts = 0
        budget = 100 * n
        while len(accepted) < n and attempts < budget:
            batch = min(max(n, 256), budget - attempts)
            pts, _, fids = sample_surface(mesh, batch, int(rng.integers(2**63)))
            for p, fid in zip(pts, fids):
                attempts += 1
                key = np.floor(p / cell).astype(int)
                ok = True
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        for dz in (-1, 0, 1):
                            for j in grid.get((key[0] + dx, key[1] + dy, key[2] + dz), ()):
                                q = accepted[j] - p
                                if q @ q < r2:
                                    ok = False
                                    break
                            if not ok:
                                break
                        if not ok:
                            break
                    if not ok:
                        break
                if ok:
                    grid.setdefault(tuple(key), []).append(len(accepted))
                    accepted.append(p)
                    faces.append(int(fid))
                    if len(accepted) == n:
                        break
        if len(accepted) >= n:
            return np.array(accepted), np.array(faces), radius, level
        level += 1
        radius *= 0.9
        log.info("poisson-disk: %d/%d placed after %d darts; relaxing radius to %.3g (level %d)",
                 len(accepted), n, attempts, radius, level)


def initialize_sites(mesh: TriangleMesh, n: int, strategy: str = "poisson", seed: int = 0,
                     points=None, index: SurfaceIndex | None = None) -> SiteSet:
    """Initial site positions on the surface.

    ``strategy`` is ``"poisson"`` (dart throwing, minimum spacing
    0.7*sqrt(area/n)), ``"random"`` (area-uniform) or ``"custom"`` (``points``
    projected onto the surface).
    """
    if strategy in ("poisson", "poisson-disk"):
        if n < 1:
            raise ValueError("need at least one site")
        pts, fids, radius, level = _poisson_disk(mesh, n, np.random.default_rng(seed))
        return SiteSet(pts, fids, meta={"strategy": "poisson", "radius": radius, "relax_level": level})
    if strategy == "random":
        if n < 1:
            raise ValueError("need at least one site")
        pts, _, fids = sample_surface(mesh, n, seed)
        return SiteSet(pts, fids, meta={"strategy": "random"})
    if strategy in ("custom", "file"):
        if points is None:
            raise ValueError("custom initialization needs points")
        sites = SiteSet.on_surface(mesh, np.asarray(points, dtype=float).reshape(-1, 3), index)
        sites.meta["strategy"] = "custom"
        return sites
    raise ValueError(f"unknown initialization strategy '{strategy}'")


# ---------------------------------------------------------------------------
# optimization


class _Problem:
    """Evaluates energy and gradient at arbitrary site positions, caching the last few points."""

    def __init__(self, mesh, kernel, thin_plate, bias, index):
        self.mesh = mesh
        self.kernel = kernel
        self.thin_plate = thin_plate
        self.bias = bias
        self.index = index
        self.n_evals = 0
        self._cache: dict[bytes, tuple[Decomposition, EnergyReport]] = {}
        self._order: deque = deque()

    def decompose(self, x: np.ndarray) -> Decomposition:
        if self.thin_plate:
            _, fids, _ = self.index.closest_points(x)
            sites = SiteSet(x, fids).with_bias(self.mesh, self.bias)
            return compute_rvd_thinplate(self.mesh, sites, self.bias)
        return compute_rvd(self.mesh, x)

    def evaluate(self, x: np.ndarray) -> tuple[Decomposition, EnergyReport]:
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = self.decompose(x)
        rep = eval_energy(d, x, self.kernel)
        self.n_evals += 1
        self._cache[key] = (d, rep)
        self._order.append(key)
        if len(self._order) > 8:
            self._cache.pop(self._order.popleft(), None)
        return d, rep


def _two_loop(g: np.ndarray, memory, gamma: float) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def _reseed_empty(d: Decomposition, x: np.ndarray, empty: np.ndarray) -> np.ndarray:
    """Move each empty site to the barycenter of the largest polygon of a large cell."""
    x = x.copy()
    order = np.argsort(-d.cell_areas, kind="stable")
    for k, site in enumerate(empty):
        donor = order[k % len(order)]
        polys = np.flatnonzero(d.owner == donor)
        p = polys[np.argmax(d.areas[polys])]
        ring = d.polygon(p)
        # area-weighted barycenter of the fan
        a, b, c = ring[0], ring[1:-1], ring[2:]
        w = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        bary = ((a + b + c) / 3.0 * w[:, None]).sum(axis=0) / w.sum()
        if np.linalg.norm(bary - x[donor]) < 1e-9 * d.mesh.bbox_diagonal:
            far = ring[np.argmax(np.linalg.norm(ring - x[donor], axis=1))]
            bary = 0.5 * (bary + far)
        log.info("site %d has an empty cell; re-seeding inside the cell of site %d", site, donor)
        x[site] = bary
    return x


def simplify(mesh: TriangleMesh, config: OptimizerConfig = OptimizerConfig(),
             kernel: KernelConfig | None = None, n: int | None = None, *,
             init: str = "poisson", init_points=None, sites: SiteSet | None = None,
             thin_plate: bool = True, bias: float | None = None, callback=None,
             workers: int = 1):
    """Minimize the combined functional over ``n`` sites on ``mesh``.

    Each outer iteration takes one L-BFGS step (strong Wolfe line search, the
    decomposition recomputed at every evaluation), projects the sites back to
    the surface, then decays the CVT weight by ``tau``. Stops on a small
    gradient, on a rise of the raw CVT energy above ``mu`` times its running
    minimum, on repeated line-search failure, or after ``max_iters``.

    Returns ``(sites, decomposition, trace)``; ``trace.stop_reason`` says which
    condition fired.
    """
    t0 = time.perf_counter()
    if kernel is None:
        kernel = KernelConfig(config.lambda_na0, config.lambda_cvt0)
    index = SurfaceIndex(mesh, workers)
    if sites is None:
        if n is None:
            raise ValueError("give either n or initial sites")
        sites = initialize_sites(mesh, n, init, config.seed, init_points, index)
    x = SiteSet.on_surface(mesh, sites.positions, index).positions
    n = len(x)
    if bias is None:
        bias = default_bias(mesh)
    problem = _Problem(mesh, kernel, thin_plate, bias, index)
    lam_na = config.lambda_na0

    d, rep = problem.evaluate(x)
    if len(d.empty_sites):
        x = SiteSet.on_surface(mesh, _reseed_empty(d, x, d.empty_sites), index).positions
        d, rep = problem.evaluate(x)

    trace = IterationTrace()
    lam = decay_schedule(config.lambda_cvt0, config.tau, 0)
    _, g = rep.combined(lam_na, lam)
    trace.records.append(TraceRecord(0, lam, rep.e_na, rep.e_cvt, lam_na * rep.e_na + lam * rep.e_cvt,
                                     float(np.linalg.norm(g)), time.perf_counter() - t0, problem.n_evals))
    if callback:
        callback(trace.records[-1])

    memory: deque = deque(maxlen=config.lbfgs_memory)
    gamma = 1.0 / (2.0 * (mesh.total_area / n) * (lam_na + config.lambda_cvt0))
    cvt_min = rep.e_cvt
    stop = None
    if np.linalg.norm(g) < config.grad_tol:
        stop = "grad-tol"

    it = 0
    while stop is None:
        if it >= config.max_iters:
            stop = "max-iters"
            break
        it += 1
        lam = decay_schedule(config.lambda_cvt0, config.tau, it)
        f0, g0 = rep.combined(lam_na, lam)
        g0 = g0.ravel()

        def fun(z, lam=lam):
            return problem.evaluate(z.reshape(-1, 3))[1].combined(lam_na, lam)[0]

        def jac(z, lam=lam):
            return problem.evaluate(z.reshape(-1, 3))[1].combined(lam_na, lam)[1].ravel()

        direction = _two_loop(g0, memory, gamma)
        if direction @ g0 >= 0:
            memory.clear()
            direction = -gamma * g0
        alpha = None
        for attempt in range(2):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LineSearchWarning)
                alpha, *_ = line_search(fun, jac, x.ravel(), direction, g0, f0,
                                        c1=config.c1, c2=config.c2, maxiter=20)
            if alpha is not None:
                break
            log.info("iteration %d: line search failed; restarting from steepest descent", it)
            memory.clear()
            direction = -gamma * g0
        if alpha is None:
            stop = "line-search-failure"
            it -= 1
            break

        x_new = SiteSet.on_surface(mesh, x + alpha * direction.reshape(-1, 3), index).positions
        d_new, rep_new = problem.evaluate(x_new)
        if len(d_new.empty_sites):
            x_new = SiteSet.on_surface(mesh, _reseed_empty(d_new, x_new, d_new.empty_sites), index).positions
            d_new, rep_new = problem.evaluate(x_new)
            memory.clear()
        else:
            s = (x_new - x).ravel()
            y = rep_new.combined(lam_na, lam)[1].ravel() - g0
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                memory.append((s, y, 1.0 / sy))
                gamma = sy / (y @ y)
        x, d, rep = x_new, d_new, rep_new

        f, g = rep.combined(lam_na, lam)
        gnorm = float(np.linalg.norm(g))
        trace.records.append(TraceRecord(it, lam, rep.e_na, rep.e_cvt, f, gnorm,
                                         time.perf_counter() - t0, problem.n_evals))
        if callback:
            callback(trace.records[-1])
        if gnorm < config.grad_tol:
            stop = "grad-tol"
        elif rep.e_cvt >= config.mu * cvt_min:
            stop = "cvt-rise"
        cvt_min = min(cvt_min, rep.e_cvt)

    trace.stop_reason = stop
    log.info("optimization stopped after %d iterations: %s", it, stop)
    return SiteSet(x, index.closest_points(x)[1], meta=dict(sites.meta)), d, trace
