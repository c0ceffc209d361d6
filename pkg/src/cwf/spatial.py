"""Exact nearest-neighbour queries over point sets and closest points on a mesh."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh

_TIE_K = 4


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance with a fixed summation order, so results are reproducible bit for bit."""
    d = np.asarray(a, dtype=float) - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


_dist = euclidean


class PointIndex:
    """Exact Euclidean nearest-neighbour index; ties go to the lowest index."""

    def __init__(self, points, workers: int = 1):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self.workers = workers
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Batch nearest: returns ``(indices, distances)``."""
        if self._tree is None:
            raise ValueError("nearest-neighbour query on an empty index")
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(_TIE_K, len(self.points))
        _, cand = self._tree.query(q, k=k, workers=self.workers)
        cand = cand.reshape(len(q), k)
        dist = _dist(self.points[cand], q[:, None, :])
        # order candidates by index so argmin picks the lowest index among ties
        order = np.argsort(cand, axis=1, kind="stable")
        cand = np.take_along_axis(cand, order, 1)
        dist = np.take_along_axis(dist, order, 1)
        best = np.argmin(dist, axis=1)
        idx = cand[np.arange(len(q)), best]
        dmin = dist[np.arange(len(q)), best]
        if k < len(self.points):
            # all k candidates equidistant: the tie may extend past k, rescan those rows
            crowded = np.flatnonzero(dist.max(axis=1) <= dmin)
            for r in crowded:
                near = self._tree.query_ball_point(q[r], dmin[r] * (1 + 1e-12) + 1e-300)
                near = np.sort(np.asarray(near, dtype=np.int64))
                dd = _dist(self.points[near], q[r])
                j = int(np.argmin(dd))
                idx[r], dmin[r] = near[j], dd[j]
        return idx.astype(np.int64), dmin

    def nearest(self, q) -> tuple[int, float]:
        idx, dist = self.query(np.asarray(q, dtype=float)[None, :])
        return int(idx[0]), float(dist[0])


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, row-wise (Voronoi-region walk)."""
    p, a, b, c = (np.asarray(x, dtype=float) for x in (p, a, b, c))
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        t = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        t = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        interior = a + v[:, None] * ab + w[:, None] * ac
    rest = ~done
    out[rest] = interior[rest]
    return out


class SurfaceIndex:
    """Closest-point queries over the faces of a mesh (exact, via centroid kd-tree pruning)."""

    def __init__(self, mesh: TriangleMesh, workers: int = 1):
        self.mesh = mesh
        self.workers = workers
        v, f = mesh.vertices, mesh.faces
        self._a, self._b, self._c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        self._centroids = (self._a + self._b + self._c) / 3.0
        self._radius = np.max(
            np.stack([_dist(x, self._centroids) for x in (self._a, self._b, self._c)]), axis=0)
        self._rmax = float(self._radius.max()) if len(self._radius) else 0.0
        self._tree = cKDTree(self._centroids)

    def closest_points(self, queries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batch query: returns ``(points, face_ids, distances)``."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = len(q)
        k = min(8, self.mesh.n_faces)
        _, near = self._tree.query(q, k=k, workers=self.workers)
        near = near.reshape(nq, k)
        rows = np.repeat(np.arange(nq), k)
        cols = near.ravel()
        cp = closest_points_on_triangles(q[rows], self._a[cols], self._b[cols], self._c[cols])
        ub = _dist(cp, q[rows]).reshape(nq, k).min(axis=1)
        # any face whose centroid lies within ub + rmax could hold a closer point
        balls = self._tree.query_ball_point(q, ub + self._rmax + 1e-12, workers=self.workers)
        sizes = np.fromiter((len(x) for x in balls), dtype=np.int64, count=nq)
        rows = np.repeat(np.arange(nq), sizes)
        cols = np.fromiter((j for x in balls for j in sorted(x)), dtype=np.int64, count=int(sizes.sum()))
        cp = closest_points_on_triangles(q[rows], self._a[cols], self._b[cols], self._c[cols])
        d = _dist(cp, q[rows])
        # lowest face id among the faces within rounding of the row minimum
        dmin = np.full(nq, np.inf)
        np.minimum.at(dmin, rows, d)
        near_min = d <= dmin[rows] * (1.0 + 1e-12) + 1e-300
        cand = np.flatnonzero(near_min)
        order = cand[np.lexsort((cols[cand], rows[cand]))]
        first = np.ones(len(order), dtype=bool)
        first[1:] = rows[order][1:] != rows[order][:-1]
        pick = order[first]
        return cp[pick], cols[pick], d[pick]

    def closest_point(self, q) -> tuple[np.ndarray, int]:
        pts, fids, _ = self.closest_points(np.asarray(q, dtype=float)[None, :])
        return pts[0], int(fids[0])


def sample_surface(mesh: TriangleMesh, count: int, seed: int = 0):
    """Area-uniform random points on ``mesh``.

    Returns ``(points, normals, face_ids)``; deterministic for a given seed.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    fids = np.searchsorted(cdf, rng.random(count), side="right")
    fids = np.minimum(fids, mesh.n_faces - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0, w1, w2 = 1.0 - r1, r1 * (1.0 - r2), r1 * r2
    tri = mesh.vertices[mesh.faces[fids]]
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    return pts, mesh.face_normals[fids], fids
