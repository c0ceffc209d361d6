"""Restricted Voronoi decomposition of a triangle surface, with thin-plate repair."""

from __future__ import annotations

import colorsys
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from . import _clip
from .mesh import TriangleMesh
from .spatial import SurfaceIndex

log = logging.getLogger(__name__)

_KNN = 24


@dataclass
class SiteSet:
    """Movable sites on the surface, optionally with inward-biased twins."""

    positions: np.ndarray
    face_ids: np.ndarray | None = None
    biased_positions: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def on_surface(cls, mesh: TriangleMesh, points, index: SurfaceIndex | None = None) -> "SiteSet":
        """Project ``points`` onto ``mesh`` and remember the containing faces."""
        index = index or SurfaceIndex(mesh)
        proj, fids, _ = index.closest_points(points)
        return cls(proj, fids)

    def with_bias(self, mesh: TriangleMesh, delta: float, index: SurfaceIndex | None = None) -> "SiteSet":
        """Return a copy whose ``biased_positions`` sit ``delta`` inside along the face normal."""
        fids = self.face_ids
        if fids is None:
            index = index or SurfaceIndex(mesh)
            _, fids, _ = index.closest_points(self.positions)
        normals = mesh.face_normals[fids]
        return SiteSet(self.positions.copy(), np.asarray(fids), self.positions - delta * normals, dict(self.meta))


@dataclass
class Polygon:
    vertices: np.ndarray
    face: int
    normal: np.ndarray
    area: float


@dataclass
class RestrictedCell:
    owner: int
    polygons: list[Polygon]

    @property
    def area(self) -> float:
        return float(sum(p.area for p in self.polygons))


@dataclass(eq=False)
class Decomposition:
    """Flat polygon soup: polygon p owns rows ``offsets[p]:offsets[p+1]`` of ``verts``.

    ``labels[k]`` tags the edge leaving vertex k: the opposite site of a
    bisector (``>= 0``) or a source-triangle edge (``-1, -2, -3``). Polygons
    are sorted by owner, then by source face.
    """

    mesh: TriangleMesh
    n_sites: int
    owner: np.ndarray
    face: np.ndarray
    offsets: np.ndarray
    verts: np.ndarray
    labels: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n_polygons(self) -> int:
        return len(self.owner)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def poly_of_vertex(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_polygons), self.sizes)

    @cached_property
    def fan(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Fan triangulation from each polygon's first vertex: ``(poly, i0, i1, i2)`` vertex rows."""
        ntri = self.sizes - 2
        poly = np.repeat(np.arange(self.n_polygons), ntri)
        first = np.repeat(self.offsets[:-1], ntri)
        local = np.arange(len(poly)) - np.repeat(np.cumsum(ntri) - ntri, ntri)
        return poly, first, first + local + 1, first + local + 2

    @cached_property
    def areas(self) -> np.ndarray:
        poly, i0, i1, i2 = self.fan
        v = self.verts
        tri = 0.5 * np.linalg.norm(np.cross(v[i1] - v[i0], v[i2] - v[i0]), axis=1)
        return np.bincount(poly, weights=tri, minlength=self.n_polygons)

    @cached_property
    def normals(self) -> np.ndarray:
        return self.mesh.face_normals[self.face]

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return np.bincount(self.owner, weights=self.areas, minlength=self.n_sites)

    @cached_property
    def empty_sites(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_sites), self.owner)

    def polygon(self, p: int) -> np.ndarray:
        return self.verts[self.offsets[p]:self.offsets[p + 1]]

    @cached_property
    def cells(self) -> list[RestrictedCell]:
        out: list[RestrictedCell] = []
        if self.n_polygons == 0:
            return out
        owners, first = np.unique(self.owner, return_index=True)
        bounds = list(first[1:]) + [self.n_polygons]
        for o, s, e in zip(owners, first, bounds):
            polys = [Polygon(self.polygon(p).copy(), int(self.face[p]), self.normals[p], float(self.areas[p]))
                     for p in range(s, e)]
            out.append(RestrictedCell(int(o), polys))
        return out

    def same_polygons(self, other: "Decomposition", tol: float = 0.0) -> bool:
        """Polygon-for-polygon equality (owners, faces, vertex rings)."""
        if self.n_polygons != other.n_polygons:
            return False
        if not (np.array_equal(self.owner, other.owner) and np.array_equal(self.face, other.face)
                and np.array_equal(self.offsets, other.offsets)):
            return False
        return bool(np.all(np.abs(self.verts - other.verts) <= tol))


def _face_ok(mesh: TriangleMesh) -> np.ndarray:
    return ~mesh.degenerate_faces


def _raw(mesh: TriangleMesh, sites: np.ndarray):
    sites = np.ascontiguousarray(sites, dtype=np.float64)
    ns = len(sites)
    tree = cKDTree(sites)
    k = min(_KNN, ns - 1)
    if k > 0:
        _, knn = tree.query(sites, k=k + 1)
        knn = np.ascontiguousarray(knn[:, 1:], dtype=np.int64)
    else:
        knn = np.zeros((ns, 0), dtype=np.int64)
    v, f = mesh.vertices, mesh.faces
    centroids = (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0
    _, seed = tree.query(centroids)
    seed = np.ascontiguousarray(seed, dtype=np.int64)
    return _clip.restricted_voronoi(v, f, _face_ok(mesh), sites, knn, seed)


def _sorted(mesh, n_sites, owner, face, starts, verts, labels, info=None) -> Decomposition:
    order = np.lexsort((np.arange(len(owner)), face, owner))
    sizes = np.diff(starts)[order]
    rows = np.concatenate([np.arange(starts[p], starts[p + 1]) for p in order]) if len(order) else np.zeros(0, np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return Decomposition(mesh, n_sites, owner[order], face[order], offsets,
                         verts[rows].reshape(-1, 3), labels[rows], info or {})


def _positions(sites) -> np.ndarray:
    return sites.positions if isinstance(sites, SiteSet) else np.asarray(sites, dtype=float).reshape(-1, 3)


def compute_rvd(mesh: TriangleMesh, sites) -> Decomposition:
    """Plain restricted Voronoi decomposition of ``mesh`` by ``sites``."""
    pos = _positions(sites)
    if len(pos) < 1:
        raise ValueError("need at least one site")
    raw = _raw(mesh, pos)
    return _sorted(mesh, len(pos), *raw, info={"thin_plate": False})


# ---------------------------------------------------------------------------
# boundary geometry shared by components, adjacency and repair


def _edge_param(mesh: TriangleMesh, eid: int, pts: np.ndarray) -> np.ndarray:
    a, b = mesh.vertices[mesh.edges[eid]]
    d = b - a
    return (pts - a) @ d / (d @ d)


def _mesh_edge_intervals(d: Decomposition, polys=None):
    """Polygon edges lying on mesh edges, grouped by global edge id.

    Returns ``{edge_id: [(poly, t0, t1, p, q), ...]}`` with ``t0 <= t1``.
    """
    mesh = d.mesh
    fe = mesh.face_edge_ids
    out: dict[int, list] = {}
    if polys is None:
        polys = range(d.n_polygons)
    for p in polys:
        s, e = d.offsets[p], d.offsets[p + 1]
        lab = d.labels[s:e]
        on_edge = np.flatnonzero(lab < 0)
        if len(on_edge) == 0:
            continue
        ring = d.verts[s:e]
        for k in on_edge:
            eid = int(fe[d.face[p], -lab[k] - 1])
            pa, pb = ring[k], ring[(k + 1) % len(ring)]
            t = _edge_param(mesh, eid, np.stack([pa, pb]))
            if t[0] > t[1]:
                t = t[::-1]
                pa, pb = pb, pa
            out.setdefault(eid, []).append((p, float(t[0]), float(t[1]), pa, pb))
    return out


def shared_boundaries(d: Decomposition, tol: float = 1e-9):
    """All boundary segments of positive length shared by two polygons.

    Returns a list of ``(poly_a, poly_b, p, q)``; includes same-owner pairs.
    """
    out = []
    scale = max(d.mesh.bbox_diagonal, 1e-300)
    lin_tol = tol * scale
    # inside faces: collinear overlap of bisector edges
    if d.n_polygons:
        order = np.argsort(d.face, kind="stable")
        faces_sorted = d.face[order]
        bounds = np.flatnonzero(np.diff(faces_sorted)) + 1
        groups = np.split(order, bounds)
    else:
        groups = []
    for group in groups:
        if len(group) < 2:
            continue
        segs = []
        for p in group:
            s, e = d.offsets[p], d.offsets[p + 1]
            ring = d.verts[s:e]
            for k in np.flatnonzero(d.labels[s:e] >= 0):
                segs.append((p, ring[k], ring[(k + 1) % len(ring)]))
        for x in range(len(segs)):
            pa, a0, a1 = segs[x]
            u = a1 - a0
            ul = np.linalg.norm(u)
            if ul <= lin_tol:
                continue
            u = u / ul
            for y in range(x + 1, len(segs)):
                pb, b0, b1 = segs[y]
                if pb == pa:
                    continue
                r0, r1 = b0 - a0, b1 - a0
                t0, t1 = r0 @ u, r1 @ u
                if np.linalg.norm(r0 - t0 * u) > lin_tol or np.linalg.norm(r1 - t1 * u) > lin_tol:
                    continue
                lo, hi = max(0.0, min(t0, t1)), min(ul, max(t0, t1))
                if hi - lo > lin_tol:
                    out.append((int(pa), int(pb), a0 + lo * u, a0 + hi * u))
    # across mesh edges
    for eid, items in _mesh_edge_intervals(d).items():
        if len(items) < 2:
            continue
        for x in range(len(items)):
            pa, s0, s1, qa, qb = items[x]
            for y in range(x + 1, len(items)):
                pb, u0, u1, _, _ = items[y]
                if d.face[pa] == d.face[pb]:
                    continue
                lo, hi = max(s0, u0), min(s1, u1)
                seg_len = (hi - lo) * np.linalg.norm(qb - qa) / max(s1 - s0, 1e-300)
                if seg_len > lin_tol:
                    a, b = d.mesh.vertices[d.mesh.edges[eid]]
                    out.append((int(pa), int(pb), a + lo * (b - a), a + hi * (b - a)))
    return out


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def polygon_components(d: Decomposition, boundaries=None) -> np.ndarray:
    """Connected-component label per polygon (same owner, shared boundary of positive length)."""
    uf = _UnionFind(d.n_polygons)
    for pa, pb, _, _ in (boundaries if boundaries is not None else shared_boundaries(d)):
        if d.owner[pa] == d.owner[pb]:
            uf.union(pa, pb)
    return np.array([uf.find(p) for p in range(d.n_polygons)], dtype=np.int64)


def cell_component_counts(d: Decomposition) -> np.ndarray:
    """Number of connected components of each site's region (0 for empty sites)."""
    comp = polygon_components(d)
    counts = np.zeros(d.n_sites, dtype=np.int64)
    pairs = np.unique(np.stack([d.owner, comp], axis=1), axis=0) if d.n_polygons else np.zeros((0, 2), np.int64)
    np.add.at(counts, pairs[:, 0], 1)
    return counts


def cell_adjacency(d: Decomposition) -> list[tuple[int, int]]:
    """Sorted site pairs whose regions share a boundary segment of positive length."""
    pairs = set()
    for pa, pb, _, _ in shared_boundaries(d):
        i, j = int(d.owner[pa]), int(d.owner[pb])
        if i != j:
            pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


def boundary_segments(d: Decomposition) -> list[tuple[int, int, int, np.ndarray, np.ndarray]]:
    """Inter-cell boundary pieces as ``(i, j, face, p, q)`` with ``i < j``."""
    out = []
    for pa, pb, p, q in shared_boundaries(d):
        i, j = int(d.owner[pa]), int(d.owner[pb])
        if i == j:
            continue
        if i > j:
            i, j, pa, pb = j, i, pb, pa
        out.append((i, j, int(d.face[pa]), p, q))
    return out


# ---------------------------------------------------------------------------
# thin-plate repair


# faces more than 120 degrees apart count as opposite sides of a plate
FACING_COS = -0.5


def default_bias(mesh: TriangleMesh, fraction: float = 0.01) -> float:
    return fraction * mesh.bbox_diagonal


def compute_rvd_thinplate(mesh: TriangleMesh, sites, bias: float | None = None,
                          index: SurfaceIndex | None = None) -> Decomposition:
    """Decomposition that keeps one region per site on thin plates.

    Each site gets a twin pushed ``bias`` along the inward face normal. Regions
    won by twins are handed back to the real sites that bound them, each point
    going to the nearest of those sites.
    """
    if bias is None:
        bias = default_bias(mesh)
    if not bias > 0:
        raise ValueError("bias must be positive")
    if not isinstance(sites, SiteSet):
        sites = SiteSet.on_surface(mesh, sites, index)
    if sites.biased_positions is None:
        sites = sites.with_bias(mesh, bias, index)
    n = len(sites)
    real = sites.positions
    both = np.concatenate([real, sites.biased_positions])

    raw2 = _raw(mesh, both)
    owner2 = raw2[0]
    twin = np.flatnonzero(owner2 >= n)
    site_normals = mesh.face_normals[sites.face_ids]
    # a twin region is a thin-plate symptom only on faces turned away from its site;
    # the margin keeps noisy faces across a right-angle edge out
    facing = np.einsum("ij,ij->i", mesh.face_normals[raw2[1][twin]], site_normals[owner2[twin] - n])
    marked = twin[facing < FACING_COS]
    reverted = twin[facing >= FACING_COS]
    plain = compute_rvd(mesh, real)
    plain.info.update(thin_plate=True, bias=float(bias), marked_regions=0, fallback_regions=0,
                      repaired_faces=np.zeros(0, dtype=np.int64))
    if len(marked) == 0:
        return plain

    d2 = Decomposition(mesh, 2 * n, *raw2)
    comp = polygon_components(d2, _marked_boundaries(d2, marked))

    plain_face_owners: dict[int, set] = {}
    for p in range(plain.n_polygons):
        plain_face_owners.setdefault(int(plain.face[p]), set()).add(int(plain.owner[p]))

    def nearest_real(polys):
        # the globally nearest real site of any point is one of the plain owners on its face
        return sorted(set().union(*(plain_face_owners.get(int(d2.face[p]), set()) for p in polys)))

    # contributing sites per marked region
    regions: dict[int, list[int]] = {}
    for p in marked:
        regions.setdefault(int(comp[p]), []).append(int(p))
    n_fallback = 0
    cand_lists: dict[int, list[int]] = {}
    for polys in regions.values():
        contrib = set()
        for p in polys:
            lab = d2.labels[d2.offsets[p]:d2.offsets[p + 1]]
            contrib.update(int(x) for x in lab[lab >= 0])
        real_contrib = sorted(c for c in contrib if c < n)
        if not real_contrib:
            n_fallback += 1
            log.info("biased region of site %d has no real contributor; using nearest real site",
                     int(owner2[polys[0]]) - n)
            real_contrib = nearest_real(polys)
        for p in polys:
            cand_lists[p] = real_contrib
    for p in reverted:
        cand_lists[int(p)] = nearest_real([p])

    work = np.sort(np.concatenate([marked, reverted]))
    m_starts, m_rows = _gather(d2, work)
    cand_starts = np.concatenate([[0], np.cumsum([len(cand_lists[p]) for p in work])]).astype(np.int64)
    cands = np.concatenate([np.asarray(cand_lists[p], dtype=np.int64) for p in work])
    pieces = _clip.partition_polygons(m_starts, d2.verts[m_rows], d2.labels[m_rows], cand_starts, cands, real)
    p_owner, p_src, p_starts, p_verts, p_labels = pieces
    marked = work
    p_face = d2.face[marked][p_src]

    # faces whose repaired ownership matches the plain one keep the plain polygons
    tree = cKDTree(real)
    dmin, _ = tree.query(p_verts)
    p_owner_rows = np.repeat(p_owner, np.diff(p_starts))
    down = np.linalg.norm(p_verts - real[p_owner_rows], axis=1)
    tol = 1e-9 * mesh.bbox_diagonal
    row_ok = down <= dmin + tol
    piece_ok = np.array([row_ok[p_starts[k]:p_starts[k + 1]].all() for k in range(len(p_owner))], dtype=bool)
    touched = np.unique(p_face)
    changed = np.unique(p_face[~piece_ok])

    keep_plain = ~np.isin(plain.face, changed)
    keep_real2 = (owner2 < n) & np.isin(raw2[1], changed)
    keep_piece = np.isin(p_face, changed)

    parts = [
        _take(plain.owner, plain.face, plain.offsets, plain.verts, plain.labels, np.flatnonzero(keep_plain)),
        _take(*raw2[:2], raw2[2], raw2[3], raw2[4], np.flatnonzero(keep_real2)),
        _take(p_owner, p_face, p_starts, p_verts, p_labels, np.flatnonzero(keep_piece)),
    ]
    owner, face, starts, verts, labels = _concat(parts)
    info = {"thin_plate": True, "bias": float(bias), "marked_regions": len(regions),
            "fallback_regions": n_fallback, "repaired_faces": changed, "touched_faces": touched}
    if n_fallback:
        log.info("thin-plate repair: %d of %d biased regions fell back to nearest real site",
                 n_fallback, len(regions))
    return _sorted(mesh, n, owner, face, starts, verts, labels, info)


def _marked_boundaries(d2: Decomposition, marked: np.ndarray):
    """Shared boundaries restricted to marked polygons (cheap subset for component labelling)."""
    sub = Decomposition(d2.mesh, d2.n_sites, *_take(d2.owner, d2.face, d2.offsets, d2.verts, d2.labels, marked))
    return [(int(marked[a]), int(marked[b]), p, q) for a, b, p, q in shared_boundaries(sub)]


def _gather(d: Decomposition, polys: np.ndarray):
    sizes = d.sizes[polys]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    rows = np.concatenate([np.arange(d.offsets[p], d.offsets[p + 1]) for p in polys])
    return starts, rows


def _take(owner, face, starts, verts, labels, sel):
    sel = np.asarray(sel, dtype=np.int64)
    sizes = np.diff(starts)[sel]
    new_starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    if len(sel):
        rows = np.concatenate([np.arange(starts[p], starts[p + 1]) for p in sel])
    else:
        rows = np.zeros(0, dtype=np.int64)
    return owner[sel], face[sel], new_starts, verts[rows].reshape(-1, 3), labels[rows]


def _concat(parts):
    owners, faces, starts, verts, labels = [], [], [], [], []
    off = 0
    for o, f, s, v, lab in parts:
        owners.append(o)
        faces.append(f)
        starts.append(s[:-1] + off)
        verts.append(v)
        labels.append(lab)
        off += len(v)
    starts.append(np.array([off]))
    return (np.concatenate(owners).astype(np.int64), np.concatenate(faces).astype(np.int64),
            np.concatenate(starts).astype(np.int64), np.concatenate(verts).reshape(-1, 3),
            np.concatenate(labels).astype(np.int64))


# ---------------------------------------------------------------------------
# export


def export_rvd(d: Decomposition, path: str | os.PathLike) -> None:
    """Write cells as OBJ groups, one colored material per non-empty cell."""
    path = os.fspath(path)
    if not path:
        raise FileNotFoundError("empty output path")
    mtl_path = os.path.splitext(path)[0] + ".mtl"
    owners = np.unique(d.owner)
    golden = 0.618033988749895
    mtl = []
    for k, o in enumerate(owners):
        r, g, b = colorsys.hsv_to_rgb((k * golden) % 1.0, 0.65, 0.95)
        mtl += [f"newmtl cell_{o}", f"Kd {r:.4f} {g:.4f} {b:.4f}", ""]
    lines = [f"mtllib {os.path.basename(mtl_path)}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in d.verts.tolist()]
    for o in owners:
        lines += [f"g cell_{o}", f"usemtl cell_{o}"]
        for p in np.flatnonzero(d.owner == o):
            ids = range(d.offsets[p] + 1, d.offsets[p + 1] + 1)
            lines.append("f " + " ".join(str(i) for i in ids))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(mtl_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(mtl))
