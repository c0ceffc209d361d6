"""Dual triangle mesh of a restricted Voronoi decomposition."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .mesh import NormalizationTransform, TriangleMesh, manifold_report
from .rvd import Decomposition, SiteSet

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DualMesh:
    """Triangle mesh on the site positions.

    ``site_ids[v]`` is the site behind dual vertex ``v``; ``corners`` maps each
    triangle to the decomposition corner that produced it.
    """

    mesh: TriangleMesh
    site_ids: np.ndarray
    corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    high_valence_corners: int = 0

    @property
    def vertices(self) -> np.ndarray:
        return self.mesh.vertices

    @property
    def faces(self) -> np.ndarray:
        return self.mesh.faces

    def denormalized(self, transform: NormalizationTransform) -> "DualMesh":
        """Same connectivity with vertices mapped back to input coordinates."""
        return DualMesh(TriangleMesh(transform.invert(self.mesh.vertices), self.mesh.faces),
                        self.site_ids, transform.invert(self.corners) if len(self.corners) else self.corners,
                        self.high_valence_corners)


def _clusters(points: np.ndarray, tol: float) -> np.ndarray:
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    n = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)[1]


def _on_segment(p, a, b, tol) -> bool:
    ab = b - a
    t = np.clip((p - a) @ ab / max(ab @ ab, 1e-300), 0.0, 1.0)
    return float(np.linalg.norm(a + t * ab - p)) <= tol


def _tjunction_owners(d: Decomposition, point: np.ndarray, faces: set, tol: float) -> set:
    """Owners of polygons on neighbouring faces whose boundary passes through ``point``.

    Needed where a repaired face meets a plain one and vertices do not line up.
    """
    mesh = d.mesh
    extra = set()
    for f in faces:
        for k in range(3):
            a, b = mesh.vertices[mesh.faces[f, k]], mesh.vertices[mesh.faces[f, (k + 1) % 3]]
            if not _on_segment(point, a, b, tol):
                continue
            eid = mesh.face_edge_ids[f, k]
            for g in mesh.edge_faces[eid]:
                if g in faces:
                    continue
                for p in np.flatnonzero(d.face == g):
                    ring = d.polygon(p)
                    if any(_on_segment(point, ring[m], ring[(m + 1) % len(ring)], tol)
                           for m in range(len(ring))):
                        extra.add(int(d.owner[p]))
    return extra


def extract_dual(d: Decomposition, sites) -> DualMesh:
    """Connect sites whose cells meet at a decomposition corner.

    A corner shared by three cells gives one triangle. Corners shared by more
    are ordered around the local normal and fanned from the lowest site index.
    Each triangle is oriented to agree with the surface normal under its corner.
    """
    x = sites.positions if isinstance(sites, SiteSet) else np.asarray(sites, dtype=float).reshape(-1, 3)
    alive = np.unique(d.owner)
    remap = -np.ones(d.n_sites, dtype=np.int64)
    remap[alive] = np.arange(len(alive))
    empty = DualMesh(TriangleMesh(x[alive], np.zeros((0, 3), dtype=np.int64)), alive)
    if d.n_polygons == 0:
        return empty

    tol = 1e-9 * d.mesh.bbox_diagonal
    cluster = _clusters(d.verts, tol)
    vpoly = d.poly_of_vertex
    vowner = d.owner[vpoly]

    # distinct (cluster, owner) pairs; keep clusters with >= 3 owners
    pairs = np.unique(np.stack([cluster, vowner], axis=1), axis=0)
    n_owners = np.bincount(pairs[:, 0], minlength=cluster.max() + 1)
    repaired = d.info.get("repaired_faces")
    check_t = repaired is not None and len(repaired) > 0
    if check_t:
        near = set(int(f) for f in repaired)
        for f in repaired:
            for eid in d.mesh.face_edge_ids[f]:
                near.update(d.mesh.edge_faces[eid])
        vface = d.face[vpoly]
        cand = np.unique(cluster[np.isin(vface, list(near))])
    else:
        cand = np.zeros(0, dtype=np.int64)

    order = np.argsort(cluster, kind="stable")
    bounds = np.searchsorted(cluster[order], np.arange(cluster.max() + 2))
    owners_of: dict[int, list[int]] = {}
    for c in np.flatnonzero(n_owners >= 3):
        lo, hi = np.searchsorted(pairs[:, 0], [c, c + 1])
        owners_of[int(c)] = [int(o) for o in pairs[lo:hi, 1]]
    for c in cand:
        rows = order[bounds[c]:bounds[c + 1]]
        faces = set(int(f) for f in d.face[vpoly[rows]])
        extra = _tjunction_owners(d, d.verts[rows[0]], faces, tol)
        merged = set(int(o) for o in vowner[rows]) | extra
        if len(merged) >= 3:
            owners_of[int(c)] = sorted(merged)

    normals = d.normals
    tris: dict[tuple, tuple] = {}
    corner_pts = {}
    high = 0
    for c, owners in sorted(owners_of.items()):
        rows = order[bounds[c]:bounds[c + 1]]
        point = d.verts[rows].mean(axis=0)
        nrm = normals[vpoly[rows]].mean(axis=0)
        if np.linalg.norm(nrm) == 0:
            nrm = normals[vpoly[rows[0]]]
        if len(owners) == 3:
            fan = [tuple(owners)]
        else:
            high += 1
            # angular order of the owners' cells around the corner
            u = np.cross(nrm, [1.0, 0.0, 0.0])
            if np.linalg.norm(u) < 1e-6:
                u = np.cross(nrm, [0.0, 1.0, 0.0])
            u /= np.linalg.norm(u)
            v = np.cross(nrm, u)
            ang = []
            for o in owners:
                sel = rows[vowner[rows] == o]
                if len(sel):
                    cen = np.mean([d.polygon(p).mean(axis=0) for p in np.unique(vpoly[sel])], axis=0)
                else:
                    cen = x[o]
                r = cen - point
                ang.append(np.arctan2(r @ v, r @ u))
            ring = [owners[k] for k in np.argsort(ang, kind="stable")]
            s = ring.index(min(ring))
            ring = ring[s:] + ring[:s]
            fan = [(ring[0], ring[k], ring[k + 1]) for k in range(1, len(ring) - 1)]
        for t in fan:
            key = tuple(sorted(t))
            if key in tris:
                continue
            a, b, cc = x[t[0]], x[t[1]], x[t[2]]
            if np.cross(b - a, cc - a) @ nrm < 0:
                t = (t[0], t[2], t[1])
            tris[key] = t
            corner_pts[key] = point

    if not tris:
        log.info("decomposition has no corner shared by three cells; dual is empty")
        return empty
    keys = list(tris)
    faces = remap[np.array([tris[k] for k in keys], dtype=np.int64)]
    corners = np.array([corner_pts[k] for k in keys])
    return DualMesh(TriangleMesh(x[alive], faces), alive, corners, high)


def triangle_quality(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """``(6/sqrt(3)) * S / (p * h)``: S area, p half perimeter, h longest edge. 1 for equilateral."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    e = np.stack([np.linalg.norm(b - a, axis=1), np.linalg.norm(c - b, axis=1),
                  np.linalg.norm(a - c, axis=1)], axis=1)
    s = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    p = 0.5 * e.sum(axis=1)
    h = e.max(axis=1)
    denom = p * h
    q = np.zeros(len(f))
    ok = denom > 0
    q[ok] = (6.0 / np.sqrt(3.0)) * s[ok] / denom[ok]
    return q


@dataclass(frozen=True)
class QualityReport:
    triangle_q_min: float
    triangle_q_mean: float
    open_b: int
    nmv: int


def quality_report(m) -> QualityReport:
    mesh = m.mesh if isinstance(m, DualMesh) else m
    q = triangle_quality(mesh.vertices, mesh.faces)
    open_b, nmv = manifold_report(mesh)
    if len(q) == 0:
        return QualityReport(0.0, 0.0, open_b, nmv)
    return QualityReport(float(q.min()), float(q.mean()), open_b, nmv)
