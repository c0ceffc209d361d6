"""Procedural test surfaces: subdivided boxes, squares, spheres, chamfered cubes."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriangleMesh


def _grid_patch(origin, u, v, nu, nv):
    """Quad grid over origin + s*u + t*v, two triangles per cell, normal along u x v."""
    s = np.linspace(0.0, 1.0, nu + 1)
    t = np.linspace(0.0, 1.0, nv + 1)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    pts = origin + ss[..., None] * u + tt[..., None] * v
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return pts.reshape(-1, 3), faces


def _weld(patches, decimals=12):
    verts, faces, off = [], [], 0
    for p, f in patches:
        verts.append(p)
        faces.append(f + off)
        off += len(p)
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    key = np.round(verts, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep first-occurrence order for stable vertex numbering
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return TriangleMesh(verts[first[order]], remap[inverse[faces]])


def box(size=(1.0, 1.0, 1.0), divisions=(10, 10, 10), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed axis-aligned box with outward-facing triangles on a regular grid."""
    sx, sy, sz = map(float, size)
    nx, ny, nz = map(int, divisions)
    lo = np.asarray(center, dtype=float) - 0.5 * np.array([sx, sy, sz])
    X, Y, Z = np.array([sx, 0, 0]), np.array([0, sy, 0]), np.array([0, 0, sz])
    patches = [
        _grid_patch(lo, Y, X, ny, nx),            # z = lo, normal -z
        _grid_patch(lo + Z, X, Y, nx, ny),        # z = hi, normal +z
        _grid_patch(lo, X, Z, nx, nz),            # y = lo, normal -y
        _grid_patch(lo + Y, Z, X, nz, nx),        # y = hi, normal +y
        _grid_patch(lo, Z, Y, nz, ny),            # x = lo, normal -x
        _grid_patch(lo + X, Y, Z, ny, nz),        # x = hi, normal +x
    ]
    return _weld(patches)


def cube(divisions: int = 20, side: float = 1.0) -> TriangleMesh:
    """Unit cube; ``divisions=20`` gives 4800 faces."""
    return box((side, side, side), (divisions,) * 3)


def thin_box(thickness: float = 0.005, divisions: int = 16) -> TriangleMesh:
    return box((1.0, 1.0, thickness), (divisions, divisions, 1))


def square(divisions: int = 10, side: float = 1.0) -> TriangleMesh:
    """Flat open square in the z=0 plane, normal +z."""
    pts, faces = _grid_patch(np.array([-side / 2, -side / 2, 0.0]), np.array([side, 0, 0.0]),
                             np.array([0, side, 0.0]), divisions, divisions)
    return TriangleMesh(pts, faces)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def bumpy_sphere(subdivisions: int = 4, amplitude: float = 0.12) -> TriangleMesh:
    """Smooth organic-looking blob: an icosphere with low-frequency radial bumps."""
    base = icosphere(subdivisions)
    v = base.vertices
    x, y, z = v.T
    r = 1.0 + amplitude * (np.sin(3 * x) * np.cos(2 * y) + 0.5 * np.sin(4 * z + 1.0))
    return TriangleMesh(v * r[:, None], base.faces)


def convex_polyhedron(points) -> TriangleMesh:
    """Outward-oriented hull triangulation of a point set."""
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    used = np.unique(hull.simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    faces = remap[hull.simplices]
    verts = pts[used]
    center = verts.mean(axis=0)
    a, b, c = (verts[faces[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", n, a - center) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(verts, faces)


def chamfered_cube(width: float, side: float = 1.0) -> TriangleMesh:
    """Cube [0, side]^3 with the edge along z at x=y=side cut by a 45 degree chamfer."""
    s = float(side)
    corners = np.array([[x, y, z] for x in (0, s) for y in (0, s) for z in (0, s)], dtype=float)
    if width <= 0:
        return convex_polyhedron(corners)
    keep = ~((corners[:, 0] == s) & (corners[:, 1] == s))
    extra = []
    for z in (0.0, s):
        extra += [[s - width, s, z], [s, s - width, z]]
    return convex_polyhedron(np.concatenate([corners[keep], np.array(extra)]))
