"""Triangle mesh container, OBJ/PLY I/O, area normalization and manifold checks."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data (bad indices, degenerate geometry)."""


class MeshFormatError(MeshError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyMeshError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    Geometry caches (normals, areas, adjacency) are computed lazily and never
    mutated, so instances can be shared freely.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face with repeated vertex")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _cross(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return np.cross(b - a, c - a)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def degenerate_faces(self) -> np.ndarray:
        """Boolean mask of zero-area faces (excluded from decomposition)."""
        return self.face_areas <= 0.0

    @cached_property
    def face_normals(self) -> np.ndarray:
        cr = self._cross
        norm = np.linalg.norm(cr, axis=1)
        out = np.zeros_like(cr)
        ok = norm > 0
        out[ok] = cr[ok] / norm[ok, None]
        return out

    @cached_property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def _edge_table(self):
        # half-edges k: faces[:, k] -> faces[:, (k+1)%3]
        he = np.stack([self.faces, np.roll(self.faces, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(he, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        return edges, inverse

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (E, 2)."""
        return self._edge_table[0]

    @property
    def face_edge_ids(self) -> np.ndarray:
        """(F, 3) ids into ``edges``; column k is the edge from corner k to corner k+1."""
        return self._edge_table[1].reshape(-1, 3)

    @cached_property
    def edge_face_count(self) -> np.ndarray:
        return np.bincount(self._edge_table[1], minlength=len(self.edges))

    @cached_property
    def edge_adjacency(self) -> dict[tuple[int, int], list[int]]:
        adj: dict[tuple[int, int], list[int]] = {}
        edges = self.edges
        for he, eid in enumerate(self._edge_table[1]):
            a, b = edges[eid]
            adj.setdefault((int(a), int(b)), []).append(he // 3)
        return adj

    @cached_property
    def edge_faces(self) -> list[list[int]]:
        """Incident faces per unique edge, aligned with ``edges``."""
        out: list[list[int]] = [[] for _ in range(len(self.edges))]
        for he, eid in enumerate(self._edge_table[1]):
            out[eid].append(he // 3)
        return out

    def dihedral_angles(self) -> np.ndarray:
        """Angle between the normals of the two faces of each interior edge, in degrees.

        Boundary and non-manifold edges get NaN.
        """
        angles = np.full(len(self.edges), np.nan)
        ef = self.edge_faces
        two = np.array([len(x) == 2 for x in ef])
        if two.any():
            pairs = np.array([ef[i] for i in np.flatnonzero(two)])
            n0 = self.face_normals[pairs[:, 0]]
            n1 = self.face_normals[pairs[:, 1]]
            cos = np.clip(np.einsum("ij,ij->i", n0, n1), -1.0, 1.0)
            angles[two] = np.degrees(np.arccos(cos))
        return angles

    def transformed(self, scale: float, translation) -> "TriangleMesh":
        """Mesh with vertices mapped by ``x * scale + translation``."""
        return TriangleMesh(self.vertices * scale + np.asarray(translation, dtype=float), self.faces)


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps normalized coordinates back to input coordinates: ``x_in = x * scale + translation``."""

    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Input coordinates -> normalized coordinates."""
        return (np.asarray(points, dtype=float) - self.translation) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        """Normalized coordinates -> input coordinates."""
        return np.asarray(points, dtype=float) * self.scale + self.translation

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "translation": [float(t) for t in self.translation]}


def normalize_area(mesh: TriangleMesh) -> tuple[TriangleMesh, NormalizationTransform]:
    """Scale ``mesh`` about its bbox center so the total area becomes 1."""
    area = mesh.total_area
    if not area > 0.0:
        raise MeshError("cannot normalize a zero-area mesh")
    lo, hi = mesh.bbox
    center = 0.5 * (lo + hi)
    scale = float(np.sqrt(area))
    transform = NormalizationTransform(scale=scale, translation=center)
    return TriangleMesh(transform.apply(mesh.vertices), mesh.faces), transform


# ---------------------------------------------------------------------------
# topology checks


def open_edge_count(mesh: TriangleMesh) -> int:
    return int(np.count_nonzero(mesh.edge_face_count == 1))


def non_manifold_vertices(mesh: TriangleMesh) -> np.ndarray:
    """Vertices whose face fan is neither a single disk nor a single half-disk."""
    faces = mesh.faces
    if len(faces) == 0:
        return np.zeros(0, dtype=np.int64)
    fe = mesh.face_edge_ids
    counts = mesh.edge_face_count
    edge_faces = mesh.edge_faces

    bad = np.zeros(mesh.n_vertices, dtype=bool)
    # any vertex on an edge with >2 faces is non-manifold
    nm_edges = np.flatnonzero(counts > 2)
    bad[mesh.edges[nm_edges].ravel()] = True

    # union-find over the incident faces of each vertex, joined through shared edges
    vert_faces: list[list[int]] = [[] for _ in range(mesh.n_vertices)]
    for fi, tri in enumerate(faces):
        for v in tri:
            vert_faces[v].append(fi)
    edges = mesh.edges
    for v, inc in enumerate(vert_faces):
        if len(inc) <= 1 or bad[v]:
            continue
        parent = {f: f for f in inc}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for f in inc:
            for k in range(3):
                eid = fe[f, k]
                a, b = edges[eid]
                if a != v and b != v:
                    continue
                for g in edge_faces[eid]:
                    if g != f and g in parent:
                        ra, rb = find(f), find(g)
                        if ra != rb:
                            parent[ra] = rb
        roots = {find(f) for f in inc}
        if len(roots) > 1:
            bad[v] = True
    return np.flatnonzero(bad)


def manifold_report(mesh: TriangleMesh) -> tuple[int, int]:
    """Return ``(OpenB, NMV)``: open-edge count and non-manifold vertex count."""
    return open_edge_count(mesh), int(len(non_manifold_vertices(mesh)))


# ---------------------------------------------------------------------------
# I/O


def load_mesh(path: str | os.PathLike) -> TriangleMesh:
    """Read an OBJ or PLY triangle mesh. Polygons are fan-triangulated."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        vertices, faces = _read_obj(path)
    elif ext == ".ply":
        vertices, faces = _read_ply(path)
    else:
        raise MeshFormatError(f"unsupported mesh format '{ext}'", path)
    if len(faces) == 0:
        raise EmptyMeshError(f"{path}: mesh has no faces")
    try:
        return TriangleMesh(vertices, faces)
    except MeshFormatError:
        raise
    except MeshError as exc:
        raise MeshFormatError(str(exc), path) from None


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _read_obj(path: str):
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshFormatError("vertex needs 3 coordinates", path, lineno)
                try:
                    vertices.append((float(rest[0]), float(rest[1]), float(rest[2])))
                except ValueError:
                    raise MeshFormatError(f"bad vertex coordinate in '{line}'", path, lineno) from None
            elif tag == "f":
                if len(rest) < 3:
                    raise MeshFormatError("face needs at least 3 vertices", path, lineno)
                poly = []
                for tok in rest:
                    try:
                        idx = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise MeshFormatError(f"bad face index '{tok}'", path, lineno) from None
                    if idx == 0:
                        raise MeshFormatError("OBJ indices are 1-based; got 0", path, lineno)
                    idx = idx - 1 if idx > 0 else len(vertices) + idx
                    if idx < 0 or idx >= len(vertices):
                        raise MeshFormatError(f"face index {tok} out of range", path, lineno)
                    poly.append(idx)
                if len(set(poly)) != len(poly):
                    raise MeshFormatError("face with repeated vertex", path, lineno)
                faces.extend(_fan(poly))
            # vt, vn, g, o, usemtl, mtllib, s, l: ignored
    return np.asarray(vertices, dtype=float).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path: str):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshFormatError("missing 'ply' magic", path, 1)
        fmt = None
        elements: list[dict] = []
        lineno = 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError("unexpected end of header", path, lineno)
            toks = raw.decode("ascii", errors="replace").split()
            if not toks:
                continue
            if toks[0] == "format":
                fmt = toks[1]
            elif toks[0] == "element":
                elements.append({"name": toks[1], "count": int(toks[2]), "props": []})
            elif toks[0] == "property":
                if not elements:
                    raise MeshFormatError("property before element", path, lineno)
                if toks[1] == "list":
                    elements[-1]["props"].append((toks[4], "list", toks[2], toks[3]))
                else:
                    if toks[1] not in _PLY_TYPES:
                        raise MeshFormatError(f"unknown property type '{toks[1]}'", path, lineno)
                    elements[-1]["props"].append((toks[2], toks[1]))
            elif toks[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
            raise MeshFormatError(f"unsupported PLY format '{fmt}'", path, 2)
        if fmt == "ascii":
            return _read_ply_ascii(fh, elements, path, lineno)
        endian = "<" if fmt == "binary_little_endian" else ">"
        return _read_ply_binary(fh, elements, endian, path)


def _read_ply_ascii(fh, elements, path, lineno):
    data = {}
    for el in elements:
        rows = []
        for _ in range(el["count"]):
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError(f"truncated '{el['name']}' data", path, lineno)
            toks = raw.split()
            pos = 0
            rec = {}
            try:
                for prop in el["props"]:
                    if prop[1] == "list":
                        n = int(toks[pos])
                        rec[prop[0]] = [int(t) for t in toks[pos + 1:pos + 1 + n]]
                        pos += 1 + n
                    else:
                        rec[prop[0]] = float(toks[pos])
                        pos += 1
            except (ValueError, IndexError):
                raise MeshFormatError(f"malformed '{el['name']}' record", path, lineno) from None
            rows.append(rec)
        data[el["name"]] = rows
    return _ply_collect(data, path)


def _ply_collect(data, path):
    if "vertex" not in data:
        raise MeshFormatError("no vertex element", path)
    try:
        verts = np.array([[r["x"], r["y"], r["z"]] for r in data["vertex"]], dtype=float).reshape(-1, 3)
    except KeyError:
        raise MeshFormatError("vertex element lacks x/y/z", path) from None
    polys = []
    for r in data.get("face", []):
        idx = r.get("vertex_indices", r.get("vertex_index"))
        if idx is None:
            raise MeshFormatError("face element lacks vertex_indices", path)
        polys.append(idx)
    return _ply_finish(verts, polys, path)


def _ply_finish(verts, polys, path):
    tris = []
    for k, poly in enumerate(polys):
        poly = [int(i) for i in poly]
        if len(poly) < 3:
            raise MeshFormatError(f"face {k} has fewer than 3 vertices", path)
        if min(poly) < 0 or max(poly) >= len(verts):
            raise MeshFormatError(f"face {k} index out of range", path)
        tris.extend(_fan(poly))
    return verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _read_ply_binary(fh, elements, endian, path):
    buf = fh.read()
    pos = 0
    verts = None
    polys: list = []
    for el in elements:
        props = el["props"]
        has_list = any(p[1] == "list" for p in props)
        if not has_list:
            dt = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in props])
            nbytes = dt.itemsize * el["count"]
            if pos + nbytes > len(buf):
                raise MeshFormatError(f"truncated '{el['name']}' data", path)
            arr = np.frombuffer(buf, dtype=dt, count=el["count"], offset=pos)
            pos += nbytes
            if el["name"] == "vertex":
                try:
                    verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(float)
                except (KeyError, ValueError):
                    raise MeshFormatError("vertex element lacks x/y/z", path) from None
            continue
        # variable-length records: walk them one by one
        rows = []
        for _ in range(el["count"]):
            rec = {}
            for prop in props:
                if prop[1] == "list":
                    cdt = np.dtype(endian + _PLY_TYPES[prop[2]])
                    idt = np.dtype(endian + _PLY_TYPES[prop[3]])
                    if pos + cdt.itemsize > len(buf):
                        raise MeshFormatError(f"truncated '{el['name']}' data", path)
                    n = int(np.frombuffer(buf, dtype=cdt, count=1, offset=pos)[0])
                    pos += cdt.itemsize
                    if pos + n * idt.itemsize > len(buf):
                        raise MeshFormatError(f"truncated '{el['name']}' data", path)
                    rec[prop[0]] = np.frombuffer(buf, dtype=idt, count=n, offset=pos)
                    pos += n * idt.itemsize
                else:
                    dt = np.dtype(endian + _PLY_TYPES[prop[1]])
                    rec[prop[0]] = np.frombuffer(buf, dtype=dt, count=1, offset=pos)[0]
                    pos += dt.itemsize
            rows.append(rec)
        if el["name"] == "face":
            for r in rows:
                idx = r.get("vertex_indices", r.get("vertex_index"))
                if idx is None:
                    raise MeshFormatError("face element lacks vertex_indices", path)
                polys.append(idx)
    if verts is None:
        raise MeshFormatError("no vertex element", path)
    return _ply_finish(verts, polys, path)


def write_mesh(mesh: TriangleMesh, path: str | os.PathLike) -> None:
    """Write OBJ (positions and faces only) or ASCII PLY, chosen by extension."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        lines = [
            "ply", "format ascii 1.0",
            f"element vertex {mesh.n_vertices}",
            "property double x", "property double y", "property double z",
            f"element face {mesh.n_faces}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    else:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
