import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwf.mesh import normalize_area
from cwf.rvd import (SiteSet, boundary_segments, cell_adjacency, cell_component_counts, compute_rvd,
                     compute_rvd_thinplate, default_bias, export_rvd)
from cwf.shapes import bumpy_sphere, cube, icosphere, square, thin_box
from cwf.spatial import sample_surface

from conftest import brute_nearest

MESHES = {
    "cube": lambda: normalize_area(cube(12))[0],
    "sphere": lambda: icosphere(3),
    "bumpy": lambda: bumpy_sphere(3),
    "thin": lambda: thin_box(0.005, 12),
    "square": lambda: square(10),
}


def random_sites(mesh, n, seed):
    pts, _, fids = sample_surface(mesh, n, seed)
    return SiteSet(pts, fids)


def locate(d, points, faces):
    """Owner of the polygon of face ``faces[k]`` containing ``points[k]``; -1 when none does."""
    by_face = {}
    for p in range(d.n_polygons):
        by_face.setdefault(int(d.face[p]), []).append(p)
    out = -np.ones(len(points), dtype=np.int64)
    normals = d.mesh.face_normals
    for k, (x, f) in enumerate(zip(points, faces)):
        n = normals[f]
        for p in by_face.get(int(f), ()):
            ring = d.polygon(p)
            nxt = np.roll(ring, -1, axis=0)
            side = np.einsum("ij,j->i", np.cross(nxt - ring, x - ring), n)
            if np.all(side >= -1e-12):
                out[k] = d.owner[p]
                break
    return out


# --- partition of area ------------------------------------------------------------

@pytest.mark.parametrize("name", list(MESHES))
@pytest.mark.parametrize("n", [1, 7, 60])
def test_area_partition_plain_and_thin(name, n):
    mesh = MESHES[name]()
    sites = random_sites(mesh, n, seed=n)
    for d in (compute_rvd(mesh, sites.positions), compute_rvd_thinplate(mesh, sites)):
        assert abs(d.cell_areas.sum() - mesh.total_area) <= 1e-7 * mesh.total_area


def test_single_site_owns_everything():
    mesh = icosphere(2)
    d = compute_rvd(mesh, [[0.0, 0.0, 1.0]])
    assert set(d.owner.tolist()) == {0}
    assert d.n_polygons == mesh.n_faces


@pytest.mark.parametrize("name", ["cube", "bumpy", "square"])
def test_dense_sample_ownership_oracle(name):
    mesh = MESHES[name]()
    sites = random_sites(mesh, 40, seed=11)
    d = compute_rvd(mesh, sites.positions)
    pts, _, fids = sample_surface(mesh, 20000, seed=5)
    expect, _ = brute_nearest(pts, sites.positions)
    got = locate(d, pts, fids)
    assert np.mean(got == expect) >= 0.9999


@given(seed=st.integers(0, 10_000), n=st.integers(2, 30))
def test_partition_property_random_sites(seed, n):
    mesh = MESHES["bumpy"]() if seed % 2 else MESHES["cube"]()
    d = compute_rvd(mesh, random_sites(mesh, n, seed).positions)
    assert abs(d.cell_areas.sum() - mesh.total_area) <= 1e-7 * mesh.total_area
    assert np.all(d.areas >= 0)


# --- polygon records ------------------------------------------------------------------

def test_labels_and_sorting():
    mesh = MESHES["cube"]()
    sites = random_sites(mesh, 25, seed=1)
    d = compute_rvd(mesh, sites.positions)
    assert np.all(np.diff(d.owner) >= 0)
    assert d.labels.min() >= -3 and d.labels.max() < 25
    # bisector edges lie on the bisector plane of owner and label
    rows = np.flatnonzero(d.labels >= 0)
    owner = d.owner[d.poly_of_vertex[rows]]
    x = sites.positions
    mid = 0.5 * (x[owner] + x[d.labels[rows]])
    normal = x[d.labels[rows]] - x[owner]
    assert np.abs(np.einsum("ij,ij->i", d.verts[rows] - mid, normal)).max() < 1e-12


def test_adjacency_symmetric_and_matches_segments():
    mesh = MESHES["sphere"]()
    sites = random_sites(mesh, 30, seed=3)
    d = compute_rvd(mesh, sites.positions)
    adj = cell_adjacency(d)
    assert all(i < j for i, j in adj)
    seg_pairs = {(min(i, j), max(i, j)) for i, j, *_ in boundary_segments(d)}
    assert seg_pairs == set(adj)


def test_coincident_sites_lower_index_wins():
    mesh = icosphere(2)
    x = np.array([[0, 0, 1.0], [0, 0, -1.0], [0, 0, 1.0]])
    d = compute_rvd(mesh, x)
    assert d.empty_sites.tolist() == [2]
    assert abs(d.cell_areas.sum() - mesh.total_area) < 1e-12


def test_cube_cells_connected():
    mesh = MESHES["cube"]()
    d = compute_rvd(mesh, random_sites(mesh, 80, seed=2).positions)
    assert cell_component_counts(d).max() == 1


def test_deterministic():
    mesh = MESHES["bumpy"]()
    s = random_sites(mesh, 50, seed=9)
    a, b = compute_rvd(mesh, s.positions), compute_rvd(mesh, s.positions)
    assert a.same_polygons(b)


# --- thin-plate repair --------------------------------------------------------------------

def plate_sites(t):
    """Top center site above a ring of four bottom sites: its cell also covers a bottom disk."""
    a3 = np.arange(3) * 2 * np.pi / 3
    a4 = np.arange(4) * np.pi / 2 + np.pi / 4
    top = np.vstack([[0, 0], np.c_[0.35 * np.cos(a3), 0.35 * np.sin(a3)]])
    bot = np.c_[0.1 * np.cos(a4), 0.1 * np.sin(a4)]
    return np.vstack([np.c_[top, np.full(4, t / 2)], np.c_[bot, np.full(4, -t / 2)]])


@pytest.mark.parametrize("fraction", [0.2, 0.5, 1.0, 1.9])
def test_thin_plate_repair_merges_split_cell(fraction):
    t = 0.005
    mesh = thin_box(t, 16)
    sites = SiteSet.on_surface(mesh, plate_sites(t))
    plain = compute_rvd(mesh, sites.positions)
    assert cell_component_counts(plain).max() == 2
    fixed = compute_rvd_thinplate(mesh, sites, fraction * t)
    assert cell_component_counts(fixed).max() == 1
    assert fixed.info["marked_regions"] > 0
    assert abs(fixed.cell_areas.sum() - mesh.total_area) <= 1e-7 * mesh.total_area


def test_thin_plate_bias_beyond_twice_thickness_does_nothing():
    t = 0.005
    mesh = thin_box(t, 16)
    sites = SiteSet.on_surface(mesh, plate_sites(t))
    fixed = compute_rvd_thinplate(mesh, sites, 3 * t)
    assert fixed.info["marked_regions"] == 0
    assert fixed.same_polygons(compute_rvd(mesh, sites.positions))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_thick_cube_repair_is_identity(seed):
    mesh = MESHES["cube"]()
    sites = SiteSet.on_surface(mesh, sample_surface(mesh, 150, seed)[0])
    assert compute_rvd_thinplate(mesh, sites).same_polygons(compute_rvd(mesh, sites.positions))


def test_noisy_cube_not_flagged_as_plate():
    from cwf.mesh import TriangleMesh
    c = cube(12)
    rng = np.random.default_rng(0)
    noisy, _ = normalize_area(TriangleMesh(c.vertices + rng.normal(0, 0.0025 * c.bbox_diagonal, c.vertices.shape),
                                           c.faces))
    sites = SiteSet.on_surface(noisy, sample_surface(noisy, 120, 1)[0])
    fixed = compute_rvd_thinplate(noisy, sites)
    assert fixed.info["marked_regions"] == 0


def test_default_bias_is_fraction_of_diagonal():
    mesh = MESHES["sphere"]()
    assert default_bias(mesh) == pytest.approx(0.01 * mesh.bbox_diagonal)


def test_bias_must_be_positive():
    mesh = MESHES["sphere"]()
    with pytest.raises(ValueError):
        compute_rvd_thinplate(mesh, random_sites(mesh, 5, 0), -1.0)


# --- export ----------------------------------------------------------------------------------

def test_export_groups_and_materials(tmp_path):
    mesh = MESHES["cube"]()
    d = compute_rvd(mesh, random_sites(mesh, 6, seed=4).positions)
    path = tmp_path / "cells.obj"
    export_rvd(d, path)
    text = path.read_text()
    mtl = (tmp_path / "cells.mtl").read_text()
    assert "mtllib cells.mtl" in text
    groups = [line.split()[1] for line in text.splitlines() if line.startswith("g ")]
    assert sorted(groups) == sorted(f"cell_{i}" for i in np.unique(d.owner))
    assert mtl.count("newmtl") == len(groups)
    n_faces = sum(1 for line in text.splitlines() if line.startswith("f "))
    assert n_faces == d.n_polygons


def test_export_same_input_same_bytes(tmp_path):
    mesh = MESHES["sphere"]()
    s = random_sites(mesh, 12, seed=3)
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        export_rvd(compute_rvd(mesh, s.positions), tmp_path / sub / "cells.obj")
    for name in ("cells.obj", "cells.mtl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_export_bad_path():
    d = compute_rvd(icosphere(1), [[0, 0, 1.0]])
    with pytest.raises(OSError):
        export_rvd(d, "")
