import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cwf.energy import KernelConfig, density_field, eval_boundary_correction, eval_energy
from cwf.mesh import TriangleMesh, normalize_area
from cwf.optimizer import OptimizerConfig, initialize_sites, simplify
from cwf.rvd import compute_rvd
from cwf.shapes import bumpy_sphere, cube, icosphere, square
from cwf.spatial import sample_surface

GRADIENT_MESHES = {
    "cube": lambda: normalize_area(cube(10))[0],
    "sphere": lambda: normalize_area(icosphere(3))[0],
    "bumpy": lambda: normalize_area(bumpy_sphere(3))[0],
}


def sites_on(mesh, n, seed):
    return sample_surface(mesh, n, seed)[0]


def frozen_fd(d, x, term, h=1e-6):
    """Central differences of one energy term with the decomposition held fixed."""
    fd = np.zeros_like(x)
    for i in range(len(x)):
        for k in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i, k] += h
            xm[i, k] -= h
            fd[i, k] = (getattr(eval_energy(d, xp), term) - getattr(eval_energy(d, xm), term)) / (2 * h)
    return fd


def assert_per_site_close(fd, g, rel):
    scale = np.linalg.norm(g, axis=1) + 1e-6 * np.linalg.norm(g, axis=1).max()
    err = np.linalg.norm(fd - g, axis=1)
    assert np.all(err <= rel * scale), (err / scale).max()


@pytest.mark.parametrize("name", list(GRADIENT_MESHES))
@pytest.mark.parametrize("n", [5, 20, 60])
def test_frozen_gradients_match_central_differences(name, n):
    mesh = GRADIENT_MESHES[name]()
    x = sites_on(mesh, n, seed=n)
    d = compute_rvd(mesh, x)
    rep = eval_energy(d, x)
    assert_per_site_close(frozen_fd(d, x, "e_cvt"), rep.grad_cvt, 1e-5)
    assert_per_site_close(frozen_fd(d, x, "e_na"), rep.grad_na, 1e-5)


def test_full_fd_residual_is_the_boundary_term():
    mesh = GRADIENT_MESHES["bumpy"]()
    x = sites_on(mesh, 40, seed=3)
    d = compute_rvd(mesh, x)
    first = eval_energy(d, x).grad_na
    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(len(x)):
        for k in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i, k] += h
            xm[i, k] -= h
            ep = eval_energy(compute_rvd(mesh, xp), xp).e_na
            em = eval_energy(compute_rvd(mesh, xm), xm).e_na
            fd[i, k] = (ep - em) / (2 * h)
    residual = fd - first
    correction = eval_boundary_correction(d, x, exact=True)
    assert np.linalg.norm(residual - correction) <= 0.1 * np.linalg.norm(residual)


def test_boundary_term_small_against_first_term():
    mesh = normalize_area(bumpy_sphere(4))[0]
    start = initialize_sites(mesh, 500, "poisson", seed=0)
    sites, _, _ = simplify(mesh, OptimizerConfig(max_iters=10), sites=start, thin_plate=False)
    x = sites.positions
    d = compute_rvd(mesh, x)
    first = np.linalg.norm(eval_energy(d, x).grad_na, axis=1)
    corr = np.linalg.norm(eval_boundary_correction(d, x), axis=1)
    assert np.mean(corr <= 0.05 * first) >= 0.95


def test_boundary_correction_single_site_zero():
    mesh = icosphere(2)
    d = compute_rvd(mesh, [[0, 0, 1.0]])
    assert np.all(eval_boundary_correction(d, [[0, 0, 1.0]]) == 0)


def test_boundary_correction_flat_split_equal_and_opposite():
    mesh = square(8)
    x = np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]])
    c = eval_boundary_correction(compute_rvd(mesh, x), x)
    np.testing.assert_allclose(c[0], -c[1], atol=1e-15)


# --- closed forms -----------------------------------------------------------------------

def triangle_second_moment(a, b, c, p):
    """Integral of |x - p|^2 over a triangle via barycentric moments (A/12)(sum |d_k|^2 + |sum d_k|^2)."""
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
    dk = [a - p, b - p, c - p]
    return area / 12.0 * (sum(v @ v for v in dk) + np.sum(dk, axis=0) @ np.sum(dk, axis=0))


@given(tri=arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), w=arrays(np.float64, 3, elements=st.floats(0.01, 1)))
def test_cvt_energy_matches_triangle_moment(tri, w):
    a, b, c = tri
    if 0.5 * np.linalg.norm(np.cross(b - a, c - a)) < 1e-3:
        return
    mesh = TriangleMesh(tri, [[0, 1, 2]])
    site = (w / w.sum()) @ tri
    rep = eval_energy(compute_rvd(mesh, site[None]), site[None])
    assert rep.e_cvt == pytest.approx(triangle_second_moment(a, b, c, site), rel=1e-12)
    assert rep.e_na == pytest.approx(0.0, abs=1e-15)


def test_centroid_is_cvt_stationary():
    mesh = TriangleMesh([[0, 0, 0], [2, 0, 0], [0.5, 1.5, 0]], [[0, 1, 2]])
    g = mesh.vertices.mean(axis=0)[None]
    rep = eval_energy(compute_rvd(mesh, g), g, KernelConfig(0.0, 1.0))
    assert np.abs(rep.grad).max() < 1e-10


def test_total_is_weighted_sum():
    mesh = GRADIENT_MESHES["bumpy"]()
    x = sites_on(mesh, 30, 1)
    d = compute_rvd(mesh, x)
    rep = eval_energy(d, x, KernelConfig(2.5, 0.3))
    assert rep.e_total == pytest.approx(2.5 * rep.e_na + 0.3 * rep.e_cvt, rel=1e-12)
    np.testing.assert_allclose(rep.grad, 2.5 * rep.grad_na + 0.3 * rep.grad_cvt, rtol=1e-12)
    e, g = rep.combined(1.0, 0.0)
    assert e == rep.e_na


@given(seed=st.integers(0, 1000), shift=arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_nonnegative_and_translation_invariant(seed, shift):
    mesh = GRADIENT_MESHES["bumpy"]()
    x = sites_on(mesh, 15, seed)
    a = eval_energy(compute_rvd(mesh, x), x)
    moved = TriangleMesh(mesh.vertices + shift, mesh.faces)
    b = eval_energy(compute_rvd(moved, x + shift), x + shift)
    assert a.e_na >= 0 and a.e_cvt >= 0
    assert b.e_cvt == pytest.approx(a.e_cvt, rel=1e-10)
    assert b.e_na == pytest.approx(a.e_na, rel=1e-10, abs=1e-16)


def test_planar_cells_have_zero_anisotropy():
    mesh = cube(10)
    # with one site per face center every bisector passes through a cube edge
    x = np.array([[0, 0, 0.5], [0, 0, -0.5], [0, 0.5, 0], [0, -0.5, 0], [0.5, 0, 0], [-0.5, 0, 0]])
    d = compute_rvd(mesh, x)
    np.testing.assert_allclose(d.cell_areas, 1.0, rtol=1e-12)
    rep = eval_energy(d, x, KernelConfig(1.0, 0.0))
    assert rep.per_site[:, 0].max() < 1e-14
    assert np.abs(rep.grad_na).max() < 1e-14


def test_cell_crossing_an_edge_has_anisotropy():
    mesh = cube(10)
    x = np.array([[0.5, 0.0, 0.45], [0, 0, -0.5]])
    rep = eval_energy(compute_rvd(mesh, x), x)
    assert rep.per_site[0, 0] > 1e-4


def test_site_count_mismatch():
    mesh = icosphere(1)
    d = compute_rvd(mesh, [[0, 0, 1.0], [0, 0, -1.0]])
    with pytest.raises(ValueError):
        eval_energy(d, [[0, 0, 1.0]])


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelConfig(0.0, 0.0)
    with pytest.raises(ValueError):
        KernelConfig(-1.0, 1.0)
    assert KernelConfig().cvt_metric == "identity"
    assert KernelConfig(density=np.ones(3)).cvt_metric == "density"


def test_density_scales_cvt():
    mesh = GRADIENT_MESHES["sphere"]()
    x = sites_on(mesh, 10, 0)
    d = compute_rvd(mesh, x)
    a = eval_energy(d, x)
    b = eval_energy(d, x, KernelConfig(density=np.full(mesh.n_faces, 3.0)))
    assert b.e_cvt == pytest.approx(3 * a.e_cvt, rel=1e-12)
    assert b.e_na == a.e_na


# --- density field -------------------------------------------------------------------------

def test_density_uniform():
    assert np.all(density_field(bumpy_sphere(2)) == 1.0)


def test_density_sphere_constant():
    rho = density_field(icosphere(3), "lfs")
    assert rho.max() <= 1.1 * rho.min()


def test_density_cube_higher_near_edges():
    mesh = cube(10)
    rho = density_field(mesh, "lfs")
    c = mesh.vertices[mesh.faces].mean(axis=1)
    # distance of each face centroid to the nearest cube edge
    half = 0.5
    # faces have |coordinate| = 0.5 along their normal axis, so take the second smallest
    dist = np.sort(np.stack([half - np.abs(c[:, k]) for k in range(3)], axis=1), axis=1)[:, 1]
    near = dist < 0.06
    center = dist > 0.4
    assert rho[near].min() > rho[center].max()
    assert rho.min() >= 1.0 and rho.max() <= 100.0


def test_density_unknown_mode():
    with pytest.raises(ValueError):
        density_field(cube(2), "curvature")
