"""Normal-anisotropy + CVT functional and its gradients over a decomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh
from .quadrature import ALBRECHT_COLLATZ, QuadratureRule
from .rvd import Decomposition, SiteSet, boundary_segments


@dataclass(frozen=True)
class KernelConfig:
    """Weights of the two terms; ``density`` (one value per mesh face) scales the CVT metric."""

    lambda_na: float = 1.0
    lambda_cvt: float = 1.0
    density: np.ndarray | None = None

    def __post_init__(self):
        if self.lambda_na < 0 or self.lambda_cvt < 0:
            raise ValueError("weights must be non-negative")
        if self.lambda_na == 0 and self.lambda_cvt == 0:
            raise ValueError("at least one weight must be positive")

    @property
    def cvt_metric(self) -> str:
        return "identity" if self.density is None else "density"

    def with_lambda_cvt(self, value: float) -> "KernelConfig":
        return KernelConfig(self.lambda_na, value, self.density)


@dataclass
class EnergyReport:
    e_na: float
    e_cvt: float
    e_total: float
    grad: np.ndarray
    grad_na: np.ndarray
    grad_cvt: np.ndarray
    per_site: np.ndarray | None = None

    def combined(self, lambda_na: float, lambda_cvt: float) -> tuple[float, np.ndarray]:
        """Total energy and gradient for other weights, without re-integrating."""
        return (lambda_na * self.e_na + lambda_cvt * self.e_cvt,
                lambda_na * self.grad_na + lambda_cvt * self.grad_cvt)


def _positions(sites) -> np.ndarray:
    return sites.positions if isinstance(sites, SiteSet) else np.asarray(sites, dtype=float).reshape(-1, 3)


def eval_energy(d: Decomposition, sites, kernel: KernelConfig = KernelConfig(),
                rule: QuadratureRule = ALBRECHT_COLLATZ) -> EnergyReport:
    """Integrate both terms cell by cell and return energies with per-site gradients.

    The anisotropy gradient keeps only the interior integral; the contribution
    of moving cell boundaries is dropped.
    """
    x = _positions(sites)
    n = len(x)
    if d.n_sites != n:
        raise ValueError(f"decomposition has {d.n_sites} sites, got {n} positions")
    poly, i0, i1, i2 = d.fan
    v = d.verts
    a, b, c = v[i0], v[i1], v[i2]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    owner = d.owner[poly]
    normal = d.normals[poly]
    rho = np.ones(len(poly)) if kernel.density is None else np.asarray(kernel.density)[d.face[poly]]

    pts = rule.points(a, b, c)                      # (T, 6, 3)
    diff = pts - x[owner][:, None, :]
    w = area[:, None] * rule.weights[None, :]       # (T, 6)
    proj = np.einsum("tkd,td->tk", diff, normal)
    sq = np.einsum("tkd,tkd->tk", diff, diff)

    na_t = np.einsum("tk,tk->t", w, proj * proj)
    cvt_t = rho * np.einsum("tk,tk->t", w, sq)
    g_na_t = -2.0 * np.einsum("tk,tk->t", w, proj)[:, None] * normal
    g_cvt_t = -2.0 * rho[:, None] * np.einsum("tk,tkd->td", w, diff)

    per_site = np.stack([np.bincount(owner, na_t, n), np.bincount(owner, cvt_t, n)], axis=1)
    grad_na = np.stack([np.bincount(owner, g_na_t[:, k], n) for k in range(3)], axis=1)
    grad_cvt = np.stack([np.bincount(owner, g_cvt_t[:, k], n) for k in range(3)], axis=1)
    e_na = float(per_site[:, 0].sum())
    e_cvt = float(per_site[:, 1].sum())
    e_total = kernel.lambda_na * e_na + kernel.lambda_cvt * e_cvt
    grad = kernel.lambda_na * grad_na + kernel.lambda_cvt * grad_cvt
    return EnergyReport(e_na, e_cvt, e_total, grad, grad_na, grad_cvt, per_site)


_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def eval_boundary_correction(d: Decomposition, sites, exact: bool = False) -> np.ndarray:
    """Boundary line integrals of the anisotropy gradient, per site.

    Integrates ``((x - x_i).n)^2 - ((x - x_j).n)^2`` along each shared boundary
    with two Gauss points. The default uses the velocity ``e_ij / (2|e_ij|)``
    (``e_ij = x_j - x_i``); ``exact=True`` uses the true in-surface velocity of
    the bisector, ``(x - x_i) / |e_ij projected on the face|``.
    For validation only: the optimizer never calls this.
    """
    x = _positions(sites)
    out = np.zeros_like(x)
    normals = d.mesh.face_normals
    for i, j, f, p, q in boundary_segments(d):
        nrm = normals[f]
        length = np.linalg.norm(q - p)
        pts = p[None, :] + _GAUSS2[:, None] * (q - p)[None, :]
        fi = ((pts - x[i]) @ nrm) ** 2
        fj = ((pts - x[j]) @ nrm) ** 2
        g = (fi - fj) * (0.5 * length)               # two equal Gauss weights
        e = x[j] - x[i]
        if exact:
            et = np.linalg.norm(e - (e @ nrm) * nrm)
            if et <= 0:
                continue
            out[i] += (g[:, None] * (pts - x[i])).sum(axis=0) / et
            out[j] += (-g[:, None] * (pts - x[j])).sum(axis=0) / et
        else:
            ne = np.linalg.norm(e)
            if ne <= 0:
                continue
            vel = e / (2.0 * ne)
            out[i] += g.sum() * vel
            # mirrored formula for j: (f_j - f_i) * e_ji / (2|e_ji|)
            out[j] += g.sum() * vel
    return out


def density_field(mesh: TriangleMesh, mode: str = "uniform", dihedral_deg: float = 30.0,
                  clamp: tuple[float, float] = (1.0, 100.0)) -> np.ndarray:
    """Per-face density for the CVT term.

    ``lfs`` approximates local feature size by the distance from each face
    centroid to the nearest vertex of a sharp edge; density goes as 1/lfs^2,
    scaled so the face farthest from any feature gets the lower clamp.
    """
    if mode == "uniform":
        return np.ones(mesh.n_faces)
    if mode != "lfs":
        raise ValueError(f"unknown density mode '{mode}'")
    angles = mesh.dihedral_angles()
    sharp = np.nan_to_num(angles, nan=0.0) > dihedral_deg
    if not sharp.any():
        return np.ones(mesh.n_faces)
    feature_verts = np.unique(mesh.edges[sharp].ravel())
    v, f = mesh.vertices, mesh.faces
    centroids = (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0
    lfs, _ = cKDTree(v[feature_verts]).query(centroids)
    lfs = np.maximum(lfs, 1e-12 * mesh.bbox_diagonal)
    rho = (lfs.max() / lfs) ** 2
    return np.clip(rho, *clamp)
