"""Geometric and topological comparison of a reference mesh and a simplified mesh."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh, manifold_report
from .remesh import triangle_quality
from .spatial import euclidean, sample_surface


@dataclass(frozen=True)
class MetricsConfig:
    sample_count: int = 100_000
    f1_threshold: float = 0.005       # fraction of the reference bbox diagonal
    edge_dihedral_deg: float = 30.0
    edge_sample_count: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.sample_count <= 0 or self.edge_sample_count <= 0:
            raise ValueError("sample counts must be positive")
        if not (self.f1_threshold > 0 and self.edge_dihedral_deg > 0):
            raise ValueError("thresholds must be positive")


def _check(*sets):
    out = []
    for s in sets:
        a = np.asarray(s, dtype=float).reshape(-1, 3)
        if len(a) == 0:
            raise ValueError("point set is empty")
        out.append(a)
    return out


def _nn(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest point of ``dst`` for each of ``src`` and the Euclidean distance to it."""
    _, idx = cKDTree(dst).query(src)
    return euclidean(src, dst[idx]), idx


def chamfer(x, y) -> float:
    """Half the mean nearest distance from x to y plus half the mean from y to x."""
    x, y = _check(x, y)
    dxy, _ = _nn(x, y)
    dyx, _ = _nn(y, x)
    return float(0.5 * dxy.mean() + 0.5 * dyx.mean())


def hausdorff(x, y) -> float:
    x, y = _check(x, y)
    return float(max(_nn(x, y)[0].max(), _nn(y, x)[0].max()))


def fscore(x, y, threshold: float) -> float:
    """F1 of precision (y near x) and recall (x near y) at ``threshold``."""
    x, y = _check(x, y)
    precision = float(np.mean(_nn(y, x)[0] <= threshold))
    recall = float(np.mean(_nn(x, y)[0] <= threshold))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def normal_consistency(x, nx, y, ny) -> float:
    x, y = _check(x, y)
    nx = np.asarray(nx, dtype=float).reshape(-1, 3)
    ny = np.asarray(ny, dtype=float).reshape(-1, 3)
    _, i = _nn(x, y)
    _, j = _nn(y, x)
    a = np.abs((nx * ny[i]).sum(axis=1)).mean()
    b = np.abs((ny * nx[j]).sum(axis=1)).mean()
    return float(0.5 * (a + b))


def feature_edges(mesh: TriangleMesh, dihedral_deg: float = 30.0) -> np.ndarray:
    """Interior edges sharper than ``dihedral_deg``; open-boundary edges are not features."""
    ang = np.nan_to_num(mesh.dihedral_angles(), nan=0.0)
    return mesh.edges[ang > dihedral_deg]


def sample_edges(mesh: TriangleMesh, edges: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    """Points uniform in arc length over the given edges."""
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(length)
    pick = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    pick = np.minimum(pick, len(edges) - 1)
    t = rng.random(count)[:, None]
    return a[pick] + t * (b[pick] - a[pick])


def edge_metrics(gt: TriangleMesh, simplified: TriangleMesh, cfg: MetricsConfig = MetricsConfig()):
    """``(ecd, ef1)`` on points sampled along sharp edges of both meshes.

    When only one mesh has sharp edges, ECD is the reference bbox diagonal and
    EF1 is 0. When neither has any, ECD is 0 and EF1 is 1.
    """
    eg = feature_edges(gt, cfg.edge_dihedral_deg)
    es = feature_edges(simplified, cfg.edge_dihedral_deg)
    diag = gt.bbox_diagonal
    if len(eg) == 0 and len(es) == 0:
        return 0.0, 1.0
    if len(eg) == 0 or len(es) == 0:
        return float(diag), 0.0
    pg = sample_edges(gt, eg, cfg.edge_sample_count, cfg.seed)
    ps = sample_edges(simplified, es, cfg.edge_sample_count, cfg.seed)
    return chamfer(pg, ps), fscore(pg, ps, cfg.f1_threshold * diag)


@dataclass
class MetricsReport:
    cd: float
    hd: float
    f1: float
    nc: float
    ecd: float
    ef1: float
    triangle_q_mean: float
    triangle_q_min: float
    open_b: int
    nmv: int
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def full_report(gt: TriangleMesh, simplified: TriangleMesh, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    xg, ng, _ = sample_surface(gt, cfg.sample_count, cfg.seed)
    xs, ns, _ = sample_surface(simplified, cfg.sample_count, cfg.seed)
    thr = cfg.f1_threshold * gt.bbox_diagonal
    ecd, ef1 = edge_metrics(gt, simplified, cfg)
    q = triangle_quality(simplified.vertices, simplified.faces)
    open_b, nmv = manifold_report(simplified)
    echo = asdict(cfg)
    echo["f1_distance"] = thr
    return MetricsReport(
        cd=chamfer(xg, xs), hd=hausdorff(xg, xs), f1=fscore(xg, xs, thr),
        nc=normal_consistency(xg, ng, xs, ns), ecd=ecd, ef1=ef1,
        triangle_q_mean=float(q.mean()) if len(q) else 0.0,
        triangle_q_min=float(q.min()) if len(q) else 0.0,
        open_b=open_b, nmv=nmv, config_echo=echo,
    )
