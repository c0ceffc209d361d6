"""Six-point Albrecht-Collatz rule on triangles and polygon integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric nodes and weights normalized so the weights sum to 1.

    ``integral = area * sum(w_k * f(node_k))``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def points(self, a, b, c) -> np.ndarray:
        """Quadrature points for triangles (a, b, c); shape ``(..., 6, 3)``."""
        a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
        tri = np.stack([a, b, c], axis=-2)
        return np.einsum("kj,...jd->...kd", self.nodes, tri)


# edge midpoints carry 1/30 each, the three interior points (2/3, 1/6, 1/6) carry 3/10
ALBRECHT_COLLATZ = QuadratureRule(
    nodes=np.array([
        [0.5, 0.5, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]),
    weights=np.array([1.0 / 30.0] * 3 + [3.0 / 10.0] * 3),
    degree=3,
)


def triangle_area(a, b, c) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(np.asarray(b) - a, np.asarray(c) - a), axis=-1)


def integrate_triangles(a, b, c, f, rule: QuadratureRule = ALBRECHT_COLLATZ) -> np.ndarray:
    """Per-triangle integrals of ``f`` (vectorized over the last point axis)."""
    pts = rule.points(a, b, c)
    vals = np.asarray(f(pts))
    return triangle_area(a, b, c) * np.tensordot(vals, rule.weights, axes=([-1], [0]))


def integrate_polygon(poly, f, rule: QuadratureRule = ALBRECHT_COLLATZ) -> float:
    """Integral of ``f`` over a planar convex polygon, fan-triangulated from vertex 0.

    ``f`` maps an array of points ``(..., 3)`` to values ``(...)``.
    Degenerate polygons integrate to 0.
    """
    poly = np.asarray(poly, dtype=float)
    if poly.ndim != 2 or len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    k = len(poly)
    a = np.repeat(poly[:1], k - 2, axis=0)
    b, c = poly[1:-1], poly[2:]
    if poly.shape[1] == 2:
        a, b, c = (np.pad(x, ((0, 0), (0, 1))) for x in (a, b, c))
        g = f
        f = lambda p: g(p[..., :2])  # noqa: E731
    return float(integrate_triangles(a, b, c, f, rule).sum())
