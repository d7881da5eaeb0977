"""Quadrature on triangles and convex polygons, including integrands with a
jump across a known horizon graph x1 = gamma(x2).

Two discontinuity-aware paths are provided:
  * split-based integration when the jump set is a graph (exact up to the
    polyline resolution of the graph),
  * recursive quartering driven by a sampled side indicator, for integrands
    that are only flagged as cartoon-valued.
"""
from __future__ import annotations

import numpy as np

from .geometry import (
    clip_halfplane,
    normalize_polygon,
    polygon_area,
    polygon_centroid,
)

# Symmetric Gauss rules on the reference triangle (barycentric coordinates,
# weights normalized to sum to 1; multiply by the physical area).
_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _build_rules():
    third = 1.0 / 3.0
    _RULES[1] = (np.array([[third, third, third]]), np.array([1.0]))
    a = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    _RULES[2] = (a, np.full(3, 1 / 3))
    # 6-point degree-4 rule
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = []
    for aa in (a1, a2):
        pts += [[1 - 2 * aa, aa, aa], [aa, 1 - 2 * aa, aa], [aa, aa, 1 - 2 * aa]]
    _RULES[4] = (np.array(pts), np.array([w1] * 3 + [w2] * 3))
    _RULES[3] = _RULES[4]
    # 7-point degree-5 rule
    b1, v1 = 0.470142064105115, 0.132394152788506
    b2, v2 = 0.101286507323456, 0.125939180544827
    pts = [[third, third, third]]
    for bb in (b1, b2):
        pts += [[1 - 2 * bb, bb, bb], [bb, 1 - 2 * bb, bb], [bb, bb, 1 - 2 * bb]]
    _RULES[5] = (np.array(pts), np.array([0.225] + [v1] * 3 + [v2] * 3))


_build_rules()


def tri_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and unit weights exact for polynomials of `degree`."""
    if degree < 1:
        degree = 1
    if degree > 5:
        raise ValueError(f"no rule of degree {degree}")
    return _RULES[degree]


def tri_points(tri: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points and weights on one triangle (3,2)."""
    bary, w = tri_rule(degree)
    pts = bary @ tri
    a = 0.5 * abs(
        (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
        - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0])
    )
    return pts, w * a


def fan_triangles(verts: np.ndarray) -> np.ndarray:
    """(n,3,2) centroid fan of a convex polygon."""
    c = polygon_centroid(verts)
    n = len(verts)
    tris = np.empty((n, 3, 2))
    tris[:, 0] = c
    tris[:, 1] = verts
    tris[:, 2] = np.roll(verts, -1, axis=0)
    return tris


def poly_quad(verts: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points/weights over a convex polygon via a centroid fan."""
    if len(verts) == 3:
        return tri_points(verts, degree)
    bary, w = tri_rule(degree)
    tris = fan_triangles(verts)
    pts = np.einsum("qb,tbx->tqx", bary, tris).reshape(-1, 2)
    areas = 0.5 * np.abs(
        (tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
        - (tris[:, 1, 1] - tris[:, 0, 1]) * (tris[:, 2, 0] - tris[:, 0, 0])
    )
    weights = (areas[:, None] * w[None, :]).reshape(-1)
    return pts, weights


def integrate_polygon(fn, verts: np.ndarray, degree: int = 4) -> float:
    pts, w = poly_quad(verts, degree)
    return float(np.dot(np.asarray(fn(pts), dtype=float), w))


def gauss_segment(a: np.ndarray, b: np.ndarray, n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule on the segment [a, b]; weights carry the length."""
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return pts, 0.5 * w * float(np.hypot(*(b - a)))


# ---------------------------------------------------------------------------
# jump across a horizon graph


class GraphJump:
    """Jump set given as x1 = gamma(x2), discretized at fixed ordinates.

    The ordinates bound the secant error: between consecutive nodes the graph
    is replaced by its chord when splitting cells.
    """

    def __init__(self, x_of_y, y_nodes: np.ndarray):
        self.x_of_y = x_of_y
        self.y_nodes = np.asarray(y_nodes, dtype=float)

    @classmethod
    def from_function(cls, x_of_y, n: int = 4097, y_range=(0.0, 1.0)):
        return cls(x_of_y, np.linspace(y_range[0], y_range[1], n))

    def side(self, pts: np.ndarray) -> np.ndarray:
        """-1 on {x1 <= gamma(x2)}, +1 on the other side."""
        pts = np.atleast_2d(pts)
        return np.where(pts[:, 0] <= self.x_of_y(pts[:, 1]), -1.0, 1.0)


def split_polygon_by_graph(verts: np.ndarray, jump: GraphJump):
    """Partition a convex polygon into pieces left/right of the graph chords.

    Returns (left_pieces, right_pieces); exact with respect to the polyline
    interpolant of the graph on the jump's ordinate nodes.
    """
    y = verts[:, 1]
    y0, y1 = float(y.min()), float(y.max())
    inside = jump.y_nodes[(jump.y_nodes > y0) & (jump.y_nodes < y1)]
    cuts = np.concatenate(([y0], inside, [y1]))
    left, right = [], []
    ex = np.array([1.0, 0.0])  # keep-left of +x direction is the set {y >= a}
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-15:
            continue
        band = clip_halfplane(verts, np.array([0.0, a]), ex)
        if band is not None:
            band = clip_halfplane(band, np.array([0.0, b]), -ex)
        if band is None:
            continue
        pa = np.array([float(jump.x_of_y(a)), a])
        pb = np.array([float(jump.x_of_y(b)), b])
        d = pb - pa
        if abs(d[1]) < 1e-15:
            right.append(band)
            continue
        lpiece = clip_halfplane(band, pa, d)  # x1 <= gamma side
        rpiece = clip_halfplane(band, pa, -d)
        if lpiece is not None and polygon_area(lpiece) > 1e-16:
            left.append(lpiece)
        if rpiece is not None and polygon_area(rpiece) > 1e-16:
            right.append(rpiece)
    return left, right


def integrate_jump_polygon(f_left, f_right, jump: GraphJump, verts: np.ndarray, degree: int = 5) -> float:
    """Integral of f_left on {x1 <= gamma} and f_right elsewhere, over a polygon."""
    y0, y1 = float(verts[:, 1].min()), float(verts[:, 1].max())
    probe = jump.y_nodes[(jump.y_nodes >= y0) & (jump.y_nodes <= y1)]
    gy = jump.x_of_y(np.concatenate((probe, [y0, y1])))
    if float(verts[:, 0].max()) <= float(gy.min()):
        return integrate_polygon(f_left, verts, degree)
    if float(verts[:, 0].min()) >= float(gy.max()):
        return integrate_polygon(f_right, verts, degree)
    left, right = split_polygon_by_graph(verts, jump)
    total = 0.0
    for piece in left:
        total += integrate_polygon(f_left, piece, degree)
    for piece in right:
        total += integrate_polygon(f_right, piece, degree)
    return total


# ---------------------------------------------------------------------------
# recursive quartering for flagged integrands


def _quarter(verts: np.ndarray) -> list[np.ndarray]:
    n = len(verts)
    if n == 3:
        a, b, c = verts
        mab, mbc, mca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        return [
            np.array([a, mab, mca]),
            np.array([mab, b, mbc]),
            np.array([mca, mbc, c]),
            np.array([mab, mbc, mca]),
        ]
    if n == 4:
        mids = [0.5 * (verts[i] + verts[(i + 1) % 4]) for i in range(4)]
        c = 0.25 * verts.sum(axis=0)
        return [
            np.array([verts[0], mids[0], c, mids[3]]),
            np.array([mids[0], verts[1], mids[1], c]),
            np.array([c, mids[1], verts[2], mids[2]]),
            np.array([mids[3], c, mids[2], verts[3]]),
        ]
    return [normalize_polygon(t) for t in fan_triangles(verts)]


def integrate_flagged(fn, side_fn, verts: np.ndarray, degree: int = 4,
                      max_depth: int = 12, min_area: float = 1e-10) -> float:
    """Recursively quarter a cell until the sampled jump indicator is uniform
    or the piece is below the area floor, then apply one rule per leaf."""
    total = 0.0
    stack = [(verts, 0)]
    while stack:
        poly, depth = stack.pop()
        pts, w = poly_quad(poly, degree)
        sides = np.asarray(side_fn(pts))
        if depth >= max_depth or abs(polygon_area(poly)) < min_area or (sides == sides[0]).all():
            total += float(np.dot(np.asarray(fn(pts), dtype=float), w))
        else:
            for piece in _quarter(poly):
                stack.append((piece, depth + 1))
    return total
