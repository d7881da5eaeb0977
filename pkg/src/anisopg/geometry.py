"""Convex polygonal cells, partitions, and the refinement operators.

Cells are stored as explicit CCW vertex arrays.  Parallelograms produced by
parabolic scaling and shearing additionally carry a lattice index (scale j,
shear k, anchor m, base scale j0) so that anisotropic children can be
enumerated without recomputing lattice positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Two points coincide below this distance; polygons are interior-disjoint
# when their intersection area is below it (scaled by the smaller area).
COINCIDE_TOL = 1e-12

PARALLELOGRAM = "parallelogram"
TRIANGLE = "triangle"
POLYGON = "polygon"


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scaling and shearing


def dilation_matrix(j: int) -> np.ndarray:
    """diag(2^j, 2^floor(j/2)): parabolic scaling at scale j >= 0."""
    if j < 0:
        raise GeometryError(f"scale must be nonnegative, got {j}")
    return np.array([[2.0**j, 0.0], [0.0, 2.0 ** (j // 2)]])


def shear_matrix(k: int) -> np.ndarray:
    """[[1, k], [0, 1]]: horizontal shear by integer k."""
    return np.array([[1.0, float(k)], [0.0, 1.0]])


@dataclass(frozen=True)
class ShearIndex:
    """Lattice index of a sheared parallelogram: scale j, shear k, anchor m."""

    j: int
    k: int
    m: tuple[float, float]
    j0: int

    def __post_init__(self):
        if self.j < 0 or self.j0 < 0:
            raise GeometryError("scales must be nonnegative")
        # anchor must sit on the lattice 2^-j0 * D_j^{-1} Z^2
        sx = 2.0 ** (-self.j0 - self.j)
        sy = 2.0 ** (-self.j0 - self.j // 2)
        for coord, step in ((self.m[0], sx), (self.m[1], sy)):
            if abs(coord / step - round(coord / step)) > 1e-9:
                raise GeometryError(f"anchor {self.m} off the level-{self.j} lattice")

    def x_step(self) -> float:
        return 2.0 ** (-self.j0 - self.j)

    def y_step(self) -> float:
        return 2.0 ** (-self.j0 - self.j // 2)


# ---------------------------------------------------------------------------
# polygon primitives


def polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(verts: np.ndarray) -> np.ndarray:
    x, y = verts[:, 0], verts[:, 1]
    xr, yr = np.roll(x, -1), np.roll(y, -1)
    cross = x * yr - xr * y
    a = 0.5 * cross.sum()
    if abs(a) < 1e-300:
        return verts.mean(axis=0)
    cx = ((x + xr) * cross).sum() / (6.0 * a)
    cy = ((y + yr) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def polygon_diameter(verts: np.ndarray) -> float:
    d = verts[:, None, :] - verts[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def normalize_polygon(verts: np.ndarray) -> np.ndarray:
    """CCW orientation, duplicate and collinear vertices removed."""
    v = np.asarray(verts, dtype=float)
    if polygon_area(v) < 0:
        v = v[::-1]
    # drop near-duplicate consecutive vertices
    keep = []
    n = len(v)
    for i in range(n):
        if np.abs(v[i] - v[(i + 1) % n]).max() > COINCIDE_TOL:
            keep.append(i)
    v = v[keep]
    # drop collinear middle vertices
    n = len(v)
    if n >= 3:
        prev = v[np.arange(n) - 1]
        nxt = v[(np.arange(n) + 1) % n]
        e1 = v - prev
        e2 = nxt - v
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        scale = np.maximum(np.abs(e1).max(1) * np.abs(e2).max(1), 1e-300)
        v = v[cross / scale > 1e-10]
    return v


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray | None:
    """Sutherland-Hodgman intersection of two convex CCW polygons."""
    out = subject
    n = len(clip)
    for i in range(n):
        a = clip[i]
        b = clip[(i + 1) % n]
        out = clip_halfplane(out, a, b - a)
        if out is None:
            return None
    return out


def clip_halfplane(verts: np.ndarray, point: np.ndarray, direction: np.ndarray) -> np.ndarray | None:
    """Keep the part of a convex CCW polygon left of the oriented line."""
    if verts is None or len(verts) == 0:
        return None
    d = verts - point
    side = direction[0] * d[:, 1] - direction[1] * d[:, 0]
    tol = 1e-14 * max(1.0, float(np.abs(verts).max()))
    if (side >= -tol).all():
        return verts
    if (side <= tol).all():
        return None
    out = []
    n = len(verts)
    for i in range(n):
        j = (i + 1) % n
        si, sj = side[i], side[j]
        if si >= -tol:
            out.append(verts[i])
        if (si > tol and sj < -tol) or (si < -tol and sj > tol):
            t = si / (si - sj)
            out.append(verts[i] + t * (verts[j] - verts[i]))
    if len(out) < 3:
        return None
    res = normalize_polygon(np.array(out))
    if len(res) < 3 or polygon_area(res) <= 0.0:
        return None
    return res


def intersection_area(a: np.ndarray, b: np.ndarray) -> float:
    inter = clip_convex(a, b)
    return 0.0 if inter is None else polygon_area(inter)


def point_in_polygon(verts: np.ndarray, p, tol: float = 1e-12) -> bool:
    p = np.asarray(p, dtype=float)
    nxt = np.roll(verts, -1, axis=0)
    e = nxt - verts
    d = p[None, :] - verts
    cross = e[:, 0] * d[:, 1] - e[:, 1] * d[:, 0]
    return bool((cross >= -tol).all())


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Cell:
    """Convex cell of a partition.

    index is set only when the cell geometrically equals its full lattice
    parallelogram; triangles cut from an unclipped anisotropic child keep the
    child's index with from_aniso=True so MERGE can pair them back up.
    """

    verts: np.ndarray
    kind: str
    index: ShearIndex | None = None
    parity_level: int = 0
    from_aniso: bool = False

    def __post_init__(self):
        self.verts.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.verts)


def classify_kind(verts: np.ndarray) -> str:
    n = len(verts)
    if n == 3:
        return TRIANGLE
    if n == 4:
        e0 = verts[1] - verts[0]
        e1 = verts[2] - verts[1]
        e2 = verts[3] - verts[2]
        e3 = verts[0] - verts[3]
        scale = max(1.0, float(np.abs(verts).max()))
        if np.abs(e0 + e2).max() <= 1e-9 * scale and np.abs(e1 + e3).max() <= 1e-9 * scale:
            return PARALLELOGRAM
    return POLYGON


def make_cell(verts, index=None, parity_level=0, from_aniso=False) -> Cell:
    v = normalize_polygon(np.asarray(verts, dtype=float))
    if len(v) < 3:
        raise GeometryError("degenerate cell (fewer than 3 vertices)")
    a = polygon_area(v)
    if a <= 0.0:
        raise GeometryError("cell must have positive area")
    if not np.isfinite(v).all():
        raise GeometryError("cell has non-finite vertices")
    return Cell(v, classify_kind(v), index, parity_level, from_aniso)


def area(cell: Cell) -> float:
    return polygon_area(cell.verts)


def diameter(cell: Cell) -> float:
    return polygon_diameter(cell.verts)


def contains(cell: Cell, p, tol: float = 1e-12) -> bool:
    return point_in_polygon(cell.verts, p, tol)


def clip(cell: Cell, poly: np.ndarray, parity_level=None) -> Cell | None:
    """Intersect a cell with a convex polygon; None when (nearly) empty."""
    inter = clip_convex(cell.verts, np.asarray(poly, dtype=float))
    if inter is None or polygon_area(inter) < COINCIDE_TOL:
        return None
    lvl = cell.parity_level if parity_level is None else parity_level
    return make_cell(inter, index=None, parity_level=lvl)


def make_parallelogram(idx: ShearIndex) -> Cell:
    """Lattice parallelogram D_j^{-1} S_k (2^-j0 [0,1]^2) + m."""
    s = 2.0**-idx.j0
    corners = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])
    sheared = corners @ shear_matrix(idx.k).T
    scaled = sheared @ np.diag([2.0**-idx.j, 2.0 ** -(idx.j // 2)])
    verts = scaled + np.asarray(idx.m, dtype=float)
    cell = make_cell(verts, index=idx)
    if cell.kind != PARALLELOGRAM:
        raise GeometryError("lattice cell degenerated")
    return cell


# Anchor offsets (in level-j lattice x-steps) whose children cover the parent.
# The children of R^an_iota lean by iota lattice steps relative to the parent
# over the parent height, which fixes the covering window per direction.
_ANISO_OFFSETS = {-1: (0, 1, 2), 0: (0, 1), 1: (-1, 0, 1)}


def refine_aniso(parent: Cell, direction: int, domain: np.ndarray | None = None) -> list[Cell]:
    """Anisotropic refinement R^an_direction of a lattice parallelogram.

    Children are the level-(j+1) lattice cells of shear 2k+direction clipped
    against the parent (and the domain); empty intersections are dropped and
    the union of the children equals the parent.
    """
    if direction not in (-1, 0, 1):
        raise GeometryError(f"direction must be -1, 0 or +1, got {direction}")
    if parent.kind != PARALLELOGRAM or parent.index is None:
        raise GeometryError("refine_aniso needs an indexed parallelogram")
    idx = parent.index
    if idx.j % 2 != 0:
        raise GeometryError("anisotropic refinement expects an even-scale parent")
    j = idx.j + 1
    k = 2 * idx.k + direction
    sx = 2.0 ** (-idx.j0 - j)
    children: list[Cell] = []
    total = 0.0
    for t in _ANISO_OFFSETS[direction]:
        child_idx = ShearIndex(j, k, (idx.m[0] + t * sx, idx.m[1]), idx.j0)
        cand = make_parallelogram(child_idx)
        poly = clip_convex(cand.verts, parent.verts)
        if poly is not None and domain is not None:
            poly = clip_convex(poly, domain)
        if poly is None:
            continue
        a = polygon_area(poly)
        if a < COINCIDE_TOL:
            continue
        total += a
        full = abs(a - polygon_area(cand.verts)) <= 1e-12 * polygon_area(cand.verts)
        v = normalize_polygon(poly)
        kind = classify_kind(v)
        children.append(
            Cell(
                v,
                kind,
                index=child_idx if (full or kind == TRIANGLE) else None,
                parity_level=parent.parity_level + 1,
                from_aniso=(kind == TRIANGLE),
            )
        )
    parent_area = area(parent)
    if abs(total - parent_area) > 1e-10 * parent_area:
        raise GeometryError("anisotropic children do not cover the parent")
    return children


def refine_iso(cell: Cell) -> list[Cell]:
    """Dyadic refinement into four congruent children (midpoint subdivision)."""
    lvl = cell.parity_level + 1
    if cell.kind == TRIANGLE:
        a, b, c = cell.verts
        mab, mbc, mca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        polys = [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
        return [make_cell(np.array(p), parity_level=lvl) for p in polys]
    if cell.kind == PARALLELOGRAM:
        v = cell.verts
        mids = [0.5 * (v[i] + v[(i + 1) % 4]) for i in range(4)]
        center = 0.5 * (v[0] + v[2])
        polys = [
            (v[0], mids[0], center, mids[3]),
            (mids[0], v[1], mids[1], center),
            (center, mids[1], v[2], mids[2]),
            (mids[3], center, mids[2], v[3]),
        ]
        children_idx = _iso_child_indices(cell)
        return [
            Cell(normalize_polygon(np.array(p)), PARALLELOGRAM, ci, lvl)
            for p, ci in zip(polys, children_idx)
        ]
    raise GeometryError("refine_iso handles triangles and parallelograms only")


def _iso_child_indices(cell: Cell):
    """Lattice indices of the 2x2 children, when the split stays on-lattice.

    Halving both dimensions of a level-j lattice cell lands on the level-(j+1)
    lattice only when j is odd (the y step halves exactly then).
    """
    idx = cell.index
    if idx is None or idx.j % 2 == 0:
        return [None] * 4
    j1 = idx.j + 1
    wx = 2.0 ** (-idx.j0 - j1)
    hy = 2.0 ** (-idx.j0 - j1 // 2)
    dx_up = idx.k * wx  # horizontal displacement of the upper row anchor
    m = idx.m
    anchors = [
        (m[0], m[1]),
        (m[0] + wx, m[1]),
        (m[0] + wx + dx_up, m[1] + hy),
        (m[0] + dx_up, m[1] + hy),
    ]
    return [ShearIndex(j1, idx.k, a, idx.j0) for a in anchors]


def refine_iso_pow(cell: Cell, level: int) -> list[Cell]:
    """level-fold recursion of refine_iso; level=0 returns [cell]."""
    if level < 0:
        raise GeometryError("recursion depth must be nonnegative")
    cells = [cell]
    for _ in range(level):
        nxt = []
        for c in cells:
            nxt.extend(refine_iso(c))
        cells = nxt
    return cells


def fan_triangulate(cell: Cell) -> list[Cell]:
    """Centroid fan of a generic convex polygon into triangles."""
    c = polygon_centroid(cell.verts)
    lvl = cell.parity_level + 1
    out = []
    n = len(cell.verts)
    for i in range(n):
        out.append(make_cell(np.array([c, cell.verts[i], cell.verts[(i + 1) % n]]), parity_level=lvl))
    return out


def refine_any_iso(cell: Cell) -> list[Cell]:
    """Isotropic refinement closed over all cell kinds.

    Generic polygons are first fan-triangulated (they only arise from
    trimming and are refined isotropically from then on).
    """
    if cell.kind in (TRIANGLE, PARALLELOGRAM):
        return refine_iso(cell)
    return fan_triangulate(cell)


def merge_pairs(cells: list[Cell]) -> list[Cell]:
    """Fuse pairs of anisotropic-split triangles whose union is a parallelogram.

    The two halves of one unclipped lattice child carry the same ShearIndex;
    a pair merges exactly when their areas fill that child. Cells are scanned
    in creation order and all other cells pass through unchanged.
    """
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(cells):
        if c.from_aniso and c.kind == TRIANGLE and c.index is not None:
            key = (c.index.j, c.index.k, round(c.index.m[0], 14), round(c.index.m[1], 14), c.index.j0)
            groups.setdefault(key, []).append(i)
    replace_at: dict[int, Cell] = {}
    drop: set[int] = set()
    for key, members in groups.items():
        if len(members) != 2:
            continue
        i, j = members
        idx = cells[i].index
        para = make_parallelogram(idx)
        if abs(area(cells[i]) + area(cells[j]) - area(para)) <= 1e-12 * area(para):
            replace_at[i] = Cell(
                para.verts, PARALLELOGRAM, idx, max(cells[i].parity_level, cells[j].parity_level)
            )
            drop.add(j)
    out = []
    for i, c in enumerate(cells):
        if i in drop:
            continue
        out.append(replace_at.get(i, c))
    return out


# ---------------------------------------------------------------------------
# bisection split rules


def _boundary_points(cell: Cell, inserts: dict[int, np.ndarray]) -> list[np.ndarray]:
    """Vertex cycle with midpoints inserted after the given edge start ids."""
    pts = []
    n = len(cell.verts)
    for i in range(n):
        pts.append(cell.verts[i])
        if i in inserts:
            pts.append(inserts[i])
    return pts


def _cut(points: list[np.ndarray], ia: int, ib: int, lvl: int) -> list[Cell]:
    n = len(points)
    first = [points[k % n] for k in range(ia, ib + 1)]
    second = [points[k % n] for k in range(ib, ia + n + 1)]
    return [make_cell(np.array(first), parity_level=lvl), make_cell(np.array(second), parity_level=lvl)]


def split_r1(cell: Cell, vertex_id: int, edge_id: int) -> list[Cell]:
    """Connect a vertex with the midpoint of an edge not containing it."""
    n = len(cell.verts)
    if edge_id == vertex_id or (edge_id + 1) % n == vertex_id:
        raise GeometryError("edge contains the vertex")
    mid = 0.5 * (cell.verts[edge_id] + cell.verts[(edge_id + 1) % n])
    pts = _boundary_points(cell, {edge_id: mid})
    iv = vertex_id if vertex_id <= edge_id else vertex_id + 1
    im = edge_id + 1
    lo, hi = min(iv, im), max(iv, im)
    return _cut(pts, lo, hi, cell.parity_level + 1)


def split_r2(cell: Cell, v1: int, v2: int) -> list[Cell]:
    """Connect two vertices (quadrilaterals: a diagonal)."""
    n = len(cell.verts)
    if n != 4:
        raise GeometryError("split_r2 expects a quadrilateral")
    if (v2 - v1) % n in (1, n - 1) or v1 == v2:
        raise GeometryError("vertices must be non-adjacent")
    pts = [cell.verts[i] for i in range(n)]
    lo, hi = min(v1, v2), max(v1, v2)
    return _cut(pts, lo, hi, cell.parity_level + 1)


def split_r3(cell: Cell, e1: int, e2: int) -> list[Cell]:
    """Connect the midpoints of two edges (quads: edges sharing no vertex)."""
    n = len(cell.verts)
    if e1 == e2:
        raise GeometryError("edges must differ")
    if n == 4 and e2 % n in ((e1 + 1) % n, (e1 - 1) % n):
        raise GeometryError("quadrilateral edges must not share a vertex")
    a, b = (e1, e2) if e1 < e2 else (e2, e1)
    mid_a = 0.5 * (cell.verts[a] + cell.verts[(a + 1) % n])
    mid_b = 0.5 * (cell.verts[b] + cell.verts[(b + 1) % n])
    pts = _boundary_points(cell, {a: mid_a, b: mid_b})
    return _cut(pts, a + 1, b + 2, cell.parity_level + 1)


# ---------------------------------------------------------------------------
# partitions


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass
class Partition:
    """Finite collection of interior-disjoint cells covering a rectangle."""

    cells: list[Cell]
    domain: np.ndarray = None
    counter: int = 0  # refinement-level parity counter

    def __post_init__(self):
        if self.domain is None:
            self.domain = UNIT_SQUARE.copy()

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def total_area(self) -> float:
        return float(sum(area(c) for c in self.cells))

    def check_area(self, tol: float = 1e-12) -> bool:
        return abs(self.total_area() - polygon_area(self.domain)) <= tol * max(1.0, polygon_area(self.domain))

    def check_disjoint(self, tol: float = 1e-12) -> bool:
        """Pairwise interior disjointness; O(n^2) with a bbox prefilter."""
        boxes = np.array(
            [[c.verts[:, 0].min(), c.verts[:, 1].min(), c.verts[:, 0].max(), c.verts[:, 1].max()] for c in self.cells]
        )
        n = len(self.cells)
        for i in range(n):
            for j in range(i + 1, n):
                if boxes[i, 0] >= boxes[j, 2] or boxes[j, 0] >= boxes[i, 2]:
                    continue
                if boxes[i, 1] >= boxes[j, 3] or boxes[j, 1] >= boxes[i, 3]:
                    continue
                ai, aj = area(self.cells[i]), area(self.cells[j])
                if intersection_area(self.cells[i].verts, self.cells[j].verts) > tol * min(ai, aj):
                    return False
        return True


def uniform_square_partition(level: int) -> Partition:
    """2^level x 2^level grid of lattice squares P_{0,0,m} at base scale level."""
    s = 2.0**-level
    cells = []
    for iy in range(2**level):
        for ix in range(2**level):
            idx = ShearIndex(0, 0, (ix * s, iy * s), level)
            cells.append(make_parallelogram(idx))
    return Partition(cells)


def mesh_records(partition: Partition) -> list[dict]:
    """One JSON-ready record per cell: {id, kind, level, vertices}."""
    return [
        {
            "id": i,
            "kind": c.kind,
            "level": c.parity_level,
            "vertices": [[float(x), float(y)] for x, y in c.verts],
        }
        for i, c in enumerate(partition.cells)
    ]
