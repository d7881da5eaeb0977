"""Cartoon-type benchmark functions and the two oracle partition builders.

A cartoon is f1 on {x1 <= E(x2)} and f2 elsewhere, with bounded slope and
curvature of the horizon E and C^2 pieces f1, f2.  Both builders consume full
knowledge of the horizon: the shear builder alternates anisotropic and
isotropic refinements with merging, the bisection builder uses only the three
vertex/midpoint split rules and produces nested hierarchies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Cell,
    GeometryError,
    PARALLELOGRAM,
    POLYGON,
    Partition,
    ShearIndex,
    TRIANGLE,
    area,
    diameter,
    make_cell,
    make_parallelogram,
    merge_pairs,
    point_in_polygon,
    polygon_area,
    refine_aniso,
    refine_any_iso,
    split_r1,
    split_r2,
    split_r3,
)
from .quadrature import GraphJump, poly_quad, split_polygon_by_graph


@dataclass
class HorizonCurve:
    """Horizon x1 = E(x2) with analytic first and second derivatives.

    Derivatives are required analytically so the orientation rule and the
    admissibility checks are exact; all three callables must accept arrays.
    """

    e: callable
    de: callable
    d2e: callable

    def bounds(self, n: int = 2049) -> tuple[float, float]:
        t = np.linspace(0.0, 1.0, n)
        return float(np.abs(self.de(t)).max()), float(np.abs(self.d2e(t)).max())


@dataclass
class Cartoon:
    """Piecewise-C^2 function f1*chi_{x1<=E(x2)} + f2*chi_else on (0,1)^2."""

    horizon: HorizonCurve | None
    f1: callable
    f2: callable
    kappa: float = 1.0
    curve_len: float = 2.0
    bound: float = 1.0
    sep_width: float = 0.25
    side_fn: callable | None = None  # alternative to a horizon: sign function

    def __post_init__(self):
        if self.horizon is None and self.side_fn is None:
            raise ValueError("either a horizon or a side function is required")
        if self.horizon is not None:
            sup_de, sup_d2e = self.horizon.bounds()
            if sup_de > 2.0 + 1e-12:
                raise ValueError(f"|E'| must be <= 2, sampled sup {sup_de}")
            if sup_d2e > self.kappa + 1e-12:
                raise ValueError(f"|E''| must be <= kappa={self.kappa}, sampled sup {sup_d2e}")

    def side(self, pts: np.ndarray) -> np.ndarray:
        """-1 on the f1 region {x1 <= E(x2)}, +1 on the f2 region."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.side_fn is not None:
            return np.asarray(self.side_fn(pts))
        return np.where(pts[:, 0] <= self.horizon.e(pts[:, 1]), -1.0, 1.0)

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.where(self.side(pts) < 0, self.f1(pts), self.f2(pts))

    def eval(self, p) -> float:
        return float(self.eval_many(np.asarray(p, dtype=float)[None, :])[0])

    def jump_graph(self, n_nodes: int = 2**14 + 1) -> GraphJump | None:
        if self.horizon is None:
            return None
        return GraphJump.from_function(self.horizon.e, n=n_nodes)


def reference_cartoon() -> Cartoon:
    """The benchmark cartoon: E = x2^2/2, f1 = 1, f2 = 1/2."""
    return Cartoon(
        horizon=HorizonCurve(
            e=lambda t: 0.5 * np.asarray(t) ** 2,
            de=lambda t: np.asarray(t, dtype=float),
            d2e=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        ),
        f1=lambda p: np.ones(len(np.atleast_2d(p))),
        f2=lambda p: np.full(len(np.atleast_2d(p)), 0.5),
        kappa=1.0,
        curve_len=1.2,
        bound=1.0,
        sep_width=0.5,
    )


# ---------------------------------------------------------------------------
# sampled curve geometry


class GammaSampler:
    """Polyline surrogate for the horizon, sampled at uniform ordinates.

    Substantial intersection |Q ∩ Γ| > 0 is decided by exact clipped-length
    computations on the sampled polyline (Liang-Barsky per segment).
    """

    def __init__(self, horizon: HorizonCurve, n_params: int):
        self.ys = np.linspace(0.0, 1.0, n_params + 1)
        self.xs = np.asarray(horizon.e(self.ys), dtype=float)
        self.p0 = np.column_stack([self.xs[:-1], self.ys[:-1]])
        self.d = np.column_stack([np.diff(self.xs), np.diff(self.ys)])
        self.seg_len = np.sqrt((self.d**2).sum(1))

    def _window(self, y0: float, y1: float) -> tuple[int, int]:
        i0 = int(np.searchsorted(self.ys, y0, side="left"))
        i1 = int(np.searchsorted(self.ys, y1, side="right"))
        return max(i0 - 1, 0), min(i1, len(self.d))

    def _clip_params(self, verts: np.ndarray, i0: int, i1: int):
        """Per-segment [t_in, t_out] of the polyline inside a convex polygon."""
        p0 = self.p0[i0:i1]
        d = self.d[i0:i1]
        lo = np.zeros(len(p0))
        hi = np.ones(len(p0))
        n = len(verts)
        for e in range(n):
            a = verts[e]
            ev = verts[(e + 1) % n] - a
            # inside means cross(ev, p - a) >= 0
            num = ev[0] * (p0[:, 1] - a[1]) - ev[1] * (p0[:, 0] - a[0])
            den = ev[0] * d[:, 1] - ev[1] * d[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -num / den
            entering = den > 0
            exiting = den < 0
            lo = np.where(entering, np.maximum(lo, t), lo)
            hi = np.where(exiting, np.minimum(hi, t), hi)
            parallel_out = (den == 0) & (num < 0)
            hi = np.where(parallel_out, -1.0, hi)
        return lo, hi

    def length_in(self, verts: np.ndarray) -> float:
        y = verts[:, 1]
        i0, i1 = self._window(float(y.min()), float(y.max()))
        if i0 >= i1:
            return 0.0
        lo, hi = self._clip_params(verts, i0, i1)
        return float(np.sum(np.maximum(hi - lo, 0.0) * self.seg_len[i0:i1]))

    def substantial(self, verts: np.ndarray, tol: float = 1e-12) -> bool:
        return self.length_in(verts) > tol

    def chord(self, verts: np.ndarray):
        """First and last point of the polyline inside the polygon, or None."""
        y = verts[:, 1]
        i0, i1 = self._window(float(y.min()), float(y.max()))
        if i0 >= i1:
            return None
        lo, hi = self._clip_params(verts, i0, i1)
        ok = np.nonzero(hi - lo > 1e-14)[0]
        if len(ok) == 0:
            return None
        first, last = ok[0], ok[-1]
        p = self.p0[i0 + first] + lo[first] * self.d[i0 + first]
        q = self.p0[i0 + last] + hi[last] * self.d[i0 + last]
        return p, q

    def vertical_boundary_points(self) -> list[np.ndarray]:
        """Intersections of the curve with the lines x1 = 0 and x1 = 1."""
        pts = []
        for edge in (0.0, 1.0):
            v = self.xs - edge
            hit = np.abs(v) <= 1e-14
            for i in np.nonzero(hit)[0]:
                pts.append(np.array([edge, self.ys[i]]))
            cross = np.nonzero(v[:-1] * v[1:] < 0)[0]
            for i in cross:
                t = v[i] / (v[i] - v[i + 1])
                pts.append(np.array([edge, self.ys[i] + t * (self.ys[i + 1] - self.ys[i])]))
        # deduplicate
        out = []
        for p in pts:
            if all(np.abs(p - q).max() > 1e-12 for q in out):
                out.append(p)
        return out


# ---------------------------------------------------------------------------
# shear-lattice oracle builder


def orientation(horizon: HorizonCurve, j: int, k: int, m2: float) -> int:
    """Direction in {-1,0,+1} whose target slope (2k+i)/2^ceil(j/2) is closest
    to E'(m2); ties resolve to 0, then +1."""
    slope = float(horizon.de(np.clip(m2, 0.0, 1.0)))
    denom = 2.0 ** -((j + 1) // 2)
    best, best_val = 0, abs(slope - (2 * k) * denom)
    for cand in (1, -1):
        val = abs(slope - (2 * k + cand) * denom)
        if val < best_val - 1e-15:
            best, best_val = cand, val
    return best


def iso_depth(j: int, J: int, jr: int) -> int:
    """max(ceil(J/2 - 3j/4 - jr), 0): isotropic finishing depth at level j."""
    num = 2 * J - 3 * j - 4 * jr
    return max(-((-num) // 4), 0)


def _iso_pow_any(cell: Cell, depth: int) -> list[Cell]:
    cells = [cell]
    for _ in range(depth):
        nxt = []
        for c in cells:
            nxt.extend(refine_any_iso(c))
        cells = nxt
    return cells


# Chain cells are pieces of lattice tiles (full parallelograms or clipped
# fragments carrying the tile's index with from_aniso=True).  Refining a
# piece clips the child tiles against it, so the parabolic scaling survives
# even where curve cells are not full parallelograms (chain ends, trimming).


def _tile_key(idx: ShearIndex):
    return (idx.j, idx.k, round(idx.m[0], 14), round(idx.m[1], 14), idx.j0)


def _refine_chain_aniso(cell: Cell, direction: int) -> list[Cell]:
    """Clip the level-(j+1) tiles of shear 2k+direction against the cell."""
    idx = cell.index
    j1 = idx.j + 1
    k1 = 2 * idx.k + direction
    w1 = 2.0 ** (-idx.j0 - j1)
    slope = k1 * 2.0 ** -((j1 + 1) // 2)
    m2 = idx.m[1]
    sheared_x = cell.verts[:, 0] - slope * (cell.verts[:, 1] - m2)
    n0 = int(math.floor(float(sheared_x.min()) / w1 + 1e-9))
    n1 = int(math.floor(float(sheared_x.max()) / w1 - 1e-9))
    children: list[Cell] = []
    covered = 0.0
    lvl = cell.parity_level + 1
    from .geometry import clip_convex, classify_kind, normalize_polygon

    for n in range(n0, n1 + 1):
        tidx = ShearIndex(j1, k1, (n * w1, m2), idx.j0)
        tile = make_parallelogram(tidx)
        poly = clip_convex(tile.verts, cell.verts)
        if poly is None:
            continue
        a = polygon_area(poly)
        if a < 1e-30:
            continue
        covered += a
        full = abs(a - area(tile)) <= 1e-9 * area(tile)
        v = normalize_polygon(poly)
        children.append(Cell(v, classify_kind(v), tidx, lvl, from_aniso=not full))
    total = area(cell)
    if abs(covered - total) > 1e-9 * total:
        raise GeometryError("anisotropic tile children do not cover the cell")
    return children


def _refine_chain_iso(cell: Cell) -> list[Cell]:
    """Isotropic refinement of a tile piece: the four subtiles clipped."""
    idx = cell.index
    tile = make_parallelogram(idx)
    if not cell.from_aniso and cell.kind == PARALLELOGRAM:
        return refine_iso(cell)
    from .geometry import clip_convex, classify_kind, normalize_polygon

    lvl = cell.parity_level + 1
    out = []
    covered = 0.0
    for sub in refine_iso(tile):
        poly = clip_convex(sub.verts, cell.verts)
        if poly is None:
            continue
        a = polygon_area(poly)
        if a < 1e-30:
            continue
        covered += a
        if sub.index is None:
            out.append(make_cell(poly, parity_level=lvl))
            continue
        full = abs(a - area(sub)) <= 1e-9 * area(sub)
        v = normalize_polygon(poly)
        out.append(Cell(v, classify_kind(v), sub.index, lvl, from_aniso=not full))
    total = area(cell)
    if abs(covered - total) > 1e-9 * total:
        raise GeometryError("isotropic tile children do not cover the cell")
    return out


def _merge_tiles(cells: list[Cell]) -> list[Cell]:
    """Replace groups of tile pieces whose areas fill the tile by the tile."""
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(cells):
        if c.from_aniso and c.index is not None:
            groups.setdefault(_tile_key(c.index), []).append(i)
    replace: dict[int, Cell] = {}
    drop: set[int] = set()
    for key, members in groups.items():
        if len(members) < 2:
            continue
        idx = cells[members[0]].index
        tile = make_parallelogram(idx)
        total = sum(area(cells[i]) for i in members)
        if abs(total - area(tile)) <= 1e-9 * area(tile):
            lvl = max(cells[i].parity_level for i in members)
            replace[members[0]] = Cell(tile.verts, PARALLELOGRAM, idx, lvl)
            drop.update(members[1:])
    out = []
    for i, c in enumerate(cells):
        if i in drop:
            continue
        out.append(replace.get(i, c))
    return out


def _initial_split(cell: Cell, direction: int) -> list[Cell]:
    """Orientation-directed diagonal split of a base square.

    The two triangles are the clipped halves of the level-0 shear-1 lattice
    cells, so facing halves across square boundaries merge to parallelograms.
    """
    idx = cell.index
    s = 2.0**-idx.j0
    m0, m1 = idx.m
    lvl = cell.parity_level
    if direction == 1:
        tri_a = make_cell([[m0, m1], [m0 + s, m1 + s], [m0, m1 + s]], parity_level=lvl)
        idx_a = ShearIndex(0, 1, (m0 - s, m1), idx.j0)
        tri_b = make_cell([[m0, m1], [m0 + s, m1], [m0 + s, m1 + s]], parity_level=lvl)
        idx_b = ShearIndex(0, 1, (m0, m1), idx.j0)
    else:
        tri_a = make_cell([[m0, m1], [m0 + s, m1], [m0, m1 + s]], parity_level=lvl)
        idx_a = ShearIndex(0, -1, (m0, m1), idx.j0)
        tri_b = make_cell([[m0 + s, m1], [m0 + s, m1 + s], [m0, m1 + s]], parity_level=lvl)
        idx_b = ShearIndex(0, -1, (m0 + s, m1), idx.j0)
    return [
        Cell(tri_a.verts, TRIANGLE, idx_a, lvl, from_aniso=True),
        Cell(tri_b.verts, TRIANGLE, idx_b, lvl, from_aniso=True),
    ]


def _adapted_region(horizon, sampler, base_cells, jr, J, an_levels=None):
    """Alternating anisotropic/isotropic refinement of the curve cells of a
    region tiled by lattice squares at base scale jr; returns (cells, chain)
    where chain is the final-level curve collection."""
    jmax = 2 * J - jr
    out: list[Cell] = []
    gamma0, smooth0 = [], []
    for c in base_cells:
        (gamma0 if sampler.substantial(c.verts) else smooth0).append(c)
    r0 = []
    for c in gamma0:
        d = orientation(horizon, 0, 0, c.index.m[1])
        if d == 0:
            r0.append(c)
        else:
            r0.extend(_initial_split(c, d))
    r0 = merge_pairs(r0)
    chain = [c for c in r0 if sampler.substantial(c.verts)]
    depth0 = iso_depth(0, J, jr)
    for c in smooth0 + [c for c in r0 if not sampler.substantial(c.verts)]:
        out.extend(_iso_pow_any(c, depth0))
    if an_levels is not None:
        an_levels[0] = list(chain)
    for j in range(1, jmax + 1):
        if not chain:
            break
        children: list[Cell] = []
        for q in chain:
            if (
                j % 2 == 1
                and q.kind == PARALLELOGRAM
                and q.index is not None
                and q.index.j % 2 == 0
            ):
                d = orientation(horizon, j, q.index.k, q.index.m[1])
                children.extend(refine_aniso(q, d))
            else:
                children.extend(refine_any_iso(q))
        if j % 2 == 1:
            children = merge_pairs(children)
        chain = []
        depth = iso_depth(j, J, jr)
        for c in children:
            if sampler.substantial(c.verts):
                chain.append(c)
            else:
                out.extend(_iso_pow_any(c, depth))
        if an_levels is not None:
            an_levels[j] = list(chain)
    out.extend(chain)
    return out, chain


def _dyadic_square(g: np.ndarray, scale: int) -> Cell:
    """Closed dyadic square of side 2^-scale containing g, clamped into D."""
    s = 2.0**-scale
    n = 2**scale
    ix = min(max(int(math.floor(g[0] / s)), 0), n - 1)
    iy = min(max(int(math.floor(g[1] / s)), 0), n - 1)
    return make_parallelogram(ShearIndex(0, 0, (ix * s, iy * s), scale))


@dataclass
class OracleBuild:
    """Result of the shear-lattice construction for one cartoon and scale J."""

    J: int
    j0: int
    partition: Partition
    an_levels: dict[int, list[Cell]] = field(default_factory=dict)
    gamma_cover: list[Cell] = field(default_factory=list)
    boundary_squares: list[Cell] = field(default_factory=list)


def admissible_base_scale(cartoon: Cartoon, J: int, n_params: int | None = None) -> int:
    """Smallest base scale with kappa-admissibility (4*kappa <= 2^j0, which is
    what the slope-tracking induction needs) and the two-intersection property
    on every base square."""
    sampler = GammaSampler(cartoon.horizon, n_params or 2 ** (J + 4))
    j0 = max(1, math.ceil(math.log2(max(4.0 * cartoon.kappa, 1.0))))
    for cand in range(j0, 9):
        if _two_intersections_ok(sampler, cand):
            return cand
    raise ValueError("no admissible base scale up to 8; curve oscillates too fast")


def _two_intersections_ok(sampler: GammaSampler, scale: int) -> bool:
    s = 2.0**-scale
    n = 2**scale
    xs, ys = sampler.xs, sampler.ys
    for iy in range(n):
        rows = (ys >= iy * s - 1e-15) & (ys <= (iy + 1) * s + 1e-15)
        if not rows.any():
            continue
        for ix in range(n):
            inside = rows & (xs >= ix * s) & (xs <= (ix + 1) * s)
            flips = int(np.count_nonzero(np.diff(inside.astype(int)) != 0))
            if flips > 2:
                return False
    return True


def build_oracle_partition(cartoon: Cartoon, J: int, j0: int | None = None) -> OracleBuild:
    """Shear-lattice oracle partition adapted to the cartoon at target scale J."""
    if cartoon.horizon is None:
        raise ValueError("the shear builder needs a horizon model")
    if j0 is None:
        j0 = admissible_base_scale(cartoon, J)
    if J <= j0:
        raise ValueError(f"target scale J={J} must exceed the base scale j0={j0}")
    horizon = cartoon.horizon
    sampler = GammaSampler(horizon, 2 ** (J + 4))

    boundary_pts = sampler.vertical_boundary_points()
    boundary_keys = set()
    boundary_squares = []
    for g in boundary_pts:
        sq = _dyadic_square(g, j0)
        key = (round(sq.index.m[0], 14), round(sq.index.m[1], 14))
        if key not in boundary_keys:
            boundary_keys.add(key)
            boundary_squares.append((sq, g))

    s = 2.0**-j0
    base = []
    for iy in range(2**j0):
        for ix in range(2**j0):
            key = (round(ix * s, 14), round(iy * s, 14))
            if key not in boundary_keys:
                base.append(make_parallelogram(ShearIndex(0, 0, (ix * s, iy * s), j0)))

    an_levels: dict[int, list[Cell]] = {}
    cells, final_chain = _adapted_region(horizon, sampler, base, j0, J, an_levels)
    cover = list(final_chain)

    for sq, g in boundary_squares:
        # geometric zoom toward the boundary intersection point
        for r in range(J - j0):
            outer = _dyadic_square(g, j0 + r)
            inner = _dyadic_square(g, j0 + r + 1)
            ring = []
            for child in refine_any_iso(outer):
                if abs(child.verts[:, 0].min() - inner.verts[:, 0].min()) < 1e-14 and abs(
                    child.verts[:, 1].min() - inner.verts[:, 1].min()
                ) < 1e-14:
                    continue
                m = (child.verts[:, 0].min(), child.verts[:, 1].min())
                ring.append(make_parallelogram(ShearIndex(0, 0, m, j0 + r + 1)))
            ring_cells, _ = _adapted_region(horizon, sampler, ring, j0 + r + 1, J)
            cells.extend(ring_cells)
            cover.extend(ring_cells)
        residual = _dyadic_square(g, J)
        cells.append(residual)
        cover.append(residual)

    part = Partition(cells)
    return OracleBuild(
        J=J,
        j0=j0,
        partition=part,
        an_levels=an_levels,
        gamma_cover=cover,
        boundary_squares=[sq for sq, _ in boundary_squares],
    )


# ---------------------------------------------------------------------------
# bisection oracle builder (rules R1-R3 only, nested across even J)


def _with_level(cell: Cell, lvl: int) -> Cell:
    return Cell(cell.verts, cell.kind, cell.index, lvl, cell.from_aniso)


def _edge_of_point(verts: np.ndarray, p: np.ndarray) -> int:
    """Index of the boundary edge containing p (closest segment)."""
    n = len(verts)
    best, best_d = 0, np.inf
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        d = float(np.hypot(*(a + t * ab - p)))
        if d < best_d - 1e-15:
            best, best_d = i, d
    return best


def _far_vertex(verts: np.ndarray, edge: int, p: np.ndarray) -> int:
    a, b = edge, (edge + 1) % len(verts)
    da = float(np.hypot(*(verts[a] - p)))
    db = float(np.hypot(*(verts[b] - p)))
    return a if da > db + 1e-15 else (b if db > da + 1e-15 else min(a, b))


def _pick_child(children: list[Cell], p, q) -> tuple[Cell, Cell]:
    mid = 0.5 * (np.asarray(p) + np.asarray(q))
    tol = 1e-9
    for i, c in enumerate(children):
        if (
            point_in_polygon(c.verts, mid, tol)
            and point_in_polygon(c.verts, p, tol)
            and point_in_polygon(c.verts, q, tol)
        ):
            return c, children[1 - i]
    raise GeometryError("no child contains the chord")


def _automaton_step(cell: Cell, p: np.ndarray, q: np.ndarray) -> tuple[Cell, Cell]:
    """One far-vertex-driven split; returns (chord cell, complement cell)."""
    verts = cell.verts
    n = len(verts)
    ep = _edge_of_point(verts, p)
    eq = _edge_of_point(verts, q)
    if ep == eq:
        raise GeometryError("chord endpoints on one edge")
    fp = _far_vertex(verts, ep, p)
    fq = _far_vertex(verts, eq, q)
    if n == 4:
        opposite = (eq - ep) % 4 == 2
        if opposite:
            if (fq - fp) % 4 in (1, 3):
                children = split_r3(cell, ep, eq)  # far vertices share an edge
            else:
                len_p = float(np.hypot(*(verts[(ep + 1) % 4] - verts[ep])))
                len_q = float(np.hypot(*(verts[(eq + 1) % 4] - verts[eq])))
                split_edge, other_edge, other_far = (
                    (ep, eq, fq) if len_p >= len_q else (eq, ep, fp)
                )
                # cut to the near end of the other split-edge, keeping the
                # chord inside the quadrilateral child
                near = other_edge if other_far != other_edge else (other_edge + 1) % 4
                children = split_r1(cell, near, split_edge)
        else:
            shared = {ep, (ep + 1) % 4} & {eq, (eq + 1) % 4}
            x = shared.pop()
            # diagonal between the two split-edge endpoints away from x
            a = (ep + 1) % 4 if ep == x else ep
            b = (eq + 1) % 4 if eq == x else eq
            children = split_r2(cell, min(a, b), max(a, b))
    elif n == 3:
        shared = {ep, (ep + 1) % 3} & {eq, (eq + 1) % 3}
        if not shared:
            raise GeometryError("triangle split edges must share a vertex")
        x = shared.pop()
        if (fp == x) == (fq == x):
            # both far vertices at x, or neither: halve both split-edges
            children = split_r3(cell, ep, eq)
        else:
            edge = ep if fp != x else eq
            apex = [v for v in range(3) if v not in (edge, (edge + 1) % 3)][0]
            children = split_r1(cell, apex, edge)
    else:
        raise GeometryError("automaton cells must be triangles or quadrilaterals")
    return _pick_child(children, p, q)


def _bisect_automaton(sampler: GammaSampler, cell: Cell, J: int) -> list[Cell]:
    """Anisotropic far-vertex bisection of one curve cell down to area 2^-3J."""
    target = 2.0 ** (-3 * J)
    chord = sampler.chord(cell.verts)
    if chord is None:
        return [cell]
    p, q = chord
    if np.hypot(*(q - p)) < 1e-14:
        return [cell]
    out = []
    lvl = cell.parity_level
    current = cell
    for _ in range(4 * J + 8):
        if area(current) <= target:
            break
        try:
            keep, rest = _automaton_step(current, p, q)
        except GeometryError:
            break
        out.append(_with_level(rest, lvl))
        current = _with_level(keep, lvl)
    out.append(current)
    return out


def _bisect_round(sampler: GammaSampler, cells: list[Cell], J: int) -> list[Cell]:
    half = J // 2
    work, staged = list(cells), []
    while work:
        c = work.pop()
        if c.parity_level < half:
            work.extend(refine_any_iso(c))
        else:
            staged.append(c)
    work, leafed = staged, []
    while work:
        c = work.pop()
        if c.parity_level < J and sampler.substantial(c.verts):
            work.extend(refine_any_iso(c))
        else:
            leafed.append(c)
    out = []
    for c in leafed:
        if sampler.substantial(c.verts):
            out.extend(_bisect_automaton(sampler, c, J))
        else:
            out.append(c)
    return out


def build_bisection_partition(cartoon: Cartoon, J: int) -> Partition:
    """Nested bisection oracle partition at even target scale J.

    Built incrementally through J = 2, 4, ..., so the partition for J+2
    refines the one for J cell by cell.
    """
    if J % 2 != 0 or J < 2:
        raise ValueError("the bisection construction expects even J >= 2")
    if cartoon.horizon is None:
        raise ValueError("the bisection builder needs a horizon model")
    sampler = GammaSampler(cartoon.horizon, 2 ** (J + 4))
    cells = [make_cell([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])]
    for target in range(2, J + 1, 2):
        cells = _bisect_round(sampler, cells, target)
    return Partition(cells)


# ---------------------------------------------------------------------------
# N-term approximation error


def nterm_error(cartoon: Cartoon, partition: Partition, degree: int = 5) -> float:
    """L2 distance from the cartoon to its best piecewise-affine approximation
    on the partition (per-cell best fits, jump-aware integration)."""
    jump = cartoon.jump_graph()
    total = 0.0
    for cell in partition.cells:
        total += _cell_sq_error(cartoon, jump, cell.verts, degree)
    return math.sqrt(max(total, 0.0))


def _one_sided_pieces(cartoon: Cartoon, jump: GraphJump, verts: np.ndarray):
    """[(piece, f)] covering the cell, each piece on one side of the curve."""
    y0, y1 = float(verts[:, 1].min()), float(verts[:, 1].max())
    probe = jump.y_nodes[(jump.y_nodes >= y0) & (jump.y_nodes <= y1)]
    gy = jump.x_of_y(np.concatenate((probe, [y0, 0.5 * (y0 + y1), y1])))
    sag = 0.125 * cartoon.kappa * (y1 - y0) ** 2
    if float(verts[:, 0].max()) <= float(gy.min()) - sag:
        return [(verts, cartoon.f1)]
    if float(verts[:, 0].min()) >= float(gy.max()) + sag:
        return [(verts, cartoon.f2)]
    left, right = split_polygon_by_graph(verts, jump)
    return [(p, cartoon.f1) for p in left] + [(p, cartoon.f2) for p in right]


def _cell_sq_error(cartoon: Cartoon, jump: GraphJump | None, verts: np.ndarray, degree: int) -> float:
    c = verts.mean(axis=0)

    def monomials(pts):
        d = pts - c
        return np.column_stack([np.ones(len(pts)), d[:, 0], d[:, 1]])

    # exact Gram of [1, dx, dy] on the cell
    pts, w = poly_quad(verts, 2)
    mb = monomials(pts)
    gram = mb.T @ (mb * w[:, None])

    if jump is not None:
        moments = np.zeros(3)
        sq = 0.0
        for piece, f in _one_sided_pieces(cartoon, jump, verts):
            pp, ww = poly_quad(piece, degree)
            fv = np.asarray(f(pp), dtype=float)
            moments += monomials(pp).T @ (fv * ww)
            sq += float(np.dot(fv * fv, ww))
    else:
        from .quadrature import integrate_flagged

        side = cartoon.side
        vals_fn = cartoon.eval_many
        moments = np.array(
            [
                integrate_flagged(lambda p, kk=k: vals_fn(p) * monomials(np.atleast_2d(p))[:, kk], side, verts, degree)
                for k in range(3)
            ]
        )
        sq = integrate_flagged(lambda p: vals_fn(p) ** 2, side, verts, degree)

    try:
        sol = np.linalg.solve(gram, moments)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(gram, moments, rcond=None)[0]
    return max(sq - float(moments @ sol), 0.0)
