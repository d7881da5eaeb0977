"""Conforming companion triangulation of a (possibly non-nested) partition.

Merging breaks nestedness, so neighbouring cells can share only parts of
their edges.  The companion mesh restores a single conforming triangle mesh
by inserting every vertex that lies on a foreign edge (T-junctions) and
triangulating each augmented cell.  Every cell edge of the trial partition
and of its once-refined test partition appears as a union of mesh edges,
which gives exact integration and global continuity in one mechanism.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Cell, Partition, GeometryError, polygon_area, polygon_centroid


@dataclass
class CompanionMesh:
    points: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3) CCW vertex ids
    owner: np.ndarray  # (nt,) trial-cell id per triangle
    edges: np.ndarray  # (ne, 2) unique undirected edges, sorted ids
    tri_edges: np.ndarray  # (nt, 3) edge id opposite ordering (01,12,20)
    boundary_edges: np.ndarray  # ids of edges on exactly one triangle
    edge_tri_count: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def is_conforming(self) -> bool:
        return bool((self.edge_tri_count <= 2).all())


def _snap_key(p, decimals=11):
    return (round(float(p[0]), decimals), round(float(p[1]), decimals))


def refine_cells_once(partition: Partition) -> tuple[list[Cell], list[int]]:
    """Once-iso-refined cells of the partition with their parent ids."""
    from .geometry import refine_any_iso

    refined: list[Cell] = []
    parent: list[int] = []
    for i, cell in enumerate(partition.cells):
        kids = refine_any_iso(cell)
        refined.extend(kids)
        parent.extend([i] * len(kids))
    return refined, parent


def companion_triangulation(partition: Partition, refined: list[Cell] | None = None,
                            parents: list[int] | None = None) -> CompanionMesh:
    """Conforming triangulation resolving the partition and its refinement.

    When `refined` is omitted, the once-iso-refined partition is built here.
    Triangle ownership refers to the cells of `partition`.
    """
    if refined is None:
        refined, parents = refine_cells_once(partition)
    if not Partition(refined, partition.domain).check_area(1e-9):
        raise GeometryError("refined cells do not cover the domain")

    # global vertex registry
    key_to_id: dict[tuple, int] = {}
    pts: list[np.ndarray] = []

    def vid(p) -> int:
        k = _snap_key(p)
        i = key_to_id.get(k)
        if i is None:
            i = len(pts)
            key_to_id[k] = i
            pts.append(np.array([float(p[0]), float(p[1])]))
        return i

    cell_vids = [[vid(v) for v in c.verts] for c in refined]
    # corner registry is complete now; centroids appended later are interior
    # and never sit on another cell's edge
    points = np.array(pts)

    # bucket vertices on a fine grid for T-junction lookup
    grid: dict[tuple, list[int]] = {}
    scale = 1024.0
    for i, p in enumerate(points):
        gx, gy = int(np.floor(p[0] * scale)), int(np.floor(p[1] * scale))
        grid.setdefault((gx, gy), []).append(i)

    def candidates_on_segment(a, b):
        x0, x1 = sorted((a[0], b[0]))
        y0, y1 = sorted((a[1], b[1]))
        pad = 1e-9
        out = []
        for gx in range(int(np.floor((x0 - pad) * scale)), int(np.floor((x1 + pad) * scale)) + 1):
            for gy in range(int(np.floor((y0 - pad) * scale)), int(np.floor((y1 + pad) * scale)) + 1):
                out.extend(grid.get((gx, gy), ()))
        return out

    tol = 1e-11
    tris: list[tuple[int, int, int]] = []
    owner: list[int] = []
    for ci, cell in enumerate(refined):
        ids = cell_vids[ci]
        n = len(ids)
        boundary: list[int] = []
        inserted = False
        for e in range(n):
            ia, ib = ids[e], ids[(e + 1) % n]
            a, b = points[ia], points[ib]
            boundary.append(ia)
            ab = b - a
            ab2 = float(ab @ ab)
            on_edge = []
            for cand in candidates_on_segment(a, b):
                if cand == ia or cand == ib:
                    continue
                p = points[cand]
                t = float((p - a) @ ab) / ab2
                if t <= tol or t >= 1 - tol:
                    continue
                d = p - (a + t * ab)
                if float(d @ d) <= (tol * tol) * max(ab2, 1.0):
                    on_edge.append((t, cand))
            if on_edge:
                inserted = True
                for _, cand in sorted(on_edge):
                    boundary.append(cand)
        own = parents[ci]
        if not inserted and n == 3:
            tris.append(tuple(boundary))
            owner.append(own)
        elif not inserted and n == 4:
            # shortest-diagonal split keeps the mesh lean
            d02 = float(np.sum((points[boundary[0]] - points[boundary[2]]) ** 2))
            d13 = float(np.sum((points[boundary[1]] - points[boundary[3]]) ** 2))
            if d02 <= d13:
                tris += [(boundary[0], boundary[1], boundary[2]), (boundary[0], boundary[2], boundary[3])]
            else:
                tris += [(boundary[1], boundary[2], boundary[3]), (boundary[1], boundary[3], boundary[0])]
            owner += [own, own]
        else:
            c = polygon_centroid(cell.verts)
            ic = vid(c)
            m = len(boundary)
            for e in range(m):
                tris.append((ic, boundary[e], boundary[(e + 1) % m]))
                owner.append(own)

    points = np.array(pts)
    triangles = np.array(tris, dtype=np.int64)
    owner_arr = np.array(owner, dtype=np.int64)

    # orient CCW
    p0 = points[triangles[:, 0]]
    p1 = points[triangles[:, 1]]
    p2 = points[triangles[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    flip = cross < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    # unique edges
    raw = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(raw_sorted, axis=0, return_inverse=True, return_counts=True)
    tri_edges = inverse.reshape(3, -1).T
    boundary_edges = np.nonzero(counts == 1)[0]
    return CompanionMesh(
        points=points,
        triangles=triangles,
        owner=owner_arr,
        edges=edges,
        tri_edges=tri_edges,
        boundary_edges=boundary_edges,
        edge_tri_count=counts,
    )
