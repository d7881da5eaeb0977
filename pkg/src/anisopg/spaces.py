"""Discrete trial and test spaces.

Trial: discontinuous per-cell affine functions with an L2-orthonormal basis
(3 dofs per cell).  Test: globally continuous piecewise quadratics on the
companion triangulation of the once-iso-refined partition, with all dofs on
the outflow boundary constrained to zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .companion import CompanionMesh, companion_triangulation, refine_cells_once
from .geometry import Cell, Partition, polygon_centroid
from .quadrature import poly_quad


def local_onb(cell: Cell) -> tuple[np.ndarray, np.ndarray]:
    """L2-orthonormal affine basis on a cell.

    Returns (centroid, C) where row i of C holds the coefficients of basis
    function i over the monomials [1, x1-c1, x2-c2].  Gram-Schmidt is run on
    scaled monomials so thin cells stay well conditioned.
    """
    c = polygon_centroid(cell.verts)
    pts, w = poly_quad(cell.verts, 2)
    d = pts - c
    sx = max(float(np.abs(d[:, 0]).max()), 1e-300)
    sy = max(float(np.abs(d[:, 1]).max()), 1e-300)
    basis = np.column_stack([np.ones(len(pts)), d[:, 0] / sx, d[:, 1] / sy])
    gram = basis.T @ (basis * w[:, None])
    L = np.linalg.cholesky(gram)
    coeff = np.linalg.solve(L, np.diag([1.0, 1.0 / sx, 1.0 / sy]))
    return c, coeff


@dataclass
class TrialSpace:
    """Discontinuous P1 on a partition; dofs are per-cell ONB coefficients."""

    partition: Partition
    centroids: np.ndarray = field(init=False)
    coeffs: np.ndarray = field(init=False)  # (ncells, 3, 3)

    def __post_init__(self):
        cents, mats = [], []
        for cell in self.partition.cells:
            c, m = local_onb(cell)
            cents.append(c)
            mats.append(m)
        self.centroids = np.array(cents)
        self.coeffs = np.array(mats)

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.partition.cells)

    def eval_cell(self, u: np.ndarray, cell_id: int, pts: np.ndarray) -> np.ndarray:
        """Evaluate the trial function on points inside one cell."""
        d = np.atleast_2d(pts) - self.centroids[cell_id]
        mono = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1]])
        local = u[3 * cell_id : 3 * cell_id + 3]
        return mono @ (self.coeffs[cell_id].T @ local)

    def monomial_coefficients(self, u: np.ndarray, cell_id: int) -> np.ndarray:
        """[a0, a1, a2] with u|_cell = a0 + a1 (x1-c1) + a2 (x2-c2)."""
        return self.coeffs[cell_id].T @ u[3 * cell_id : 3 * cell_id + 3]


# P2 Lagrange on triangles: dofs at vertices then edge midpoints.


def p2_shape_values(lam: np.ndarray) -> np.ndarray:
    """(npts, 6) P2 shape functions at barycentric coordinates lam (npts,3).

    Ordering: vertex 0,1,2 then edges (0,1), (1,2), (2,0).
    """
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ]
    )


def p2_shape_gradients(lam: np.ndarray, grad_lam: np.ndarray) -> np.ndarray:
    """(npts, 6, 2) gradients; grad_lam is the constant (3,2) barycentric grad."""
    l = lam
    g = grad_lam
    npts = len(l)
    out = np.empty((npts, 6, 2))
    for i in range(3):
        out[:, i, :] = (4 * l[:, i, None] - 1) * g[i]
    pairs = ((0, 1), (1, 2), (2, 0))
    for e, (i, j) in enumerate(pairs):
        out[:, 3 + e, :] = 4 * (l[:, i, None] * g[j] + l[:, j, None] * g[i])
    return out


def barycentric_gradients(tri: np.ndarray) -> np.ndarray:
    """(3,2) gradients of the barycentric coordinates of a triangle."""
    mat = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    inv = np.linalg.inv(mat)
    g12 = inv  # rows: grad lam1, grad lam2
    g0 = -g12.sum(axis=0)
    return np.vstack([g0, g12])


@dataclass
class TestSpace:
    """Continuous P2 on the companion mesh with outflow dofs zeroed."""

    mesh: CompanionMesh
    free: np.ndarray  # free dof ids
    constrained_mask: np.ndarray
    dof_points: np.ndarray
    _free_index: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.constrained_mask)
        self._free_index = -np.ones(n, dtype=np.int64)
        self._free_index[self.free] = np.arange(len(self.free))

    @property
    def n_dofs(self) -> int:
        return len(self.free)

    @property
    def n_dofs_total(self) -> int:
        return len(self.constrained_mask)

    def tri_dofs(self, t: int) -> np.ndarray:
        tri = self.mesh.triangles[t]
        edge = self.mesh.tri_edges[t]
        return np.concatenate([tri, self.mesh.n_points + edge])

    def all_tri_dofs(self) -> np.ndarray:
        return np.hstack([self.mesh.triangles, self.mesh.n_points + self.mesh.tri_edges])

    def free_of(self, dofs: np.ndarray) -> np.ndarray:
        return self._free_index[dofs]

    def expand(self, coeffs_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_dofs_total)
        full[self.free] = coeffs_free
        return full

    def eval_on_tri(self, full_coeffs: np.ndarray, t: int, pts: np.ndarray) -> np.ndarray:
        tri = self.mesh.points[self.mesh.triangles[t]]
        lam = _barycentric(tri, np.atleast_2d(pts))
        vals = p2_shape_values(lam)
        return vals @ full_coeffs[self.tri_dofs(t)]


def _barycentric(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    mat = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    sol = np.linalg.solve(mat, (pts - tri[0]).T).T
    lam0 = 1.0 - sol.sum(axis=1)
    return np.column_stack([lam0, sol])


def build_test_space(partition: Partition, problem) -> TestSpace:
    """ExpandStable: P2 on the companion mesh of the once-refined partition,
    constrained to vanish on the outflow boundary of the problem."""
    refined, parents = refine_cells_once(partition)
    mesh = companion_triangulation(partition, refined, parents)
    return test_space_from_mesh(mesh, problem)


def test_space_from_mesh(mesh: CompanionMesh, problem) -> TestSpace:
    nv, ne = mesh.n_points, mesh.n_edges
    dof_points = np.vstack([mesh.points, 0.5 * (mesh.points[mesh.edges[:, 0]] + mesh.points[mesh.edges[:, 1]])])
    constrained = np.zeros(nv + ne, dtype=bool)
    normals = boundary_normals(mesh)
    ts = np.array([0.112701665379258, 0.5, 0.887298334620742])
    for be in mesh.boundary_edges:
        i, j = mesh.edges[be]
        a, b = mesh.points[i], mesh.points[j]
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        bn = np.asarray(problem.b(pts)) @ normals[be]
        if (bn > 1e-12).any():
            # a P2 trace vanishes on the edge iff all three edge dofs vanish
            constrained[[i, j, nv + be]] = True
    free = np.nonzero(~constrained)[0]
    return TestSpace(mesh=mesh, free=free, constrained_mask=constrained, dof_points=dof_points)


def boundary_normals(mesh: CompanionMesh) -> dict[int, np.ndarray]:
    """Outward unit normal per boundary edge id."""
    edge_tri = -np.ones(mesh.n_edges, dtype=np.int64)
    for t in range(len(mesh.triangles)):
        edge_tri[mesh.tri_edges[t]] = t
    out: dict[int, np.ndarray] = {}
    for be in mesh.boundary_edges:
        t = int(edge_tri[be])
        tri = mesh.triangles[t]
        i, j = mesh.edges[be]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if {int(a), int(b)} == {int(i), int(j)}:
                d = mesh.points[b] - mesh.points[a]
                n = np.array([d[1], -d[0]])
                out[int(be)] = n / np.hypot(*n)
                break
    return out
