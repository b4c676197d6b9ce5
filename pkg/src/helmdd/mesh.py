"""Structured conforming P1 triangulation of the unit square.

The domain is fixed to [0,1]^2 and meshed by an n-by-n grid of square cells,
each split into two triangles along the lower-left to upper-right diagonal.
Homogeneous Dirichlet conditions are imposed by eliminating boundary
vertices: only interior vertices carry degrees of freedom.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class Mesh:
    """Triangulation data.

    Attributes
    ----------
    n_per_side : int
        Number of grid cells per side.
    vertices : (nv, 2) float array
        Vertex coordinates, ordered row-major (y outer, x inner).
    triangles : (nt, 3) int array
        Vertex indices per triangle, counterclockwise.  Cell ``(cx, cy)``
        owns triangles ``2*(cy*n + cx)`` (lower) and ``2*(cy*n + cx) + 1``
        (upper).
    h : float
        Maximum element diameter (longest edge over all triangles).
    boundary_vertex_flags : (nv,) bool array
        True for vertices on the boundary of the unit square.
    incidence : (nt, nv) sparse 0/1 matrix
        Triangle-vertex incidence; row t has ones at the vertices of t.
    """

    n_per_side: int
    vertices: np.ndarray
    triangles: np.ndarray
    h: float
    boundary_vertex_flags: np.ndarray
    incidence: sparse.csr_matrix

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def vertex_degree(self):
        """Number of triangles incident to each vertex."""
        return np.asarray(self.incidence.sum(axis=0)).ravel().astype(int)


@dataclass(frozen=True)
class FeSpace:
    """P1 space with Dirichlet elimination: dofs are the interior vertices,
    enumerated in lexicographic (row-major) vertex order."""

    n_dofs: int
    dof_of_vertex: np.ndarray  # (nv,) int, -1 on boundary vertices
    vertex_of_dof: np.ndarray  # (n_dofs,) int


def build_unit_square_mesh(n_per_side):
    """Triangulate [0,1]^2 with ``2*n_per_side**2`` right triangles.

    Raises
    ------
    ValueError
        If ``n_per_side < 2`` (no interior vertex would exist).
    """
    n = int(n_per_side)
    if n < 2:
        raise ValueError("n_per_side must be >= 2, got %r" % (n_per_side,))

    side = np.arange(n + 1, dtype=float) / n
    xs, ys = np.meshgrid(side, side)  # row-major: y varies with the row
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    cx, cy = np.meshgrid(np.arange(n), np.arange(n))
    cx = cx.ravel()
    cy = cy.ravel()
    v00 = cy * (n + 1) + cx
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    p = vertices[triangles]
    edge = np.stack(
        [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1
    )
    h = float(np.sqrt((edge**2).sum(axis=2)).max())

    ix = np.tile(np.arange(n + 1), n + 1)
    iy = np.repeat(np.arange(n + 1), n + 1)
    boundary = (ix == 0) | (ix == n) | (iy == 0) | (iy == n)

    nt = triangles.shape[0]
    rows = np.repeat(np.arange(nt), 3)
    incidence = sparse.csr_matrix(
        (np.ones(3 * nt), (rows, triangles.ravel())),
        shape=(nt, vertices.shape[0]),
    )

    return Mesh(
        n_per_side=n,
        vertices=vertices,
        triangles=triangles,
        h=h,
        boundary_vertex_flags=boundary,
        incidence=incidence,
    )


def build_fe_space(mesh):
    """Enumerate interior vertices as dofs (lexicographic order)."""
    interior = ~mesh.boundary_vertex_flags
    vertex_of_dof = np.flatnonzero(interior)
    dof_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
    dof_of_vertex[vertex_of_dof] = np.arange(vertex_of_dof.size)
    return FeSpace(
        n_dofs=int(vertex_of_dof.size),
        dof_of_vertex=dof_of_vertex,
        vertex_of_dof=vertex_of_dof,
    )


def triangle_areas(mesh):
    """Signed areas of all triangles (positive for this construction)."""
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
