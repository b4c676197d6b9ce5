"""Assembly of the Helmholtz FE matrices and load vectors.

Builds, over the interior dofs, the stiffness matrix A (diffusion form a),
the mass matrix S (L2 inner product), the indefinite system matrix
B = A - k^2 S, and the SPD weight matrix D_k = A + k^2 S that induces the
(.,.)_{1,k} inner product.  Element integrals are exact for P1: analytic
gradients for the stiffness, the closed-form P1 mass matrix, and a 3-point
edge-midpoint rule (exact for quadratics) for the load.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import triangle_areas

_MASS_REF = np.array(
    [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]
) / 12.0


@dataclass(frozen=True)
class CoefficientField:
    """Scalar diffusion coefficient, piecewise constant per triangle.

    The minimum value is normalized to 1 and the maximum equals ``contrast``.
    """

    kind: str
    contrast: float
    per_element_value: np.ndarray


def coefficient_field(mesh, kind="constant", contrast=1.0, blocks=4):
    """Build a coefficient field of the given kind.

    kind
        "constant"      : value 1 everywhere (contrast must be 1),
        "checkerboard"  : blocks-by-blocks checkerboard alternating 1/contrast,
        "channels"      : ``blocks`` horizontal bands alternating 1/contrast.
    """
    contrast = float(contrast)
    if contrast < 1.0:
        raise ValueError("contrast must be >= 1, got %g" % contrast)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    nb = int(blocks)
    if nb < 1:
        raise ValueError("blocks must be >= 1")
    bx = np.minimum((centroids[:, 0] * nb).astype(int), nb - 1)
    by = np.minimum((centroids[:, 1] * nb).astype(int), nb - 1)

    if kind == "constant":
        if contrast != 1.0:
            raise ValueError("constant coefficient requires contrast == 1")
        values = np.ones(mesh.n_triangles)
    elif kind == "checkerboard":
        values = np.where((bx + by) % 2 == 1, contrast, 1.0)
    elif kind == "channels":
        values = np.where(by % 2 == 1, contrast, 1.0)
    else:
        raise ValueError("unknown coefficient kind %r" % (kind,))
    return CoefficientField(kind=kind, contrast=contrast, per_element_value=values)


@dataclass(frozen=True)
class AssembledForms:
    """All global matrices for one (mesh, coefficient, k) triple.

    ``elem_stiffness`` and ``elem_mass`` keep the per-element 3x3 matrices
    (coefficient included in the stiffness) so that subdomain-local
    "Neumann" matrices can be subassembled without touching the mesh again;
    ``tri_dofs`` maps triangle vertices to dofs (-1 for boundary vertices).
    """

    k: float
    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    helmholtz: sparse.csr_matrix
    dk: sparse.csr_matrix
    elem_stiffness: np.ndarray
    elem_mass: np.ndarray
    tri_dofs: np.ndarray

    @property
    def n_dofs(self):
        return self.stiffness.shape[0]


def _element_matrices(mesh, coeff):
    p = mesh.vertices[mesh.triangles]
    x = p[:, :, 0]
    y = p[:, :, 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (
        y[:, 1] - y[:, 0]
    )
    area = 0.5 * det
    grads = np.empty((mesh.n_triangles, 3, 2))
    grads[:, 0, 0] = y[:, 1] - y[:, 2]
    grads[:, 0, 1] = x[:, 2] - x[:, 1]
    grads[:, 1, 0] = y[:, 2] - y[:, 0]
    grads[:, 1, 1] = x[:, 0] - x[:, 2]
    grads[:, 2, 0] = y[:, 0] - y[:, 1]
    grads[:, 2, 1] = x[:, 1] - x[:, 0]
    grads /= det[:, None, None]
    a_vals = coeff.per_element_value
    stiff = np.einsum("t,tad,tbd->tab", a_vals * area, grads, grads)
    mass = area[:, None, None] * _MASS_REF[None, :, :]
    return stiff, mass


def _scatter(elem_mats, tri_dofs, n_dofs):
    rows = np.repeat(tri_dofs, 3, axis=1).ravel()
    cols = np.tile(tri_dofs, (1, 3)).ravel()
    vals = elem_mats.ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sparse.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(n_dofs, n_dofs)
    )
    return mat.tocsr()


def assemble_forms(mesh, space, coeff, k):
    """Assemble A, S, B = A - k^2 S and D_k = A + k^2 S over interior dofs."""
    if k <= 0:
        raise ValueError("wavenumber k must be positive, got %g" % k)
    if coeff.per_element_value.shape[0] != mesh.n_triangles:
        raise ValueError("coefficient field does not cover every triangle")
    stiff, mass = _element_matrices(mesh, coeff)
    tri_dofs = space.dof_of_vertex[mesh.triangles]
    A = _scatter(stiff, tri_dofs, space.n_dofs)
    S = _scatter(mass, tri_dofs, space.n_dofs)
    k2 = float(k) * float(k)
    B = (A - k2 * S).tocsr()
    Dk = (A + k2 * S).tocsr()
    return AssembledForms(
        k=float(k),
        stiffness=A,
        mass=S,
        helmholtz=B,
        dk=Dk,
        elem_stiffness=stiff,
        elem_mass=mass,
        tri_dofs=tri_dofs,
    )


def assemble_rhs(mesh, space, f):
    """Load vector (f, phi_i) by the 3-point edge-midpoint rule.

    ``f`` must accept numpy arrays ``f(x, y)`` and evaluate pointwise.
    """
    p = mesh.vertices[mesh.triangles]
    area = triangle_areas(mesh)
    m01 = 0.5 * (p[:, 0] + p[:, 1])
    m12 = 0.5 * (p[:, 1] + p[:, 2])
    m20 = 0.5 * (p[:, 2] + p[:, 0])
    f01 = np.asarray(f(m01[:, 0], m01[:, 1]), dtype=float)
    f12 = np.asarray(f(m12[:, 0], m12[:, 1]), dtype=float)
    f20 = np.asarray(f(m20[:, 0], m20[:, 1]), dtype=float)
    # phi_a is 1/2 on the two midpoints of edges meeting at vertex a.
    contrib = np.stack([f01 + f20, f01 + f12, f12 + f20], axis=1)
    contrib *= (area / 6.0)[:, None]
    tri_dofs = space.dof_of_vertex[mesh.triangles]
    rhs = np.zeros(space.n_dofs)
    keep = tri_dofs >= 0
    np.add.at(rhs, tri_dofs[keep], contrib[keep])
    return rhs


def assemble_local_forms(forms, elements, dofs):
    """Subassemble the local stiffness and mass over an element subset.

    Sums element contributions only over ``elements`` and returns dense
    matrices over the ordered dof list ``dofs`` (natural/"Neumann" coupling
    on the subdomain's internal boundary; global Dirichlet rows are absent
    because boundary vertices carry no dof).
    """
    dofs = np.asarray(dofs)
    n_loc = dofs.size
    lookup = np.full(forms.n_dofs, -1, dtype=np.int64)
    lookup[dofs] = np.arange(n_loc)
    tri_dofs = forms.tri_dofs[elements]
    loc = np.where(tri_dofs >= 0, lookup[tri_dofs], -1)
    if np.any((tri_dofs >= 0) & (loc < 0)):
        raise ValueError("dof list does not cover all dofs active on the elements")
    rows = np.repeat(loc, 3, axis=1).ravel()
    cols = np.tile(loc, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    A_loc = np.zeros((n_loc, n_loc))
    S_loc = np.zeros((n_loc, n_loc))
    np.add.at(A_loc, (rows[keep], cols[keep]), forms.elem_stiffness[elements].ravel()[keep])
    np.add.at(S_loc, (rows[keep], cols[keep]), forms.elem_mass[elements].ravel()[keep])
    return A_loc, S_loc


def bform(forms, u, v):
    """Value of the indefinite form: u^T B v."""
    return float(np.dot(u, forms.helmholtz @ v))


def norm_1k(forms, v):
    """Weighted norm sqrt(v^T D_k v)."""
    return float(np.sqrt(np.dot(v, forms.dk @ v)))


def write_matrix_market(path, mat):
    """Write a symmetric sparse matrix in Matrix Market coordinate format.

    Stores the lower triangle with 1-based indices, rows ascending.
    """
    coo = sparse.coo_matrix(mat)
    keep = coo.row >= coo.col
    rows = coo.row[keep]
    cols = coo.col[keep]
    vals = coo.data[keep]
    order = np.lexsort((cols, rows))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        fh.write("%d %d %d\n" % (coo.shape[0], coo.shape[1], rows.size))
        for i in order:
            fh.write("%d %d %.17g\n" % (rows[i] + 1, cols[i] + 1, vals[i]))
