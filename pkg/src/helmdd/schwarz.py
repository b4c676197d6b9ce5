"""One- and two-level additive Schwarz preconditioners.

The one-level preconditioner sums zero-trace local solves over all fine
subdomains; the two-level variant adds the coarse solve through the spectral
basis Z:

    M2^{-1} r = Z B0^{-1} Z^T r + sum_{i,j} E_{i,j} (B_{i,j})^{-1} R_{i,j} r

with B_{i,j} the interior-dof block of the global Helmholtz matrix.  The
preconditioned operator T = M2^{-1} B and its SPD counterpart P (orthogonal
local projectors in the (.,.)_{1,k} inner product) are exposed matrix-free.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import SingularOperatorError

_SINGULAR_RTOL = 1e-12
_DENSE_EIG_LIMIT = 1500


@dataclass
class LocalSolver:
    coarse_index: int
    fine_index: int
    idof: np.ndarray
    lu: object
    spd_flag: bool
    diameter: float
    min_eig: float


class TwoLevelPreconditioner:
    """Additive combination of factorized local solves and a coarse solve."""

    def __init__(self, forms, local_solvers, Z=None, b0_piv=None):
        self.forms = forms
        self.local_solvers = local_solvers
        self.Z = Z
        self.b0_piv = b0_piv
        self.n = forms.n_dofs

    @property
    def has_coarse(self):
        return self.Z is not None and self.Z.shape[1] > 0

    def apply(self, r):
        """M^{-1} r, purely additive; summation order is fixed."""
        r = np.asarray(r)
        out = np.zeros(self.n)
        if self.has_coarse:
            y = scipy.linalg.lu_solve(self.b0_piv, self.Z.T @ r)
            out += self.Z @ y
        for ls in self.local_solvers:
            if ls.idof.size:
                out[ls.idof] += ls.lu.solve(r[ls.idof])
        return out

    def apply_T(self, u):
        """Preconditioned operator T u = M^{-1} B u."""
        return self.apply(self.forms.helmholtz @ np.asarray(u))

    def apply_coarse(self, r):
        """Coarse component Z B0^{-1} Z^T r alone (zero without a coarse space)."""
        if not self.has_coarse:
            return np.zeros(self.n)
        return self.Z @ scipy.linalg.lu_solve(self.b0_piv, self.Z.T @ r)


def factorize(forms, dec, coarse=None):
    """Factorize all local blocks (and B0 when a coarse space is given).

    A local block whose smallest pivot falls below the singularity threshold
    means k^2 sits on a local Dirichlet eigenvalue; the error names the
    offending subdomain pair.
    """
    B = forms.helmholtz.tocsc()
    solvers = []
    for i, j, sub in dec.fine_flat():
        solvers.append(_factor_block(B, forms, i, j, sub))

    Z = None
    b0_piv = None
    if coarse is not None and coarse.m_total > 0:
        try:
            b0_piv = scipy.linalg.lu_factor(coarse.B0)
        except scipy.linalg.LinAlgError as exc:
            raise SingularOperatorError("coarse operator B0: %s" % exc)
        diag = np.abs(np.diag(b0_piv[0]))
        if diag.size and diag.min() <= _SINGULAR_RTOL * np.linalg.norm(coarse.B0):
            raise SingularOperatorError(
                "coarse operator B0 is numerically singular; the coarse "
                "problem is not well posed at this wavenumber (the condition "
                "sqrt(2) k Lambda^2 sqrt(Theta) (1 + Cstab) < 1 fails)"
            )
        Z = coarse.Z
    return TwoLevelPreconditioner(forms, solvers, Z=Z, b0_piv=b0_piv)


def _factor_block(B, forms, i, j, sub):
    idof = sub.idof
    if idof.size == 0:
        return LocalSolver(i, j, idof, None, True, sub.diameter, np.inf)
    block = B[idof][:, idof].tocsc()
    try:
        lu = spla.splu(block)
    except RuntimeError as exc:
        raise SingularOperatorError(
            "local Helmholtz block on fine subdomain (%d, %d) is singular "
            "(k^2 equals a local Dirichlet eigenvalue): %s" % (i, j, exc)
        )
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() <= _SINGULAR_RTOL * spla.norm(block):
        raise SingularOperatorError(
            "local Helmholtz block on fine subdomain (%d, %d) is numerically "
            "singular (smallest pivot %.3e)" % (i, j, pivots.min())
        )
    min_eig = _smallest_eigenvalue(block)
    return LocalSolver(
        coarse_index=i,
        fine_index=j,
        idof=idof,
        lu=lu,
        spd_flag=bool(min_eig > 0.0),
        diameter=sub.diameter,
        min_eig=min_eig,
    )


def _smallest_eigenvalue(block):
    m = block.shape[0]
    if m <= _DENSE_EIG_LIMIT:
        return float(
            scipy.linalg.eigvalsh(block.toarray(), subset_by_index=[0, 0])[0]
        )
    try:
        val = spla.eigsh(block.asfptype(), k=1, which="SA", maxiter=5000,
                         return_eigenvectors=False)
        return float(val[0])
    except Exception:
        return float(scipy.linalg.eigvalsh(block.toarray())[0])


class ProjectorP:
    """The (.,.)_{1,k}-orthogonal analysis operator

        P u = Z (Z^T D_k Z)^{-1} Z^T D_k u
              + sum_{i,j} E_{i,j} (R_{i,j} D_k E_{i,j})^{-1} R_{i,j} D_k u.

    Local blocks are interior-dof blocks of the SPD matrix D_k, so every
    piece is an orthogonal projector in the weighted inner product.
    """

    def __init__(self, forms, dec, coarse=None):
        Dk = forms.dk.tocsc()
        self.forms = forms
        self.n = forms.n_dofs
        self.local = []
        for i, j, sub in dec.fine_flat():
            if sub.idof.size == 0:
                continue
            block = Dk[sub.idof][:, sub.idof].tocsc()
            self.local.append((sub.idof, spla.splu(block)))
        self.Z = None
        self.coarse_cho = None
        if coarse is not None and coarse.m_total > 0:
            self.Z = coarse.Z
            gram = np.asarray((coarse.Z.T @ (Dk @ coarse.Z)).todense())
            gram = 0.5 * (gram + gram.T)
            # SPD by construction: D_k is SPD and Z has full column rank.
            self.coarse_cho = scipy.linalg.cho_factor(gram)

    def apply_coarse(self, u):
        out = np.zeros(self.n)
        if self.Z is not None:
            rhs = self.Z.T @ (self.forms.dk @ u)
            out += self.Z @ scipy.linalg.cho_solve(self.coarse_cho, rhs)
        return out

    def apply_local(self, idx, u):
        idof, lu = self.local[idx]
        out = np.zeros(self.n)
        out[idof] = lu.solve((self.forms.dk @ u)[idof])
        return out

    def apply(self, u):
        u = np.asarray(u)
        du = self.forms.dk @ u
        out = np.zeros(self.n)
        if self.Z is not None:
            out += self.Z @ scipy.linalg.cho_solve(self.coarse_cho, self.Z.T @ du)
        for idof, lu in self.local:
            out[idof] += lu.solve(du[idof])
        return out
