"""Local indefinite generalized eigenproblems and the spectral coarse space.

On every coarse subdomain the pencil (B_i, C_i) is solved, where B_i is the
indefinite Helmholtz form subassembled over the subdomain's elements (natural
coupling on its internal boundary) and C_i = W_i D_i W_i weights the local
(.,.)_{1,k} matrix D_i by the coarse partition-of-unity diagonal W_i.  C_i is
positive semidefinite with kernel on the active-but-not-interior dofs, so the
pencil is solved through an invertible shift: pick gamma with B_i + gamma C_i
invertible, factor C_i = F F^T, and diagonalize the congruent symmetric matrix
F^T (B_i + gamma C_i)^{-1} F.  Its nonzero eigenvalues mu map to the finite
pencil eigenvalues lambda = 1/mu - gamma; the rest of the spectrum consists of
"infinite" kernel modes that never enter the coarse space.  The coarse basis
collects the partition-of-unity images of the selected low eigenvectors.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import assemble_local_forms
from .errors import EigensolveError, ModeCapError, SingularOperatorError

_GAMMA_ATTEMPTS = 40
_PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class LocalGevp:
    """Dense local pencil for one coarse subdomain."""

    subdomain_index: int
    b_mat: np.ndarray      # indefinite form over active dofs
    c_mat: np.ndarray      # W D W, positive semidefinite
    dk_mat: np.ndarray     # local (.,.)_{1,k} matrix over active dofs
    weights: np.ndarray    # partition-of-unity diagonal
    k: float


@dataclass(frozen=True)
class LocalGevpResult:
    """Finite spectrum of one local pencil, sorted ascending.

    Eigenvectors are C-normalized columns over the subdomain's active dofs;
    ``n_nonpositive`` counts eigenvalues <= 0 and ``n_kernel`` the infinite
    (C-kernel) directions excluded from the finite list.
    """

    subdomain_index: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_nonpositive: int
    n_kernel: int
    shift_gamma: float


@dataclass(frozen=True)
class ModeSelection:
    m_per_subdomain: list
    tau: float              # min over subdomains of the first excluded eigenvalue
    theta: float            # 1/tau (0 when every subdomain overflowed)
    overflow: list          # subdomains whose whole finite spectrum was selected


@dataclass(frozen=True)
class CoarseSpace:
    """Global coarse basis Z and the coarse operator B0 = Z^T B Z."""

    Z: object               # sparse (n, m_total), columns supported on interior dofs
    per_subdomain_counts: list
    tau: float
    theta: float
    B0: np.ndarray
    column_meta: list       # (subdomain, mode) per kept column
    removed: list           # (subdomain, mode) dropped by the rank filter

    @property
    def m_total(self):
        return self.Z.shape[1]


def assemble_local_gevp(i, forms, dec, validate=True):
    """Assemble the pencil (B_i, C_i) on coarse subdomain ``i``."""
    sub = dec.coarse[i]
    A_loc, S_loc = assemble_local_forms(forms, sub.elements, sub.ovdof)
    k2 = forms.k**2
    b_mat = A_loc - k2 * S_loc
    dk_mat = A_loc + k2 * S_loc
    w = sub.pou
    c_mat = dk_mat * w[:, None] * w[None, :]
    if validate:
        _validate_pencil(i, b_mat, c_mat)
    return LocalGevp(
        subdomain_index=i,
        b_mat=b_mat,
        c_mat=c_mat,
        dk_mat=dk_mat,
        weights=w,
        k=forms.k,
    )


def _validate_pencil(i, b_mat, c_mat):
    scale_c = np.linalg.norm(c_mat)
    if scale_c == 0.0:
        raise EigensolveError(
            "coarse subdomain %d has an all-zero weight matrix (no interior "
            "dofs)" % i
        )
    cmin = scipy.linalg.eigvalsh(c_mat, subset_by_index=[0, 0])[0]
    if cmin < -1e-10 * scale_c:
        raise EigensolveError(
            "weight matrix of subdomain %d is not positive semidefinite "
            "(min eigenvalue %.3e)" % (i, cmin)
        )
    stacked = np.vstack([b_mat, c_mat])
    smin = np.linalg.svd(stacked, compute_uv=False)[-1]
    scale = max(np.linalg.norm(b_mat), scale_c)
    if smin <= 1e-10 * scale:
        raise EigensolveError(
            "pencil of subdomain %d has intersecting kernels "
            "(smallest stacked singular value %.3e)" % (i, smin)
        )


@dataclass(frozen=True)
class GevpConfig:
    gamma0: float = None        # default 2 k^2 from the pencil
    max_attempts: int = _GAMMA_ATTEMPTS
    pivot_rtol: float = _PIVOT_RTOL
    c_rank_rtol: float = 1e-12
    mu_rtol: float = 1e-12


def _ldl_min_pivot(mat):
    """Smallest absolute eigenvalue over the LDL^T pivot blocks."""
    _, d, _ = scipy.linalg.ldl(mat)
    vals = []
    j = 0
    m = d.shape[0]
    while j < m:
        if j + 1 < m and d[j + 1, j] != 0.0:
            vals.extend(np.linalg.eigvalsh(d[j : j + 2, j : j + 2]))
            j += 2
        else:
            vals.append(d[j, j])
            j += 1
    return float(np.abs(vals).min())


def solve_indefinite_gevp(gevp, config=None):
    """Solve B p = lambda C p with indefinite B and singular PSD C.

    Follows the shift construction: gamma starts at 2 k^2 and doubles until
    B + gamma C passes an LDL^T pivot test, then the problem is reduced to a
    dense symmetric eigensolve of F^T (B + gamma C)^{-1} F where C = F F^T on
    its range.  Eigenvalue realness and C-orthonormality are structural in
    this reduction.
    """
    cfg = config or GevpConfig()
    B = gevp.b_mat
    C = gevp.c_mat
    n = B.shape[0]

    c_evals, c_vecs = scipy.linalg.eigh(C)
    tol_c = cfg.c_rank_rtol * max(c_evals[-1], 0.0)
    if c_evals[-1] <= 0.0:
        raise EigensolveError(
            "subdomain %d weight matrix has empty range" % gevp.subdomain_index
        )
    pos = c_evals > tol_c
    F = c_vecs[:, pos] * np.sqrt(c_evals[pos])

    gamma = cfg.gamma0 if cfg.gamma0 is not None else 2.0 * gevp.k**2
    if gamma <= 0.0:
        gamma = 1.0
    bt = None
    for _ in range(cfg.max_attempts):
        cand = B + gamma * C
        if _ldl_min_pivot(cand) > cfg.pivot_rtol * np.linalg.norm(cand):
            bt = cand
            break
        gamma *= 2.0
    if bt is None:
        raise EigensolveError(
            "no invertible shift found for subdomain %d after %d attempts"
            % (gevp.subdomain_index, cfg.max_attempts)
        )

    lu_piv = scipy.linalg.lu_factor(bt)
    X = scipy.linalg.lu_solve(lu_piv, F)
    K = F.T @ X
    K = 0.5 * (K + K.T)
    mu, Wm = scipy.linalg.eigh(K)

    mu_scale = np.abs(mu).max() if mu.size else 0.0
    finite = np.abs(mu) > cfg.mu_rtol * max(mu_scale, 1e-300)
    mu_f = mu[finite]
    lams = 1.0 / mu_f - gamma
    vecs = (X @ Wm[:, finite]) / mu_f[None, :]

    cnorm = np.sqrt(np.einsum("ij,ij->j", vecs, C @ vecs))
    vecs = vecs / cnorm[None, :]

    order = np.argsort(lams, kind="stable")
    lams = lams[order]
    vecs = vecs[:, order]

    return LocalGevpResult(
        subdomain_index=gevp.subdomain_index,
        eigenvalues=lams,
        eigenvectors=vecs,
        n_nonpositive=int(np.sum(lams <= 0.0)),
        n_kernel=int(n - lams.size),
        shift_gamma=float(gamma),
    )


def select_modes(results, tau_target, caps=None):
    """Pick m_i = #{finite eigenvalues < tau_target} per subdomain.

    All nonpositive modes are always included because tau_target > 0.  A
    subdomain whose entire finite spectrum falls below the target is flagged
    as overflowed and does not constrain the realized tau.  ``caps`` may give
    a per-subdomain upper bound; exceeding it raises.
    """
    if tau_target <= 0.0:
        raise ValueError("tau_target must be positive, got %g" % tau_target)
    m_per = []
    overflow = []
    tau = np.inf
    for idx, res in enumerate(results):
        m = int(np.searchsorted(res.eigenvalues, tau_target, side="left"))
        if caps is not None and m > caps[idx]:
            raise ModeCapError(idx, m, caps[idx])
        m_per.append(m)
        if m >= res.eigenvalues.size:
            overflow.append(idx)
        else:
            tau = min(tau, float(res.eigenvalues[m]))
    theta = 0.0 if np.isinf(tau) else 1.0 / tau
    return ModeSelection(
        m_per_subdomain=m_per, tau=float(tau), theta=theta, overflow=overflow
    )


def build_coarse_space(results, selection, dec, forms):
    """Assemble Z from the partition-of-unity images of the selected modes
    and the dense coarse operator B0 = Z^T B Z.

    Columns that make B0 numerically singular are dropped greedily (smallest
    LDL^T pivot first) and reported; an empty result from a nonempty
    selection means the coarse problem is not solvable for this k, i.e. the
    well-posedness condition sqrt(2) k Lambda^2 sqrt(Theta) (1 + Cstab) < 1
    is violated.
    """
    n = forms.n_dofs
    cols = []
    meta = []
    for res, m, sub in zip(results, selection.m_per_subdomain, dec.coarse):
        for ell in range(m):
            z_ov = sub.pou * res.eigenvectors[:, ell]
            cols.append((sub.ovdof, z_ov))
            meta.append((res.subdomain_index, ell))

    m_total = len(cols)
    if m_total == 0:
        Z = sp.csc_matrix((n, 0))
        return CoarseSpace(
            Z=Z,
            per_subdomain_counts=list(selection.m_per_subdomain),
            tau=selection.tau,
            theta=selection.theta,
            B0=np.zeros((0, 0)),
            column_meta=[],
            removed=[],
        )

    data = np.concatenate([c[1] for c in cols])
    rows = np.concatenate([c[0] for c in cols])
    indptr = np.cumsum([0] + [c[0].size for c in cols])
    Z = sp.csc_matrix((data, rows, indptr), shape=(n, m_total))
    Z.eliminate_zeros()

    B0 = np.asarray((Z.T @ (forms.helmholtz @ Z)).todense())
    B0 = 0.5 * (B0 + B0.T)

    keep = list(range(m_total))
    removed = []
    while keep:
        sub_b0 = B0[np.ix_(keep, keep)]
        drop = _near_null_columns(sub_b0)
        if not drop:
            break
        for pos in sorted(drop, reverse=True):
            removed.append(meta[keep[pos]])
            del keep[pos]
    if not keep and m_total > 0:
        raise SingularOperatorError(
            "coarse operator is singular for every basis subset; the coarse "
            "problem is not well posed at this wavenumber (the condition "
            "sqrt(2) k Lambda^2 sqrt(Theta) (1 + Cstab) < 1 fails)"
        )
    if removed:
        Z = Z[:, keep]
        B0 = B0[np.ix_(keep, keep)]
        meta = [meta[i] for i in keep]

    counts = [0] * len(results)
    for i, _ in meta:
        counts[i] += 1
    return CoarseSpace(
        Z=Z.tocsc(),
        per_subdomain_counts=counts,
        tau=selection.tau,
        theta=selection.theta,
        B0=B0,
        column_meta=meta,
        removed=removed,
    )


def _near_null_columns(mat):
    """Columns dominating the near-null eigenspace of a symmetric matrix.

    Returns one column index (the largest participant) per eigenvector whose
    eigenvalue magnitude falls below the pivot tolerance, deduplicated; an
    empty list means the matrix passes the rank check.
    """
    vals, vecs = scipy.linalg.eigh(mat)
    scale = np.abs(vals).max()
    small = np.flatnonzero(np.abs(vals) <= _PIVOT_RTOL * scale)
    drop = []
    for j in small:
        pos = int(np.abs(vecs[:, j]).argmax())
        if pos not in drop:
            drop.append(pos)
    return drop


def spectrum_rows(results, selection):
    """Rows (subdomain, index, lambda, selected) for the spectrum dump."""
    rows = []
    for res, m in zip(results, selection.m_per_subdomain):
        for ell, lam in enumerate(res.eigenvalues):
            rows.append((res.subdomain_index, ell, float(lam), int(ell < m)))
    return rows
