"""Full GMRES in an SPD-matrix-weighted inner product.

The Arnoldi basis is orthonormalized in <u, v>_W = v^T W u by modified
Gram-Schmidt with one selective reorthogonalization pass, the least-squares
problem is solved with Givens rotations, and the recorded residual history is
the weighted norm of the (left-preconditioned) residual, which full GMRES
minimizes over nested Krylov spaces.  W-products are cached per basis vector
so each iteration costs a single multiplication by the weight matrix.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

_REORTH_TOL = 1e-12
_BREAKDOWN_RTOL = 1e-14


@dataclass
class GmresReport:
    """Convergence record of one solve.

    ``residual_history[m]`` is the weighted residual norm after m iterations
    (entry 0 is the initial residual); ``elman_envelope`` holds
    (1 - gamma^2)^{m/2} * residual_history[0] when a decay rate gamma was
    supplied, clamped to zero past the first step if gamma >= 1.
    """

    iterations: int
    residual_history: np.ndarray
    converged: bool
    elman_envelope: np.ndarray = None
    gamma_used: float = None
    envelope_clamped: bool = False
    breakdown: bool = False


def elman_gamma(c1, c2, c2_bounds="norm_squared"):
    """Field-of-values decay rate gamma from the two Elman constants.

    ``c1`` is a lower bound on the weighted field of values of the
    preconditioned operator.  With ``c2_bounds="norm_squared"`` (default)
    ``c2`` bounds the squared operator norm and gamma = c1 / sqrt(c2); with
    ``c2_bounds="norm"`` it bounds the norm itself and gamma = c1 / c2.  The
    per-iteration residual decay factor is sqrt(1 - gamma^2) for gamma < 1.
    """
    if c1 <= 0.0 or c2 <= 0.0:
        raise ValueError("both constants must be positive, got %g, %g" % (c1, c2))
    if c2_bounds == "norm_squared":
        return float(c1 / np.sqrt(c2))
    if c2_bounds == "norm":
        return float(c1 / c2)
    raise ValueError("c2_bounds must be 'norm_squared' or 'norm'")


def _as_operator(op):
    if callable(op):
        return op
    return lambda v: op @ v


def _envelope(gamma, r0, iterations):
    if gamma is None:
        return None, False
    m = np.arange(iterations + 1)
    if gamma >= 1.0:
        env = np.zeros(iterations + 1)
        env[0] = r0
        return env, True
    return r0 * (1.0 - gamma**2) ** (m / 2.0), False


def weighted_gmres(op, rhs, weight=None, rtol=1e-6, maxit=200, x0=None,
                   gamma=None):
    """Solve op(x) = rhs by full GMRES in the ``weight`` inner product.

    Parameters
    ----------
    op : callable or matrix
        The (already preconditioned) linear operator.
    rhs : array
        Right-hand side in the same (preconditioned) form.
    weight : SPD sparse/dense matrix or None
        Inner-product matrix; None means the Euclidean inner product.
    rtol, maxit : float, int
        Relative tolerance on the weighted residual and the iteration cap.
    x0 : array or None
        Initial guess (zero by default).
    gamma : float or None
        Optional theoretical decay rate; fills the report envelope.

    Returns
    -------
    (x, GmresReport)
    """
    apply_op = _as_operator(op)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    wmul = (lambda v: v.copy()) if weight is None else (lambda v: weight @ v)

    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    r0 = rhs - apply_op(x0) if x0.any() else rhs.copy()
    wr0 = wmul(r0)
    beta = float(np.sqrt(np.dot(r0, wr0)))
    if beta == 0.0:
        env, clamped = _envelope(gamma, 0.0, 0)
        return x0.copy(), GmresReport(
            iterations=0,
            residual_history=np.array([0.0]),
            converged=True,
            elman_envelope=env,
            gamma_used=gamma,
            envelope_clamped=clamped,
        )

    maxit = int(min(maxit, n))
    V = [r0 / beta]
    WV = [wr0 / beta]
    H = np.zeros((maxit + 1, maxit))
    cs = np.zeros(maxit)
    sn = np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    history = [beta]
    converged = False
    breakdown = False
    j = 0

    for j in range(maxit):
        # copy: the operator may return its argument (e.g. the identity)
        w = np.array(apply_op(V[j]), dtype=float, copy=True)
        col = np.zeros(j + 2)
        for i in range(j + 1):
            hij = float(np.dot(WV[i], w))
            col[i] = hij
            w -= hij * V[i]
        ww = wmul(w)
        hnorm = float(np.sqrt(max(np.dot(w, ww), 0.0)))
        # One reorthogonalization pass when the measured loss is above
        # roundoff; two MGS passes keep the basis orthonormal to ~1e-14.
        corr = np.array([np.dot(WV[i], w) for i in range(j + 1)])
        if corr.size and np.abs(corr).max() > _REORTH_TOL * max(hnorm, 1e-300):
            for i in range(j + 1):
                w -= corr[i] * V[i]
                col[i] += corr[i]
            ww = wmul(w)
            hnorm = float(np.sqrt(max(np.dot(w, ww), 0.0)))
        col[j + 1] = hnorm

        col_scale = np.abs(col).max()
        if hnorm <= _BREAKDOWN_RTOL * max(col_scale, 1e-300):
            breakdown = True
        else:
            V.append(w / hnorm)
            WV.append(ww / hnorm)

        # Givens update of the new Hessenberg column.
        for i in range(j):
            t = cs[i] * col[i] - sn[i] * col[i + 1]
            col[i + 1] = sn[i] * col[i] + cs[i] * col[i + 1]
            col[i] = t
        denom = np.hypot(col[j], col[j + 1])
        if denom == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j] = col[j] / denom
            sn[j] = -col[j + 1] / denom
        col[j] = cs[j] * col[j] - sn[j] * col[j + 1]
        col[j + 1] = 0.0
        H[: j + 2, j] = col

        g[j + 1] = sn[j] * g[j]
        g[j] = cs[j] * g[j]
        history.append(abs(g[j + 1]))

        if history[-1] <= rtol * beta:
            converged = True
            break
        if breakdown:
            # Lucky breakdown: the Krylov space became invariant, so the
            # least-squares solution is exact up to roundoff.
            converged = True
            break

    m = len(history) - 1
    y = (
        scipy.linalg.solve_triangular(H[:m, :m], g[:m], lower=False)
        if m
        else np.zeros(0)
    )
    x = x0 + (np.column_stack(V[:m]) @ y if m else 0.0)

    env, clamped = _envelope(gamma, beta, m)
    return x, GmresReport(
        iterations=m,
        residual_history=np.asarray(history),
        converged=bool(converged),
        elman_envelope=env,
        gamma_used=gamma,
        envelope_clamped=clamped,
        breakdown=breakdown,
    )
