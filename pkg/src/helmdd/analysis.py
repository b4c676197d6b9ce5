"""Numerical verification of the convergence-theory estimates.

Every check draws seeded random vectors (plus structured adversarial ones
where useful), evaluates both sides of the corresponding inequality with an
additive slack of 1e-9 times the scale of the two sides, and records the
worst margin together with the witness index that achieved it.  Violations
are reported, never raised: several bounds hold only under hypotheses that a
study may deliberately break to map the robustness boundary.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import assemble_local_forms
from .errors import NearResonanceError

SLACK_RTOL = 1e-9


@dataclass
class CheckReport:
    """Outcome of one inequality sweep."""

    name: str
    trials: int
    violations: int
    worst_margin: float     # min over trials of rhs - lhs + slack (>= 0 passes)
    witness: int            # trial index attaining the worst margin
    slack_rtol: float = SLACK_RTOL
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0


@dataclass
class TheoryReport:
    """All theory-side numbers for one solve, plus check outcomes."""

    k: float = np.nan
    hf: float = np.nan
    hf_k: float = np.nan
    tau: float = np.nan
    theta: float = np.nan
    lambda_overlap: int = 0
    cstab_estimate: float = np.nan
    s: float = np.nan
    gamma: float = np.nan
    c1_theory: float = np.nan
    c2_theory: float = np.nan
    c1_measured: float = np.nan
    c2_measured: float = np.nan
    corollary_hf_k: float = np.nan
    corollary_tau_ratio: float = np.nan   # (1 + Cstab)^2 k^2 / tau
    c_small_value: float = np.nan
    c_small_ok: bool = False
    theorem_applicable: bool = False
    checks: dict = field(default_factory=dict)

    def kv_lines(self):
        pairs = [
            ("k", self.k),
            ("hf", self.hf),
            ("hf_k", self.hf_k),
            ("tau", self.tau),
            ("theta", self.theta),
            ("lambda_overlap", self.lambda_overlap),
            ("cstab_estimate", self.cstab_estimate),
            ("s", self.s),
            ("gamma", self.gamma),
            ("c1_theory", self.c1_theory),
            ("c2_theory", self.c2_theory),
            ("c1_measured", self.c1_measured),
            ("c2_measured", self.c2_measured),
            ("corollary_hf_k", self.corollary_hf_k),
            ("corollary_tau_ratio", self.corollary_tau_ratio),
            ("c_small_value", self.c_small_value),
            ("c_small_ok", self.c_small_ok),
            ("theorem_applicable", self.theorem_applicable),
        ]
        lines = ["%s=%r" % (key, val) for key, val in pairs]
        for name in sorted(self.checks):
            chk = self.checks[name]
            lines.append(
                "check.%s=passed:%s trials:%d violations:%d worst_margin:%r "
                "witness:%d slack_rtol:%r"
                % (
                    name,
                    chk.passed,
                    chk.trials,
                    chk.violations,
                    chk.worst_margin,
                    chk.witness,
                    chk.slack_rtol,
                )
            )
        return lines

    def csv_rows(self):
        rows = [("key", "value")]
        for line in self.kv_lines():
            key, val = line.split("=", 1)
            rows.append((key, val))
        return rows


def evaluate_conditions(k, hf, tau, lam, cstab):
    """Evaluate the hypothesis quantities of the convergence theory.

    Computes Theta = 1/tau, the smallness parameter

        s = 2 Lambda^2 (2 + 3 Lambda^4 Theta)
            (2 k sqrt(Theta) (1 + Cstab) + 3 k H^f),

    the decay rate gamma = (1 - s) / ((2 + 3 Lambda^4 Theta)(18 + 8 Lambda^3)),
    the two scaling left-hand sides (H^f k and (1 + Cstab)^2 k^2 / tau), and
    the small-constant test 2 Lambda^2 (2 + 3 Lambda^4 C)(2 sqrt(C) + 3 C) < 1
    at C = max of the two.  gamma <= 0 is reported as is: the theory is then
    inapplicable.
    """
    lam = float(lam)
    theta = 0.0 if np.isinf(tau) else 1.0 / float(tau)
    bracket = 2.0 + 3.0 * lam**4 * theta
    s = 2.0 * lam**2 * bracket * (
        2.0 * k * np.sqrt(theta) * (1.0 + cstab) + 3.0 * k * hf
    )
    c2 = 18.0 + 8.0 * lam**3
    gamma = (1.0 - s) / (bracket * c2)
    c1 = (1.0 - s) / bracket
    ratio = 0.0 if np.isinf(tau) else (1.0 + cstab) ** 2 * k**2 / tau
    c_eval = max(hf * k, ratio)
    c_small = 2.0 * lam**2 * (2.0 + 3.0 * lam**4 * c_eval) * (
        2.0 * np.sqrt(c_eval) + 3.0 * c_eval
    )
    report = TheoryReport(
        k=float(k),
        hf=float(hf),
        hf_k=float(hf * k),
        tau=float(tau),
        theta=float(theta),
        cstab_estimate=float(cstab),
        s=float(s),
        gamma=float(gamma),
        c1_theory=float(c1),
        c2_theory=float(c2),
        corollary_hf_k=float(hf * k),
        corollary_tau_ratio=float(ratio),
        c_small_value=float(c_small),
        c_small_ok=bool(c_small < 1.0),
        theorem_applicable=bool(s < 1.0),
    )
    report.lambda_overlap = int(lam)
    return report


def estimate_cstab(forms, return_details=False):
    """Discrete stability constant from the full (A, S) pencil spectrum.

    In S-orthonormal eigencoordinates the solution of B u = f expands as
    u_j = f_j / (lambda_j - k^2), so the worst-case ratio of the weighted
    solution norm to the L2 data norm is

        Cstab = max_j sqrt(lambda_j + k^2) / |lambda_j - k^2|.

    Raises when k^2 is within 1e-10 (relatively) of a pencil eigenvalue.
    """
    A = forms.stiffness.toarray()
    S = forms.mass.toarray()
    lams = scipy.linalg.eigh(A, S, eigvals_only=True, check_finite=False)
    k2 = forms.k**2
    dist = np.abs(lams - k2)
    nearest = int(dist.argmin())
    if dist[nearest] <= 1e-10 * max(lams[nearest], k2):
        raise NearResonanceError(forms.k, lams[nearest])
    ratios = np.sqrt(lams + k2) / dist
    worst = int(ratios.argmax())
    value = float(ratios[worst])
    if return_details:
        return value, lams, worst
    return value


def _slack(lhs, rhs):
    return SLACK_RTOL * (abs(lhs) + abs(rhs))


def _sweep(name, margins, extra=None):
    margins = np.asarray(margins)
    worst = int(margins.argmin()) if margins.size else 0
    return CheckReport(
        name=name,
        trials=int(margins.size),
        violations=int(np.sum(margins < 0.0)),
        worst_margin=float(margins[worst]) if margins.size else np.inf,
        witness=worst,
        extra=extra or {},
    )


def projector_apply(gevp, result, m_i, v):
    """Residual v - Pi v of the local spectral projector.

    The projector reproduces the selected span: nonpositive modes enter
    through the local indefinite form (coefficient b(v, p_l)/lambda_l, the
    indefinite-form coefficient under the negative-mode normalization) and
    positive selected modes through the weighted form (Xi v, Xi p_l)_{1,k}.
    Both coefficient routes agree analytically; near-zero eigenvalues fall
    back to the weighted form, which stays well defined.
    """
    r = result.n_nonpositive
    P = result.eigenvectors[:, :m_i]
    lams = result.eigenvalues[:m_i]
    if m_i == 0:
        return v.copy()
    coeffs = np.empty(m_i)
    bv = gevp.b_mat @ v
    cv = gevp.c_mat @ v
    lam_floor = 1e-12 * max(np.abs(result.eigenvalues).max(), 1.0)
    for ell in range(m_i):
        if ell < r and abs(lams[ell]) > lam_floor:
            coeffs[ell] = float(np.dot(bv, P[:, ell])) / lams[ell]
        else:
            coeffs[ell] = float(np.dot(cv, P[:, ell]))
    return v - P @ coeffs


def check_projector(gevp, result, m_i, trials=200, rng=None):
    """Sweep the local projector bounds on random vectors.

    Verifies, for w = v - Pi v:  0 <= b(w, w) <= ||v||_{1,k}^2  and
    ||Xi w||_{1,k}^2 <= b(w, w) / lambda_{m_i + 1}.
    """
    rng = rng or np.random.default_rng(0)
    if m_i >= result.eigenvalues.size:
        raise ValueError("projector check needs an excluded eigenvalue")
    lam_next = result.eigenvalues[m_i]
    if lam_next <= 0.0:
        raise ValueError("first excluded eigenvalue must be positive")
    n = gevp.b_mat.shape[0]
    margins = []
    for _ in range(trials):
        v = rng.standard_normal(n)
        w = projector_apply(gevp, result, m_i, v)
        bww = float(w @ (gevp.b_mat @ w))
        v_norm2 = float(v @ (gevp.dk_mat @ v))
        xi_norm2 = float(w @ (gevp.c_mat @ w))
        m1 = bww - 0.0 + _slack(0.0, bww)
        m2 = v_norm2 - bww + _slack(bww, v_norm2)
        m3 = bww / lam_next - xi_norm2 + _slack(xi_norm2, bww / lam_next)
        margins.append(min(m1, m2, m3))
    return _sweep(
        "projector_subdomain_%d" % gevp.subdomain_index,
        margins,
        extra={"lambda_next": float(lam_next), "m_i": int(m_i)},
    )


def _fine_z(dec, forms, i, w_cov, accum=None):
    """Per-fine-subdomain partition-of-unity pieces of a coarse-local vector.

    ``w_cov`` lives on the active dofs of coarse subdomain i.  Returns the
    interior-dof vectors z_{i,j} (fine partition of unity applied to the
    restriction) and optionally accumulates their zero extensions.
    """
    sub_c = dec.coarse[i]
    lookup = np.full(forms.n_dofs, -1, dtype=np.int64)
    lookup[sub_c.ovdof] = np.arange(sub_c.ovdof.size)
    pieces = []
    for sub_f in dec.fine[i]:
        pos = lookup[sub_f.idof]
        z = w_cov[pos] / dec.fine_multiplicity[sub_f.idof]
        pieces.append(z)
        if accum is not None:
            accum[sub_f.idof] += z
    return pieces


def check_decomposition_lemmas(forms, dec, gevps, results, selection,
                               trials=100, rng=None):
    """Verify the splitting v = z_0 + sum E z_{i,j} and its three bounds.

    The reconstruction identity must hold to 1e-12 (a failure indicates an
    indexing or partition-of-unity bug and raises); the approximation and
    stable-decomposition inequalities are swept with the standard slack:

        sum ||z_{i,j}||^2 <= Lambda^2 Theta ||v||^2
        ||v - z_0||^2     <= Lambda^4 Theta ||v||^2
        ||z_0||^2 + sum ||z_{i,j}||^2 <= (2 + 3 Lambda^4 Theta) ||v||^2.
    """
    rng = rng or np.random.default_rng(0)
    lam = float(dec.Lambda)
    theta = selection.theta
    n = forms.n_dofs
    Dk = forms.dk

    fine_dk = {}
    for i, j, sub in dec.fine_flat():
        fine_dk[(i, j)] = (Dk[sub.idof][:, sub.idof]).tocsr()

    margins = []
    for t in range(trials):
        v = rng.standard_normal(n)
        v_norm2 = float(v @ (Dk @ v))
        z0 = np.zeros(n)
        recon = np.zeros(n)
        sum_z2 = 0.0
        for i, (gevp, res, m_i) in enumerate(
            zip(gevps, results, selection.m_per_subdomain)
        ):
            sub_c = dec.coarse[i]
            v_c = v[sub_c.ovdof]
            w_c = projector_apply(gevp, res, m_i, v_c)
            p_c = v_c - w_c
            zs = _fine_z(dec, forms, i, w_c, accum=recon)
            _fine_z(dec, forms, i, p_c, accum=z0)
            for j, z in enumerate(zs):
                sum_z2 += float(z @ (fine_dk[(i, j)] @ z))
        recon += z0
        err = np.abs(recon - v).max()
        if err > 1e-12 * max(1.0, np.abs(v).max()):
            raise AssertionError(
                "decomposition reconstruction failed at trial %d "
                "(max error %.3e)" % (t, err)
            )
        z0_norm2 = float(z0 @ (Dk @ z0))
        dv = v - z0
        dv_norm2 = float(dv @ (Dk @ dv))

        rhs1 = lam**2 * theta * v_norm2
        rhs2 = lam**4 * theta * v_norm2
        rhs3 = (2.0 + 3.0 * lam**4 * theta) * v_norm2
        m1 = rhs1 - sum_z2 + _slack(sum_z2, rhs1)
        m2 = rhs2 - dv_norm2 + _slack(dv_norm2, rhs2)
        m3 = rhs3 - (z0_norm2 + sum_z2) + _slack(z0_norm2 + sum_z2, rhs3)
        margins.append(min(m1, m2, m3))
    return _sweep("decomposition", margins, extra={"theta": theta})


def fov_bounds(forms, precond, mode="dense", samples=500, rng=None):
    """Measured field-of-values constants of T = M^{-1} B in the D_k metric.

    Dense mode assembles T column by column and solves the two symmetric
    pencils ((D_k T + T^T D_k)/2, D_k) and (T^T D_k T, D_k) for the smallest
    and largest eigenvalue; sampled mode bounds them from the inside with
    random Rayleigh quotients.
    """
    Dk = forms.dk
    n = forms.n_dofs
    if mode == "dense":
        T = np.empty((n, n))
        eye = np.eye(n)
        for j in range(n):
            T[:, j] = precond.apply_T(eye[:, j])
        Dk_d = Dk.toarray()
        M1 = Dk_d @ T
        sym = 0.5 * (M1 + M1.T)
        c1 = float(scipy.linalg.eigh(sym, Dk_d, eigvals_only=True)[0])
        c2 = float(scipy.linalg.eigh(T.T @ M1, Dk_d, eigvals_only=True)[-1])
        return c1, c2
    if mode == "sampled":
        rng = rng or np.random.default_rng(0)
        c1 = np.inf
        c2 = 0.0
        for _ in range(samples):
            u = rng.standard_normal(n)
            tu = precond.apply_T(u)
            du = Dk @ u
            denom = float(u @ du)
            c1 = min(c1, float(tu @ du) / denom)
            c2 = max(c2, float(tu @ (Dk @ tu)) / denom)
        return float(c1), float(c2)
    raise ValueError("mode must be 'dense' or 'sampled'")


def check_local_spd(forms, dec, precond=None):
    """Local positive-definiteness of the fine blocks.

    Whenever a fine subdomain satisfies H^f_{i,j} k < sqrt(2), its interior
    Helmholtz block must be positive definite, with the quantitative pencil
    floor  min eig(B_loc, S_loc) >= (2 - H^2 k^2) / H^2  coming from the
    slab Poincare bound.  Blocks that fail the hypothesis are recorded
    without assertion (the implication is one-directional).
    """
    k = forms.k
    B = forms.helmholtz
    S = forms.mass
    margins = []
    rows = []
    idx = 0
    for i, j, sub in dec.fine_flat():
        if sub.idof.size == 0:
            continue
        hk = sub.diameter * k
        b_loc = B[sub.idof][:, sub.idof].toarray()
        s_loc = S[sub.idof][:, sub.idof].toarray()
        min_eig = float(scipy.linalg.eigh(b_loc, eigvals_only=True)[0])
        pencil_min = float(
            scipy.linalg.eigh(b_loc, s_loc, eigvals_only=True)[0]
        )
        hypothesis = bool(hk < np.sqrt(2.0))
        floor = (2.0 - sub.diameter**2 * k**2) / sub.diameter**2
        rows.append(
            {
                "i": i,
                "j": j,
                "hf_ij": sub.diameter,
                "hf_k": hk,
                "min_eig": min_eig,
                "pencil_min": pencil_min,
                "floor": floor,
                "hypothesis": hypothesis,
            }
        )
        if hypothesis:
            m1 = min_eig - 0.0 + _slack(0.0, min_eig)
            m2 = pencil_min - floor + _slack(floor, pencil_min)
            margins.append(min(m1, m2))
        else:
            margins.append(np.inf)
        idx += 1
    return _sweep("local_spd", margins, extra={"blocks": rows})


def check_tf_stability(forms, dec, precond, trials=20, rng=None):
    """Local stability of the fine projectors.

    For blocks with H^f_{i,j} k <= sqrt(2)/2, solving the local problem for
    T_{i,j} u must satisfy ||T_{i,j} u||_{1,k,loc} <= 2 ||u||_{1,k,loc} where
    the right side uses the subassembled local weighted norm.
    """
    rng = rng or np.random.default_rng(0)
    k = forms.k
    margins = []
    solver_by_pair = {
        (ls.coarse_index, ls.fine_index): ls for ls in precond.local_solvers
    }
    for i, j, sub in dec.fine_flat():
        if sub.diameter * k > np.sqrt(2.0) / 2.0 or sub.idof.size == 0:
            continue
        A_loc, S_loc = assemble_local_forms(forms, sub.elements, sub.ovdof)
        dk_ov = A_loc + k**2 * S_loc
        dk_ii = forms.dk[sub.idof][:, sub.idof]
        ls = solver_by_pair[(i, j)]
        for _ in range(trials):
            u = rng.standard_normal(forms.n_dofs)
            tfu = ls.lu.solve((forms.helmholtz @ u)[sub.idof])
            lhs = float(np.sqrt(tfu @ (dk_ii @ tfu)))
            u_ov = u[sub.ovdof]
            rhs = 2.0 * float(np.sqrt(u_ov @ (dk_ov @ u_ov)))
            margins.append(rhs - lhs + _slack(lhs, rhs))
    return _sweep("tf_stability", margins)


def check_t0_stability(forms, coarse, precond, theory, trials=20, rng=None):
    """Coarse-projector stability ||u - T_0 u||_{1,k} <= 2 ||u||_{1,k},
    asserted only under the hypothesis 2 k Lambda^2 sqrt(Theta) (1+Cstab)
    <= 1/2."""
    rng = rng or np.random.default_rng(0)
    cond = (
        2.0
        * theory.k
        * theory.lambda_overlap**2
        * np.sqrt(theory.theta)
        * (1.0 + theory.cstab_estimate)
    )
    margins = []
    if cond <= 0.5 and precond.has_coarse:
        for _ in range(trials):
            u = rng.standard_normal(forms.n_dofs)
            t0u = precond.apply_coarse(forms.helmholtz @ u)
            d = u - t0u
            lhs = float(np.sqrt(d @ (forms.dk @ d)))
            rhs = 2.0 * float(np.sqrt(u @ (forms.dk @ u)))
            margins.append(rhs - lhs + _slack(lhs, rhs))
    return _sweep("t0_stability", margins, extra={"hypothesis_value": float(cond)})


def check_p_coercivity(forms, projector, theory, trials=100, rng=None):
    """Coercivity ||u||_{1,k}^2 <= (2 + 3 Lambda^4 Theta) (P u, u)_{1,k},
    asserted when the smallness hypothesis s < 1 holds."""
    rng = rng or np.random.default_rng(0)
    margins = []
    if theory.s < 1.0:
        factor = 2.0 + 3.0 * theory.lambda_overlap**4 * theory.theta
        for _ in range(trials):
            u = rng.standard_normal(forms.n_dofs)
            pu = projector.apply(u)
            lhs = float(u @ (forms.dk @ u))
            rhs = factor * float(pu @ (forms.dk @ u))
            margins.append(rhs - lhs + _slack(lhs, rhs))
    return _sweep("p_coercivity", margins)


def check_prop26_identity(forms, precond, trials=50, rng=None):
    """The preconditioned-operator identity in the weighted metric.

    <M^{-1} B u, v>_{D_k} computed through D_k must equal (T u, v)_{1,k}
    computed through the split A + k^2 S, to 1e-12 relative.
    """
    rng = rng or np.random.default_rng(0)
    margins = []
    k2 = forms.k**2
    for _ in range(trials):
        u = rng.standard_normal(forms.n_dofs)
        v = rng.standard_normal(forms.n_dofs)
        mbu = precond.apply(forms.helmholtz @ u)
        lhs = float(v @ (forms.dk @ mbu))
        tu = precond.apply_T(u)
        rhs = float(v @ (forms.stiffness @ tu)) + k2 * float(v @ (forms.mass @ tu))
        tol = 1e-12 * (abs(lhs) + abs(rhs))
        margins.append(tol - abs(lhs - rhs))
    return _sweep("prop26_identity", margins)
