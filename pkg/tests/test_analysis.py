import numpy as np
import pytest
import scipy.linalg

from helmdd import analysis
from helmdd.analysis import projector_apply
from helmdd.assembly import assemble_forms, coefficient_field
from helmdd.decomp import build_two_level
from helmdd.eigencoarse import (
    assemble_local_gevp,
    build_coarse_space,
    select_modes,
    solve_indefinite_gevp,
)
from helmdd.errors import NearResonanceError
from helmdd.mesh import build_fe_space, build_unit_square_mesh
from helmdd.schwarz import factorize


def _forms(n, k, kind="constant", contrast=1.0):
    mesh = build_unit_square_mesh(n)
    space = build_fe_space(mesh)
    coeff = coefficient_field(mesh, kind, contrast)
    return mesh, space, assemble_forms(mesh, space, coeff, k)


class TestCstab:
    def test_small_k_limit(self):
        _, _, forms = _forms(8, 1e-6)
        lams = scipy.linalg.eigh(
            forms.stiffness.toarray(), forms.mass.toarray(), eigvals_only=True
        )
        assert analysis.estimate_cstab(forms) == pytest.approx(
            1.0 / np.sqrt(lams[0]), rel=1e-6
        )

    def test_upper_bounds_random_and_attained_by_adversarial(self):
        _, space, forms = _forms(8, 7.0)
        est, lams, worst = analysis.estimate_cstab(forms, return_details=True)
        A = forms.stiffness.toarray()
        S = forms.mass.toarray()
        B = forms.helmholtz.toarray()
        Dk = forms.dk.toarray()
        rng = np.random.default_rng(0)
        for _ in range(500):
            c = rng.standard_normal(space.n_dofs)
            u = np.linalg.solve(B, S @ c)
            ratio = np.sqrt(u @ Dk @ u) / np.sqrt(c @ S @ c)
            assert ratio <= est * (1.0 + 1e-10)
        _, phi = scipy.linalg.eigh(A, S)
        c = phi[:, worst]
        u = np.linalg.solve(B, S @ c)
        adv = np.sqrt(u @ Dk @ u) / np.sqrt(c @ S @ c)
        assert adv >= 0.95 * est

    def test_blow_up_near_eigenvalue(self):
        mesh = build_unit_square_mesh(8)
        space = build_fe_space(mesh)
        coeff = coefficient_field(mesh)
        probe = assemble_forms(mesh, space, coeff, 1.0)
        lams = scipy.linalg.eigh(
            probe.stiffness.toarray(), probe.mass.toarray(), eigvals_only=True
        )
        lam = lams[3]
        gap = 1e-3 * lam
        forms = assemble_forms(mesh, space, coeff, np.sqrt(lam - gap))
        est = analysis.estimate_cstab(forms)
        # plug-in arithmetic at the targeted eigenvalue
        expected = np.sqrt(lam + (lam - gap)) / gap
        assert est == pytest.approx(expected, rel=1e-6)
        assert est > 1e3 / lam

    def test_near_resonance_error(self):
        mesh = build_unit_square_mesh(8)
        space = build_fe_space(mesh)
        coeff = coefficient_field(mesh)
        probe = assemble_forms(mesh, space, coeff, 1.0)
        lams = scipy.linalg.eigh(
            probe.stiffness.toarray(), probe.mass.toarray(), eigvals_only=True
        )
        forms = assemble_forms(mesh, space, coeff, np.sqrt(lams[0]))
        with pytest.raises(NearResonanceError):
            analysis.estimate_cstab(forms)


class TestConditions:
    def test_limit_gamma_1_over_52(self):
        rep = analysis.evaluate_conditions(
            k=1.0, hf=0.0, tau=np.inf, lam=1.0, cstab=1.0
        )
        assert rep.s == 0.0
        assert rep.gamma == pytest.approx(1.0 / 52.0, rel=1e-14)
        assert rep.theorem_applicable

    def test_inapplicable_flag(self):
        rep = analysis.evaluate_conditions(
            k=25.0, hf=0.5, tau=1.0, lam=4.0, cstab=5.0
        )
        assert rep.s >= 1.0
        assert rep.gamma <= 0.0
        assert not rep.theorem_applicable

    def test_spreadsheet_recomputation(self):
        k, hf, lam, cstab = 25.0, 0.04, 4.0, 3.0
        tau = 2.0 * (1.0 + cstab) ** 2 * k**2
        rep = analysis.evaluate_conditions(k, hf, tau, lam, cstab)
        # independent recomputation, term by term
        theta = 1.0 / tau
        bracket = 2.0 + 3.0 * lam * lam * lam * lam * theta
        inner = 2.0 * k * np.sqrt(theta) * (1.0 + cstab) + 3.0 * k * hf
        s = 2.0 * lam * lam * bracket * inner
        assert rep.s == pytest.approx(s, rel=1e-14)
        assert rep.gamma == pytest.approx(
            (1.0 - s) / (bracket * (18.0 + 8.0 * 64.0)), rel=1e-14
        )
        assert rep.corollary_hf_k == pytest.approx(1.0)
        assert rep.corollary_tau_ratio == pytest.approx(0.5)
        c = 1.0
        c_small = 2 * 16 * (2 + 3 * 256 * c) * (2 * np.sqrt(c) + 3 * c)
        assert rep.c_small_value == pytest.approx(c_small, rel=1e-14)
        assert not rep.c_small_ok

    def test_determinism(self):
        a = analysis.evaluate_conditions(17.0, 0.1, 123.0, 4.0, 2.5)
        b = analysis.evaluate_conditions(17.0, 0.1, 123.0, 4.0, 2.5)
        assert a.kv_lines() == b.kv_lines()


@pytest.fixture(scope="module")
def gevp_problem():
    mesh = build_unit_square_mesh(16)
    space = build_fe_space(mesh)
    forms = assemble_forms(mesh, space, coefficient_field(mesh), 15.0)
    dec = build_two_level(mesh, space, 2, 2)
    gevps = [assemble_local_gevp(i, forms, dec) for i in range(dec.n_coarse)]
    results = [solve_indefinite_gevp(g) for g in gevps]
    return forms, dec, gevps, results


class TestProjector:
    def test_reproduces_selected_span(self, gevp_problem):
        _, _, gevps, results = gevp_problem
        gevp, res = gevps[0], results[0]
        m_i = res.n_nonpositive + 5
        rng = np.random.default_rng(0)
        coeffs = rng.standard_normal(m_i)
        v = res.eigenvectors[:, :m_i] @ coeffs
        w = projector_apply(gevp, res, m_i, v)
        scale = float(v @ (gevp.dk_mat @ v))
        assert abs(w @ (gevp.b_mat @ w)) <= 1e-10 * scale
        assert abs(w @ (gevp.c_mat @ w)) <= 1e-10 * scale

    def test_all_finite_modes_leaves_kernel_component(self, gevp_problem):
        _, _, gevps, results = gevp_problem
        gevp, res = gevps[1], results[1]
        m_i = res.eigenvalues.size
        rng = np.random.default_rng(1)
        for _ in range(20):
            v = rng.standard_normal(gevp.b_mat.shape[0])
            w = projector_apply(gevp, res, m_i, v)
            # remainder carries no weighted-form energy and stays b-nonnegative
            assert abs(w @ (gevp.c_mat @ w)) <= 1e-8 * float(
                v @ (gevp.dk_mat @ v)
            )
            assert w @ (gevp.b_mat @ w) >= -1e-9 * float(v @ (gevp.dk_mat @ v))

    def test_sweep_zero_violations_k15(self, gevp_problem):
        _, _, gevps, results = gevp_problem
        rng = np.random.default_rng(2)
        for gevp, res in zip(gevps, results):
            m_i = int(np.searchsorted(res.eigenvalues, 0.5))
            chk = analysis.check_projector(gevp, res, m_i, trials=200, rng=rng)
            assert chk.trials == 200
            assert chk.violations == 0, chk
            assert chk.worst_margin >= 0.0

    def test_requires_positive_excluded_eigenvalue(self, gevp_problem):
        _, _, gevps, results = gevp_problem
        with pytest.raises(ValueError):
            analysis.check_projector(gevps[0], results[0], 0, trials=1)


@pytest.fixture(scope="module")
def decomposition_setup():
    mesh = build_unit_square_mesh(32)
    space = build_fe_space(mesh)
    forms = assemble_forms(mesh, space, coefficient_field(mesh), 20.0)
    dec = build_two_level(mesh, space, 2, 8)
    gevps = [assemble_local_gevp(i, forms, dec) for i in range(dec.n_coarse)]
    results = [solve_indefinite_gevp(g) for g in gevps]
    cstab = analysis.estimate_cstab(forms)
    tau_t = 2e-5 * (1.0 + cstab) ** 2 * 400.0
    sel = select_modes(results, tau_t)
    coarse = build_coarse_space(results, sel, dec, forms)
    return forms, dec, gevps, results, sel, coarse


class TestDecompositionLemmas:
    @pytest.fixture
    def setup(self, decomposition_setup):
        return decomposition_setup

    def test_sweep_zero_violations(self, setup):
        forms, dec, gevps, results, sel, _ = setup
        chk = analysis.check_decomposition_lemmas(
            forms, dec, gevps, results, sel, trials=50,
            rng=np.random.default_rng(3),
        )
        assert chk.violations == 0, chk
        assert chk.worst_margin >= 0.0

    def test_single_coarse_column(self, setup):
        forms, dec, gevps, results, sel, coarse = setup
        from helmdd.analysis import _fine_z

        Dk = forms.dk
        n = forms.n_dofs
        for col in (0, coarse.m_total // 2, coarse.m_total - 1):
            v = np.asarray(coarse.Z[:, col].todense()).ravel()
            z0 = np.zeros(n)
            recon = np.zeros(n)
            for i, (g, r, m) in enumerate(
                zip(gevps, results, sel.m_per_subdomain)
            ):
                sub = dec.coarse[i]
                v_c = v[sub.ovdof]
                w_c = projector_apply(g, r, m, v_c)
                _fine_z(dec, forms, i, w_c, accum=recon)
                _fine_z(dec, forms, i, v_c - w_c, accum=z0)
            recon += z0
            assert np.abs(recon - v).max() <= 1e-12 * np.abs(v).max()
            # the splitting nearly reproduces a coarse column (frozen margin)
            rel = np.sqrt(
                float((v - z0) @ (Dk @ (v - z0))) / float(v @ (Dk @ v))
            )
            assert rel <= 0.5


class TestFov:
    def test_exact_solver_gives_ones(self):
        mesh = build_unit_square_mesh(6)
        space = build_fe_space(mesh)
        forms = assemble_forms(mesh, space, coefficient_field(mesh), 2.0)
        dec = build_two_level(mesh, space, 1, 1)
        precond = factorize(forms, dec, None)
        c1, c2 = analysis.fov_bounds(forms, precond, mode="dense")
        assert c1 == pytest.approx(1.0, abs=1e-9)
        assert c2 == pytest.approx(1.0, abs=1e-9)

    def test_sampled_inside_dense(self):
        mesh = build_unit_square_mesh(8)
        space = build_fe_space(mesh)
        forms = assemble_forms(mesh, space, coefficient_field(mesh), 6.0)
        dec = build_two_level(mesh, space, 2, 2)
        precond = factorize(forms, dec, None)
        c1d, c2d = analysis.fov_bounds(forms, precond, mode="dense")
        c1s, c2s = analysis.fov_bounds(
            forms, precond, mode="sampled", samples=200,
            rng=np.random.default_rng(4),
        )
        assert c1s >= c1d - 1e-8
        assert c2s <= c2d + 1e-8

    def test_one_level_high_k_reported_only(self):
        mesh = build_unit_square_mesh(16)
        space = build_fe_space(mesh)
        forms = assemble_forms(mesh, space, coefficient_field(mesh), 10.0)
        dec = build_two_level(mesh, space, 2, 2)
        precond = factorize(forms, dec, None)
        c1, c2 = analysis.fov_bounds(forms, precond, mode="dense")
        # the field of values may touch the origin; only finiteness is claimed
        assert np.isfinite(c1) and np.isfinite(c2) and c2 > 0


class TestLocalSpd:
    def test_small_k_all_spd_with_floor(self):
        mesh = build_unit_square_mesh(8)
        space = build_fe_space(mesh)
        forms = assemble_forms(mesh, space, coefficient_field(mesh), 1.0)
        dec = build_two_level(mesh, space, 2, 2)
        assert dec.Hf * 1.0 < np.sqrt(2.0)
        chk = analysis.check_local_spd(forms, dec)
        assert chk.violations == 0
        for blk in chk.extra["blocks"]:
            assert blk["hypothesis"]
            assert blk["min_eig"] > 0.0
            assert blk["pencil_min"] >= blk["floor"]

    def test_high_k_records_without_assertion(self):
        mesh = build_unit_square_mesh(16)
        space = build_fe_space(mesh)
        forms = assemble_forms(mesh, space, coefficient_field(mesh), 40.0)
        dec = build_two_level(mesh, space, 2, 2)
        chk = analysis.check_local_spd(forms, dec)
        assert chk.violations == 0  # hypothesis fails, nothing asserted
        assert not any(b["hypothesis"] for b in chk.extra["blocks"])
        assert any(b["min_eig"] < 0.0 for b in chk.extra["blocks"])


def test_tf_stability_small_k():
    mesh = build_unit_square_mesh(8)
    space = build_fe_space(mesh)
    forms = assemble_forms(mesh, space, coefficient_field(mesh), 0.5)
    dec = build_two_level(mesh, space, 2, 2)
    assert dec.Hf * 0.5 <= np.sqrt(2.0) / 2.0
    precond = factorize(forms, dec, None)
    chk = analysis.check_tf_stability(
        forms, dec, precond, trials=10, rng=np.random.default_rng(5)
    )
    assert chk.trials == 10 * 16
    assert chk.violations == 0


def test_prop26_check():
    mesh = build_unit_square_mesh(8)
    space = build_fe_space(mesh)
    forms = assemble_forms(mesh, space, coefficient_field(mesh), 5.0)
    dec = build_two_level(mesh, space, 2, 2)
    precond = factorize(forms, dec, None)
    chk = analysis.check_prop26_identity(
        forms, precond, trials=20, rng=np.random.default_rng(6)
    )
    assert chk.violations == 0


def test_theory_report_serialization():
    rep = analysis.evaluate_conditions(10.0, 0.2, 50.0, 4.0, 2.0)
    rep.checks["demo"] = analysis.CheckReport(
        name="demo", trials=5, violations=0, worst_margin=0.25, witness=3
    )
    lines = rep.kv_lines()
    assert any(line.startswith("s=") for line in lines)
    assert any(line.startswith("check.demo=") for line in lines)
    rows = rep.csv_rows()
    assert rows[0] == ("key", "value")
    assert len(rows) == len(lines) + 1
