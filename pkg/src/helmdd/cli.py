"""Configuration, single-solve runs, parameter studies and their artifacts.

A run configuration is a flat key=value file plus command-line overrides.
"auto" geometry entries resolve to explicit values before any computation
(points-per-wavelength rule for the mesh, H^f proportional to 1/k for the
coarse grid, tau proportional to (1 + Cstab)^2 k^2) and are echoed to the
output.  Every random sweep is fully determined by the seed.
"""

import argparse
import concurrent.futures
import os
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import analysis, report
from .assembly import assemble_forms, assemble_rhs, coefficient_field
from .decomp import build_two_level
from .eigencoarse import (
    assemble_local_gevp,
    build_coarse_space,
    select_modes,
    solve_indefinite_gevp,
    spectrum_rows,
)
from .errors import ConfigError, NoConvergenceError, SolverError
from .mesh import build_fe_space, build_unit_square_mesh
from .schwarz import ProjectorP, factorize
from .wgmres import weighted_gmres

CHECK_NAMES = (
    "projector",
    "decomposition",
    "local_spd",
    "tf_stability",
    "t0_stability",
    "p_coercivity",
    "prop26",
    "fov_sampled",
    "fov_dense",
)


@dataclass(frozen=True)
class RunConfig:
    k: float = 20.0
    n_per_side: object = "auto"
    coarse_M: object = "auto"
    fine_q: object = "auto"
    layers_c: int = 1
    layers_f: int = 1
    tau_target: object = "auto"
    coefficient: str = "constant"
    contrast: float = 1.0
    coeff_blocks: int = 4
    rhs: str = "gaussian"
    rtol: float = 1e-6
    maxit: int = 1000
    seed: int = 0
    checks: tuple = ()
    one_level: bool = False
    max_modes: object = "half_idof"
    # Auto-rule constants (the scalings fix only proportionality).
    ppw: float = 10.0
    coarse_m_fixed: int = 2
    q_auto_divisor: float = 2.5
    tau_auto_coeff: float = 2e-5
    # Study settings.
    study: str = ""
    ks: tuple = (10.0, 20.0, 40.0)
    tau_multipliers: tuple = (0.25, 1.0, 4.0)
    out_dir: str = "out"
    parallel: bool = False
    plots: bool = True


@dataclass
class RunResult:
    config: RunConfig
    n_per_side: int
    coarse_m: int
    fine_q: int
    n_dofs: int
    lambda_overlap: int
    hf: float
    tau: float
    theta: float
    sum_m: int
    cstab: float
    s: float
    gamma: float
    iterations: int
    converged: bool
    final_resid: float
    unprec_resid: float
    times: dict
    theory: object
    residual_history: np.ndarray
    envelope: object
    spectrum: list

    def run_row(self):
        q = self.fine_q
        n_coarse = self.coarse_m**2
        row = {
            "k": self.config.k,
            "n": self.n_per_side,
            "N": n_coarse,
            "sum_Q": n_coarse * q * q,
            "Lambda": self.lambda_overlap,
            "Hf": self.hf,
            "tau": self.tau,
            "Theta": self.theta,
            "sum_m": self.sum_m,
            "cstab": self.cstab,
            "s": self.s,
            "gamma": self.gamma,
            "iters": self.iterations,
            "final_resid": self.final_resid,
        }
        for name, value in self.times.items():
            row["t_" + name] = value
        return row


def resolve_geometry(config):
    """Resolve the auto rules for the mesh and decomposition sizes.

    The coarse level stays small and fixed (coarse_m_fixed boxes per side,
    the eigenproblem quality does not constrain it), the fine level scales
    with the wavenumber: fine_q targets k / q_auto_divisor so H^f shrinks
    like 1/k, and n_per_side targets ppw points per wavelength, snapped up
    to the next multiple of coarse_M * fine_q.  Returns (n, M, q).
    """
    k = float(config.k)
    if k <= 0:
        raise ConfigError("k must be positive, got %g" % k)

    if config.coarse_M == "auto":
        m = int(config.coarse_m_fixed)
    else:
        m = int(config.coarse_M)
    if m < 1:
        raise ConfigError("coarse_M must be >= 1")

    q_target = None
    if config.fine_q == "auto":
        q_target = max(1, round(k / config.q_auto_divisor))
    else:
        q_target = int(config.fine_q)
        if q_target < 1:
            raise ConfigError("fine_q must be >= 1")

    if config.n_per_side == "auto":
        q = q_target
        lattice = m * q
        n = int(np.ceil(config.ppw * k / (2.0 * np.pi)))
        n = max(n, 2, lattice)
        n = int(np.ceil(n / lattice) * lattice)
    else:
        n = int(config.n_per_side)
        if n % m != 0:
            raise ConfigError(
                "coarse_M=%d must divide n_per_side=%d" % (m, n)
            )
        if config.fine_q == "auto":
            q = _nearest_valid_q(n // m, q_target)
        else:
            q = q_target
        if n % (m * q) != 0:
            raise ConfigError(
                "n_per_side=%d violates the divisibility lattice M*q=%d"
                % (n, m * q)
            )
    return n, m, q


def _nearest_valid_q(width, target):
    candidates = [q for q in range(1, width + 1) if width % q == 0]
    return min(candidates, key=lambda q: (abs(q - target), q))


def _rhs_function(spec, h):
    spec = spec.strip()
    if spec == "constant":
        return lambda x, y: np.ones_like(x)
    if spec.startswith("gaussian"):
        cx, cy, width = 0.5, 0.5, 2.0 * h
        if ":" in spec:
            parts = spec.split(":", 1)[1].split(",")
            if len(parts) != 3:
                raise ConfigError("gaussian rhs wants 'gaussian:cx,cy,width'")
            cx, cy = float(parts[0]), float(parts[1])
            width = 2.0 * h if parts[2] == "auto" else float(parts[2])
        return lambda x, y: np.exp(
            -((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * width**2)
        )
    raise ConfigError("unknown rhs spec %r" % (spec,))


class _Timer:
    def __init__(self):
        self.times = {}

    def measure(self, name):
        return _Phase(self.times, name)


class _Phase:
    def __init__(self, times, name):
        self.times = times
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.times[self.name] = time.perf_counter() - self.t0


def run_single(config, out_dir=None, cstab_known=None):
    """Execute the full pipeline for one configuration.

    Builds mesh, forms, decomposition, local eigenproblems, coarse space and
    preconditioner, runs weighted GMRES and the requested checks, and writes
    run.csv / residuals.csv / spectrum.csv / theory_report.txt (plus figures)
    into ``out_dir`` when given.
    """
    timer = _Timer()
    n, m, q = resolve_geometry(config)
    k = float(config.k)

    with timer.measure("mesh"):
        mesh = build_unit_square_mesh(n)
        space = build_fe_space(mesh)

    with timer.measure("assembly"):
        coeff = coefficient_field(
            mesh, config.coefficient, config.contrast, config.coeff_blocks
        )
        forms = assemble_forms(mesh, space, coeff, k)
        rhs_vec = assemble_rhs(mesh, space, _rhs_function(config.rhs, mesh.h))

    with timer.measure("cstab"):
        cstab = (
            float(cstab_known)
            if cstab_known is not None
            else analysis.estimate_cstab(forms)
        )

    with timer.measure("decomp"):
        dec = build_two_level(mesh, space, m, q, config.layers_c, config.layers_f)

    gevps = []
    results = []
    selection = None
    coarse = None
    spectrum = []
    with timer.measure("gevp"):
        if not config.one_level:
            for i in range(dec.n_coarse):
                gevp = assemble_local_gevp(i, forms, dec)
                gevps.append(gevp)
                results.append(solve_indefinite_gevp(gevp))

    with timer.measure("coarse"):
        if not config.one_level:
            tau_target = config.tau_target
            if tau_target == "auto":
                tau_target = config.tau_auto_coeff * (1.0 + cstab) ** 2 * k**2
            caps = _mode_caps(config, dec)
            selection = select_modes(results, float(tau_target), caps)
            coarse = build_coarse_space(results, selection, dec, forms)
            spectrum = spectrum_rows(results, selection)

    with timer.measure("factorize"):
        precond = factorize(forms, dec, coarse)

    tau = selection.tau if selection is not None else np.nan
    theta = selection.theta if selection is not None else np.nan
    theory = analysis.evaluate_conditions(
        k, dec.Hf, tau if selection is not None else np.inf, dec.Lambda, cstab
    )
    if selection is None:
        theory.tau = np.nan
        theory.theta = np.nan
        theory.s = np.nan
        theory.gamma = np.nan

    gamma_env = None
    if selection is not None and theory.theorem_applicable and theory.gamma > 0:
        gamma_env = theory.gamma

    with timer.measure("gmres"):
        op = lambda v: precond.apply(forms.helmholtz @ v)
        rhs_p = precond.apply(rhs_vec)
        x, rep = weighted_gmres(
            op,
            rhs_p,
            weight=forms.dk,
            rtol=config.rtol,
            maxit=config.maxit,
            gamma=gamma_env,
        )

    with timer.measure("checks"):
        _run_checks(config, forms, dec, gevps, results, selection, coarse,
                    precond, theory)

    rhs_norm = float(np.linalg.norm(rhs_vec))
    unprec = float(
        np.linalg.norm(forms.helmholtz @ x - rhs_vec) / max(rhs_norm, 1e-300)
    )

    result = RunResult(
        config=config,
        n_per_side=n,
        coarse_m=m,
        fine_q=q,
        n_dofs=space.n_dofs,
        lambda_overlap=dec.Lambda,
        hf=dec.Hf,
        tau=tau,
        theta=theta,
        sum_m=coarse.m_total if coarse is not None else 0,
        cstab=cstab,
        s=theory.s,
        gamma=theory.gamma,
        iterations=rep.iterations,
        converged=rep.converged,
        final_resid=float(rep.residual_history[-1] / rep.residual_history[0])
        if rep.residual_history[0] > 0
        else 0.0,
        unprec_resid=unprec,
        times=dict(timer.times),
        theory=theory,
        residual_history=rep.residual_history,
        envelope=rep.elman_envelope,
        spectrum=spectrum,
    )
    if out_dir is not None:
        _write_artifacts(result, out_dir, config.plots)
    return result


def _mode_caps(config, dec):
    if config.max_modes in ("none", None):
        return None
    if config.max_modes == "half_idof":
        return [max(1, sub.idof.size // 2) for sub in dec.coarse]
    cap = int(config.max_modes)
    return [cap] * dec.n_coarse


def _run_checks(config, forms, dec, gevps, results, selection, coarse,
                precond, theory):
    rng = np.random.default_rng(config.seed)
    for name in config.checks:
        if name == "projector" and selection is not None:
            for gevp, res, m_i in zip(
                gevps, results, selection.m_per_subdomain
            ):
                if m_i < res.eigenvalues.size:
                    chk = analysis.check_projector(gevp, res, m_i, rng=rng)
                    theory.checks[chk.name] = chk
        elif name == "decomposition" and selection is not None:
            chk = analysis.check_decomposition_lemmas(
                forms, dec, gevps, results, selection, rng=rng
            )
            theory.checks[chk.name] = chk
        elif name == "local_spd":
            chk = analysis.check_local_spd(forms, dec)
            theory.checks[chk.name] = chk
        elif name == "tf_stability":
            chk = analysis.check_tf_stability(forms, dec, precond, rng=rng)
            theory.checks[chk.name] = chk
        elif name == "t0_stability":
            chk = analysis.check_t0_stability(forms, coarse, precond, theory,
                                              rng=rng)
            theory.checks[chk.name] = chk
        elif name == "p_coercivity":
            projector = ProjectorP(forms, dec, coarse)
            chk = analysis.check_p_coercivity(forms, projector, theory, rng=rng)
            theory.checks[chk.name] = chk
        elif name == "prop26":
            chk = analysis.check_prop26_identity(forms, precond, rng=rng)
            theory.checks[chk.name] = chk
        elif name == "fov_sampled":
            c1, c2 = analysis.fov_bounds(forms, precond, mode="sampled", rng=rng)
            theory.c1_measured = c1
            theory.c2_measured = c2
        elif name == "fov_dense":
            c1, c2 = analysis.fov_bounds(forms, precond, mode="dense")
            theory.c1_measured = c1
            theory.c2_measured = c2
        elif name in CHECK_NAMES:
            continue  # check not applicable to this run (e.g. one-level)
        else:
            raise ConfigError("unknown check name %r" % (name,))


def _config_echo_lines(result):
    config = result.config
    lines = ["resolved.n_per_side=%d" % result.n_per_side,
             "resolved.coarse_M=%d" % result.coarse_m,
             "resolved.fine_q=%d" % result.fine_q,
             "resolved.tau=%r" % (result.tau,),
             "resolved.n_dofs=%d" % result.n_dofs,
             "unpreconditioned_resid=%r" % (result.unprec_resid,),
             "converged=%s" % result.converged,
             "iterations=%d" % result.iterations]
    for f in fields(config):
        lines.append("config.%s=%s" % (f.name, getattr(config, f.name)))
    for name, value in result.times.items():
        lines.append("time.%s=%r" % (name, value))
    return lines


def _write_artifacts(result, out_dir, plots):
    os.makedirs(out_dir, exist_ok=True)
    report.write_run_csv(os.path.join(out_dir, "run.csv"), result.run_row())
    report.write_residuals_csv(
        os.path.join(out_dir, "residuals.csv"),
        result.residual_history,
        result.envelope,
    )
    report.write_spectrum_csv(
        os.path.join(out_dir, "spectrum.csv"), result.spectrum
    )
    lines = result.theory.kv_lines() + _config_echo_lines(result)
    report.write_theory_report(
        os.path.join(out_dir, "theory_report.txt"), lines
    )
    if plots:
        report.residual_figure(
            os.path.join(out_dir, "residuals.png"),
            result.residual_history,
            result.envelope,
        )
        if result.spectrum:
            report.spectrum_figure(
                os.path.join(out_dir, "spectrum.png"), result.spectrum
            )


def _study_jobs(config):
    """Expand a study into (label, config, reuse_cstab_from) triples."""
    jobs = []
    if config.study == "k_scaling":
        for k in config.ks:
            two = replace(config, k=float(k), one_level=False, study="")
            one = replace(config, k=float(k), one_level=True, study="")
            jobs.append(("k%g_two_level" % k, two, None))
            jobs.append(("k%g_one_level" % k, one, len(jobs) - 1))
    elif config.study == "tau_sweep":
        for mult in config.tau_multipliers:
            cfg = replace(
                config,
                tau_auto_coeff=config.tau_auto_coeff * float(mult),
                tau_target="auto",
                one_level=False,
                study="",
            )
            jobs.append(("tau_x%g" % mult, cfg, 0 if jobs else None))
    elif config.study == "one_vs_two_level":
        jobs.append(
            ("two_level", replace(config, one_level=False, study=""), None)
        )
        jobs.append(("one_level", replace(config, one_level=True, study=""), 0))
    else:
        raise ConfigError("unknown study kind %r" % (config.study,))
    return jobs


def _job_worker(args):
    label, cfg, out_dir = args
    try:
        result = run_single(cfg, out_dir=out_dir)
        return label, result, None
    except SolverError as exc:
        return label, None, exc


def run_study(config, out_dir=None):
    """Run a parameter study and aggregate the per-run rows.

    Individual run failures are logged and skipped; the study itself fails
    only when every run failed.  The aggregate study.csv drops the wall-time
    columns so that reruns with the same seed are byte-identical.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    jobs = _study_jobs(config)

    rows = []
    failures = []
    results = [None] * len(jobs)
    if config.parallel:
        work = [
            (label, cfg, os.path.join(out_dir, label)) for label, cfg, _ in jobs
        ]
        with concurrent.futures.ProcessPoolExecutor() as pool:
            outcomes = list(pool.map(_job_worker, work))
        for idx, (label, result, exc) in enumerate(outcomes):
            results[idx] = result
            if exc is not None:
                failures.append((label, exc))
    else:
        for idx, (label, cfg, reuse_from) in enumerate(jobs):
            cstab_known = None
            if reuse_from is not None and results[reuse_from] is not None:
                prev = results[reuse_from]
                if prev.n_per_side == resolve_geometry(cfg)[0]:
                    cstab_known = prev.cstab  # same mesh, same pencil
            try:
                results[idx] = run_single(
                    cfg,
                    out_dir=os.path.join(out_dir, label),
                    cstab_known=cstab_known,
                )
            except SolverError as exc:
                failures.append((label, exc))
                print("study run %s failed: %s" % (label, exc), file=sys.stderr)

    for (label, cfg, _), result in zip(jobs, results):
        if result is None:
            continue
        row = result.run_row()
        row["variant"] = "one_level" if cfg.one_level else "two_level"
        rows.append(row)

    if not rows:
        raise SolverError("every run in the study failed: %s" % (failures,))

    two_level = [r for r in rows if r["variant"] == "two_level"]
    pool_rows = two_level or rows
    iters = np.array([r["iters"] for r in pool_rows], dtype=float)
    # coarse fraction = selected coarse modes over global dofs
    fractions = [r["sum_m"] / float((r["n"] - 1) ** 2) for r in pool_rows]
    summary = {
        "median_iters": float(np.median(iters)),
        "max_iters": int(iters.max()),
        "coarse_fraction": float(np.mean(fractions)),
    }
    report.write_study_csv(os.path.join(out_dir, "study.csv"), rows, summary)
    if config.plots:
        report.study_figure(os.path.join(out_dir, "iterations.png"), rows)
    return rows, summary, failures


def load_config_file(path):
    """Parse a flat key=value configuration file."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(
                    "%s:%d: expected key=value, got %r" % (path, lineno, raw)
                )
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values


_INT_KEYS = {"layers_c", "layers_f", "coeff_blocks", "maxit", "seed",
             "coarse_m_fixed"}
_FLOAT_KEYS = {"k", "contrast", "rtol", "ppw", "q_auto_divisor",
               "tau_auto_coeff"}
_BOOL_KEYS = {"one_level", "parallel", "plots"}
_AUTO_INT_KEYS = {"n_per_side", "coarse_M", "fine_q"}
_AUTO_FLOAT_KEYS = {"tau_target"}
_LIST_KEYS = {"ks", "tau_multipliers"}


def _coerce(key, val):
    if key in _INT_KEYS:
        return int(val)
    if key in _FLOAT_KEYS:
        return float(val)
    if key in _BOOL_KEYS:
        return val.lower() in ("1", "true", "yes", "on")
    if key in _AUTO_INT_KEYS:
        return val if val == "auto" else int(val)
    if key in _AUTO_FLOAT_KEYS:
        return val if val == "auto" else float(val)
    if key in _LIST_KEYS:
        return tuple(float(part) for part in val.split(",") if part)
    if key == "checks":
        return tuple(part.strip() for part in val.split(",") if part.strip())
    if key == "max_modes":
        return val if val in ("half_idof", "none") else int(val)
    return val


def build_config(file_values=None, overrides=None):
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            if key not in known:
                raise ConfigError("unknown configuration key %r" % (key,))
            merged[key] = _coerce(key, val) if isinstance(val, str) else val
    return RunConfig(**merged)


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="helmdd",
        description="Two-level Schwarz Helmholtz solver and study driver",
    )
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--k", type=float)
    parser.add_argument("--n", dest="n_per_side")
    parser.add_argument("--coarse-M", dest="coarse_M")
    parser.add_argument("--fine-q", dest="fine_q")
    parser.add_argument("--layers-c", dest="layers_c", type=int)
    parser.add_argument("--layers-f", dest="layers_f", type=int)
    parser.add_argument("--tau", dest="tau_target")
    parser.add_argument("--tau-auto-coeff", dest="tau_auto_coeff", type=float)
    parser.add_argument("--coefficient")
    parser.add_argument("--contrast", type=float)
    parser.add_argument("--coeff-blocks", dest="coeff_blocks", type=int)
    parser.add_argument("--rhs")
    parser.add_argument("--rtol", type=float)
    parser.add_argument("--maxit", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--checks")
    parser.add_argument("--max-modes", dest="max_modes")
    parser.add_argument("--one-level", dest="one_level", action="store_true",
                        default=None)
    parser.add_argument("--study", choices=("k_scaling", "tau_sweep",
                                            "one_vs_two_level"))
    parser.add_argument("--ks")
    parser.add_argument("--tau-multipliers", dest="tau_multipliers")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--parallel", action="store_true", default=None)
    parser.add_argument("--no-plots", dest="plots", action="store_false",
                        default=None)
    return parser.parse_args(argv)


def main(argv=None):
    args = _parse_args(argv)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {
            key: val
            for key, val in vars(args).items()
            if key != "config" and val is not None
        }
        config = build_config(file_values, overrides)
        if config.study:
            rows, summary, failures = run_study(config)
            print(
                "study %s: %d runs, median two-level iterations %g"
                % (config.study, len(rows), summary["median_iters"])
            )
            for label, exc in failures:
                print("  failed: %s (%s)" % (label, exc), file=sys.stderr)
        else:
            result = run_single(config, out_dir=config.out_dir)
            print(
                "k=%g n=%d M=%d: %d iterations, final residual %.3e"
                % (
                    config.k,
                    result.n_per_side,
                    result.coarse_m,
                    result.iterations,
                    result.final_resid,
                )
            )
            if not result.converged:
                raise NoConvergenceError(
                    "GMRES did not reach rtol=%g within %d iterations"
                    % (config.rtol, config.maxit)
                )
    except SolverError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
