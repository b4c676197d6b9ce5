"""CSV emission and figure rendering for solver runs and studies.

CSV files are the machine-readable contract (RFC-4180 quoting, header row,
floats written with shortest round-trip repr so identical runs give identical
bytes).  The report path additionally renders matplotlib figures next to the
delimited output; figures are a convenience view and carry no determinism
guarantee.
"""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

RUN_COLUMNS = [
    "k", "n", "N", "sum_Q", "Lambda", "Hf", "tau", "Theta", "sum_m",
    "cstab", "s", "gamma", "iters", "final_resid",
    "t_mesh", "t_assembly", "t_cstab", "t_decomp", "t_gevp", "t_coarse",
    "t_factorize", "t_gmres", "t_checks",
]

STUDY_COLUMNS = (
    ["variant"]
    + [c for c in RUN_COLUMNS if not c.startswith("t_")]
    + ["median_iters", "max_iters", "coarse_fraction"]
)


def format_value(val):
    if val is None:
        return ""
    if isinstance(val, (bool, np.bool_)):
        return str(bool(val))
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    return str(val)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_run_csv(path, row_dict):
    write_csv(path, RUN_COLUMNS, [[row_dict.get(c) for c in RUN_COLUMNS]])


def write_residuals_csv(path, history, envelope=None):
    rows = []
    for m, resid in enumerate(history):
        env = envelope[m] if envelope is not None and m < len(envelope) else None
        rows.append((m, float(resid), env))
    write_csv(path, ["iter", "resid_dk", "envelope"], rows)


def write_spectrum_csv(path, rows):
    write_csv(path, ["subdomain", "index", "lambda", "selected"], rows)


def write_study_csv(path, run_rows, summary):
    rows = []
    for row in run_rows:
        rows.append([row.get(c) for c in STUDY_COLUMNS])
    summary_row = {c: None for c in STUDY_COLUMNS}
    summary_row["variant"] = "summary"
    summary_row.update(summary)
    rows.append([summary_row.get(c) for c in STUDY_COLUMNS])
    write_csv(path, STUDY_COLUMNS, rows)


def write_theory_report(path, lines):
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def residual_figure(path, history, envelope=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    its = np.arange(len(history))
    ax.semilogy(its, history, "o-", ms=3, label="weighted residual")
    if envelope is not None:
        env = np.asarray(envelope, dtype=float)
        positive = env > 0
        ax.semilogy(its[positive], env[positive], "--", label="decay envelope")
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\|r\|_{D_k}$")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def spectrum_figure(path, rows):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    rows = list(rows)
    subs = np.array([r[0] for r in rows])
    lams = np.array([r[2] for r in rows])
    sel = np.array([bool(r[3]) for r in rows])
    ax.plot(subs[~sel], lams[~sel], ".", color="0.6", ms=3, label="excluded")
    if sel.any():
        ax.plot(subs[sel], lams[sel], "r.", ms=4, label="selected")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("coarse subdomain")
    ax.set_ylabel("eigenvalue")
    ax.set_yscale("symlog", linthresh=1.0)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def study_figure(path, run_rows):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    by_variant = {}
    for row in run_rows:
        by_variant.setdefault(row["variant"], []).append(row)
    for variant, rows in sorted(by_variant.items()):
        xs = [r["k"] for r in rows]
        ys = [r["iters"] for r in rows]
        ax.plot(xs, ys, "o-", label=variant)
    ax.set_xlabel("wavenumber k")
    ax.set_ylabel("GMRES iterations")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
