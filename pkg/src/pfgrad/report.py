"""Delimited reports and companion figures.

Writers here own the on-disk schemas: every experiment emits CSV (or
JSON-lines for trajectory dumps) with floats rendered via ``repr``, the
shortest round-trip form, so identical results produce identical bytes.
Each report kind has a figure renderer that draws the matching plot next to
the delimited output; rendering is always to files (Agg backend), never to
a window.
"""

import csv
import io
import json

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path_or_file, header, rows):
    """Write rows (iterables of cells) with a fixed header; returns the text
    when given a file-like object, making byte-identity easy to test."""
    if hasattr(path_or_file, "write"):
        _write_csv_stream(path_or_file, header, rows)
        return None
    buf = io.StringIO()
    _write_csv_stream(buf, header, rows)
    text = buf.getvalue()
    with open(path_or_file, "w", newline="") as fh:
        fh.write(text)
    return text


def _write_csv_stream(stream, header, rows):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(c) for c in row])


def write_json(path, payload):
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


# -- schemas ------------------------------------------------------------------

BIAS_HEADER = ["N", "n", "phi", "target", "exact", "mean", "bias", "bias_se",
               "l2", "l2_se", "reps"]


def bias_rows_to_csv(rows, out):
    return write_csv(out, BIAS_HEADER,
                     [(r.N, r.n, r.phi, r.target, r.exact, r.mean, r.bias,
                       r.bias_se, r.l2, r.l2_se, r.reps) for r in rows])


RATIO_HEADER = ["k", "bias", "bias_se", "l2", "l2_se", "bound_bias", "bound_l2"]


def ratio_study_to_csv(study, out):
    return write_csv(out, RATIO_HEADER,
                     [(r.k, r.bias, r.bias_se, r.l2, r.l2_se, r.bound_bias,
                       r.bound_l2) for r in study.rows])


STABILITY_HEADER = ["scale", "n", "zeta_norm", "tau", "a_min"]


def stability_to_csv(traces, out):
    rows = []
    for tr in traces:
        for n, norm in enumerate(tr.zeta_norms):
            tau = tr.taus[n - 1] if n >= 1 else ""
            amin = tr.a_min[n - 1] if n >= 1 else ""
            rows.append((tr.scale, n, norm, tau, amin))
    return write_csv(out, STABILITY_HEADER, rows)


ORACLE_HEADER_BASE = ["n", "state", "P"]


def oracle_to_csv(states, out):
    d = states[0].Q.shape[0] if states[0].Q is not None else 0
    header = ORACLE_HEADER_BASE + [f"Q_{j + 1}" for j in range(d)]
    rows = []
    for st in states:
        for s in range(len(st.P)):
            row = [st.n, s, st.P[s]]
            if d:
                row += [st.Q[j, s] for j in range(d)]
            rows.append(row)
    return write_csv(out, header, rows)


SIMULATE_HEADER = ["n", "x", "y"]


def simulate_to_csv(x, y, out):
    return write_csv(out, SIMULATE_HEADER,
                     [(k, x[k], y[k]) for k in range(len(x))])


def rml_to_csv(trace, out):
    d = len(trace[0]["theta"])
    header = (["k"] + [f"theta_{j + 1}" for j in range(d)]
              + [f"score_{j + 1}" for j in range(d)] + ["projected"])
    rows = []
    for rec in trace:
        rows.append([rec["k"], *rec["theta"], *rec["score"],
                     int(rec["projected"])])
    return write_csv(out, header, rows)


def trajectory_to_jsonl(traj, path):
    """Flag-gated full trajectory dump, one JSON record per step."""
    with open(path, "w") as fh:
        for k, cloud in enumerate(traj.clouds):
            rec = {
                "n": cloud.n,
                "states": np.asarray(cloud.states).tolist(),
                "weights": cloud.weights.tolist(),
                "zeta_norm": float(traj.zeta_norms[k]),
                "tau": (float(traj.matrices[k - 1].tau)
                        if traj.matrices and k >= 1 else None),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def mixing_report_payload(report):
    return {
        "eps_hat": report.eps_hat,
        "k_hat": report.k_hat,
        "w_sup": report.w_sup,
        "probe_count": report.probe_count,
        "violations": [list(map(str, v)) for v in report.violations],
        "ok": report.ok,
    }


# -- figures ------------------------------------------------------------------

def _savefig(fig, path):
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def figure_bias_sweep(rows, fits, path):
    """Log-log bias and L2 against N, one line per resolvable target."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    by_target = {}
    for r in rows:
        by_target.setdefault((r.phi, r.target, r.n), []).append(r)
    fitted = {(f["phi"], f["target"], f["n"]): f for f in fits}
    for key, grp in sorted(by_target.items()):
        if not key[1].startswith("deriv:") and key[1] != "filter":
            continue
        grp = sorted(grp, key=lambda r: r.N)
        ns = [r.N for r in grp]
        fit = fitted.get(key, {})
        if fit.get("bias_slope") is not None:
            axes[0].loglog(ns, [abs(r.bias) for r in grp], "o-", lw=1,
                           label=f"{key[0]}/{key[1]}@n={key[2]}")
        axes[1].loglog(ns, [r.l2 for r in grp], "o-", lw=1)
    for ax, lab in zip(axes, ("|bias|", "L2 error")):
        ax.set_xlabel("particles N")
        ax.set_ylabel(lab)
        ax.grid(True, which="both", alpha=0.3)
    ref_n = np.array(sorted({r.N for r in rows}))
    if len(ref_n):
        top = max((abs(r.bias) for r in rows), default=1.0)
        axes[0].loglog(ref_n, top * ref_n[0] / ref_n, "k--", alpha=0.5,
                       label="slope -1")
        top2 = max((r.l2 for r in rows), default=1.0)
        axes[1].loglog(ref_n, top2 * np.sqrt(ref_n[0] / ref_n), "k--",
                       alpha=0.5, label="slope -1/2")
    if axes[0].get_legend_handles_labels()[0]:
        axes[0].legend(fontsize=6, ncol=2)
    fig.suptitle("particle estimate: bias and L2 vs N")
    return _savefig(fig, path)


def figure_stability(traces, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for tr in traces:
        axes[0].plot(tr.zeta_norms, lw=1, label=f"scale {tr.scale:g}")
        axes[1].plot(np.arange(1, len(tr.taus) + 1), tr.taus, lw=0.8)
    axes[0].set_yscale("symlog", linthresh=1e-3)
    axes[0].set_xlabel("step n")
    axes[0].set_ylabel("derivative-estimate TV size")
    axes[0].legend(fontsize=8)
    axes[1].set_xlabel("step n")
    axes[1].set_ylabel("tau(A_n)")
    axes[1].set_ylim(0, 1)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.suptitle("initial-weight forgetting and per-step contraction")
    return _savefig(fig, path)


def figure_ratio_study(study, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    ks = np.array([r.k for r in study.rows])
    axes[0].plot(ks, [abs(r.bias) * r.k for r in study.rows], "o-",
                 label="|bias| * k")
    axes[0].axhline(2 * study.alpha * study.beta**2, color="k", ls="--",
                    label="bound 2ab^2")
    axes[1].plot(ks, [r.l2 * np.sqrt(r.k) for r in study.rows], "o-",
                 label="L2 * sqrt(k)")
    axes[1].axhline(2 * study.alpha * study.beta, color="k", ls="--",
                    label="bound 2ab")
    for ax in axes:
        ax.set_xscale("log")
        ax.set_xlabel("sample size k")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.suptitle("empirical-ratio error, scaled by the predicted rate")
    return _savefig(fig, path)


def figure_uniformity(summaries, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for s in summaries:
        if s["target"].startswith("deriv:") and s["bias_ratio"] is not None:
            ax.errorbar(s["times"], np.abs(s["bias"]), yerr=s["bias_se"],
                        marker="o", lw=1, capsize=2,
                        label=f"{s['phi']}/{s['target']}")
    ax.set_yscale("log")
    ax.set_xlabel("time n")
    ax.set_ylabel("|bias|")
    ax.grid(True, alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=6, ncol=2)
    fig.suptitle("derivative bias across time (fixed N)")
    return _savefig(fig, path)


def figure_rml(trace, theta_star, path):
    thetas = np.array([rec["theta"] for rec in trace])
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(thetas.shape[1]):
        ax.plot(thetas[:, j], lw=1, label=f"theta_{j + 1}")
        ax.axhline(theta_star[j], color=f"C{j}", ls="--", alpha=0.6)
    ax.set_xlabel("observation k")
    ax.set_ylabel("parameter")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.suptitle("online gradient ascent (dashed: data-generating value)")
    return _savefig(fig, path)
