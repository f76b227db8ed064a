"""Bias and L2 measurement harness for the particle derivative estimator.

The headline experiment: run many independent particle replicates along one
fixed observation path, compare filter/derivative estimates at recorded
times against the exact grid oracle, and fit how bias and root-mean-square
error shrink with the number of particles.

Replicates are the unit of parallelism. Work is cut into fixed-size chunks
of replicate ids (independent of the worker count), each chunk reduces to
small moment accumulators, and chunk results are combined in chunk order,
so reports are bit-identical for any ``threads`` setting.

The batched runner exploits that on a finite grid the quadratic weight
update assigns the same weight vector to all particles landing on the same
state, so a replicate's weight state collapses to a per-state table. The
sampled particle paths and every estimate are identical (up to summation
grouping) to the direct quadratic scheme in :mod:`pfgrad.particle`, which
the test suite cross-checks; the direct scheme remains the reference
implementation and is still used wherever the transport matrices are needed.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .models import MixingViolationError, check_theta, mixing_check
from .oracle import exact_derivative
from .particle import (
    P_PARTICLE,
    predictive_score,
    run,
    step,
)
from .reference import get_model, simulate, theta_box_corners

# Replicates per work unit; fixed so results do not depend on thread count.
CHUNK = 2048

NOISE_MULT = 3.0


# -- scenarios ----------------------------------------------------------------

@dataclass
class Scenario:
    """A frozen experiment input: model, theta, one observation path, and a
    named set of bounded test functions (tables over grid states)."""

    model_name: str
    theta: np.ndarray
    y: np.ndarray
    phis: dict
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.y) - 1

    def model(self):
        return get_model(self.model_name)


def _parse_phi_spec(model, phi_spec):
    if phi_spec in (None, "indicators"):
        return {f"ind{s}": np.eye(model.S)[s] for s in range(model.S)}
    phis = {}
    for item in str(phi_spec).split(","):
        kind, _, arg = item.strip().partition(":")
        if kind == "indicator":
            s = int(arg)
            if not 0 <= s < model.S:
                raise ValueError(f"indicator state {s} outside grid")
            phis[f"ind{s}"] = np.eye(model.S)[s]
        elif kind == "const":
            phis[f"const{arg}"] = np.clip(float(arg), -1, 1) * np.ones(model.S)
        else:
            raise ValueError(f"unknown test function spec {item!r}")
    return phis


def make_scenario(model_name, theta, n, seed, phi_spec="indicators"):
    """Simulate and freeze one observation path; refuse mixing violations."""
    model = get_model(model_name)
    theta = check_theta(model, theta)
    report = mixing_check(model, theta_box_corners(model.theta_box) + [theta])
    if not report.ok:
        raise MixingViolationError(
            f"model {model_name} violates the mixing bounds: {report.violations[:3]}"
        )
    _, y = simulate(model, theta, n, seed)
    phis = _parse_phi_spec(model, phi_spec)
    for name, table in phis.items():
        if np.abs(table).max() > 1.0 + 1e-12:
            raise ValueError(f"test function {name} exceeds [-1, 1]")
    return Scenario(model_name=model_name, theta=theta, y=np.asarray(y),
                    phis=phis,
                    provenance={"sim_seed": int(seed), "n": int(n),
                                "phi_spec": str(phi_spec)})


def scenario_to_json(scenario):
    payload = {
        "model": scenario.model_name,
        "theta": scenario.theta.tolist(),
        "y": np.asarray(scenario.y).tolist(),
        "phis": {k: v.tolist() for k, v in scenario.phis.items()},
        "provenance": scenario.provenance,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def scenario_from_json(text):
    payload = json.loads(text)
    return Scenario(model_name=payload["model"],
                    theta=np.asarray(payload["theta"], dtype=float),
                    y=np.asarray(payload["y"]),
                    phis={k: np.asarray(v, dtype=float)
                          for k, v in payload["phis"].items()},
                    provenance=payload.get("provenance", {}))


# -- batched grid runner ------------------------------------------------------

def _grid_step_tables(model, theta):
    trans_prob = model._probs(model.base_trans, model.coup_trans, theta)
    return {
        "trans_cum": np.cumsum(trans_prob, axis=1),
        "trans_dens": model.trans_table(theta),
        "trans_grad": model.trans_grad_table(theta),
        "obs_dens": model.obs_table(theta),
        "obs_grad": model.obs_grad_table(theta),
        "init_cum": np.cumsum(model.init_masses(theta)),
        "w_table": model.init_weight_table(theta),
    }


def batch_stats(model, theta, y, n_particles, seed, replicate_ids,
                record_steps, w_scale=1.0):
    """Run a batch of replicates; return per-replicate sufficient statistics.

    For each recorded step k this yields ``counts`` (B, S): particles per
    state, and ``vsum`` (B, d, S): per-state sums of centered weights. Every
    filter or derivative integral of a tabulated test function follows from
    these. Draw-for-draw identical to running :func:`pfgrad.particle.run`
    once per replicate id.
    """
    theta = check_theta(model, theta)
    y = np.asarray(y)
    tables = _grid_step_tables(model, theta)
    n_steps = len(y) - 1
    d, S, N = model.theta_dim, model.S, n_particles
    rids = np.asarray(replicate_ids, dtype=np.int64)
    B = len(rids)
    record_steps = set(int(k) for k in record_steps)
    out = {}

    # step 0: initial draw, weights are the (scaled) initial log-gradient
    states = np.empty((B, N), dtype=np.int64)
    for b, rid in enumerate(rids):
        gen = rng.stream(seed, int(rid), step=0, purpose=P_PARTICLE)
        states[b] = np.searchsorted(tables["init_cum"], gen.random(N),
                                    side="right")
    f_state = np.broadcast_to(w_scale * tables["w_table"], (B, d, S)).copy()

    def record(k):
        counts = np.zeros((B, S))
        for s in range(S):
            counts[:, s] = (states == s).sum(axis=1)
        mean_w = np.einsum("bds,bs->bd", f_state, counts) / N
        vsum = counts[:, None, :] * (f_state - mean_w[:, :, None])
        out[k] = (counts, vsum)

    if 0 in record_steps:
        record(0)

    for k in range(n_steps):
        qd = tables["obs_dens"][:, y[k]]              # (S,)
        qgd = tables["obs_grad"][:, :, y[k]]          # (d, S)
        qv = qd[states]                               # (B, N)
        total = qv.sum(axis=1)
        if np.any(total <= 0) or not np.all(np.isfinite(total)):
            raise MixingViolationError(f"emission weights degenerate at step {k + 1}")
        cum = np.cumsum(qv, axis=1) / total[:, None]

        u = np.empty((B, 2 * N))
        anc = np.empty((B, N), dtype=np.int64)
        for b, rid in enumerate(rids):
            gen = rng.stream(seed, int(rid), step=k + 1, purpose=P_PARTICLE)
            u[b] = gen.random(2 * N)
            anc[b] = np.searchsorted(cum[b], u[b, :N], side="right")
        np.minimum(anc, N - 1, out=anc)
        anc_states = np.take_along_axis(states, anc, axis=1)
        rows = tables["trans_cum"][anc_states]        # (B, N, S)
        new_states = (u[:, N:, None] >= rows).sum(axis=-1)

        # per-old-state aggregates of the weight table
        m0 = np.zeros((B, S))
        for s in range(S):
            m0[:, s] = (states == s).sum(axis=1)
        m1 = m0[:, None, :] * f_state                 # (B, d, S)

        pd, pg = tables["trans_dens"], tables["trans_grad"]
        a0 = m0 * qd                                  # (B, S)
        denom = a0 @ pd                               # (B, S') over new states
        carry = (m1 * qd) @ pd                        # (B, d, S')
        grad = (m0[:, None, :] * qgd) @ pd + np.einsum("bs,dst->bdt", a0, pg)
        f_state = (grad + carry) / denom[:, None, :]
        states = new_states

        if k + 1 in record_steps:
            record(k + 1)
    return out


def stats_to_estimates(counts, vsum, phi, n_particles):
    """Filter and derivative integrals of one test function per replicate."""
    est_f = counts @ phi / n_particles
    est_d = np.einsum("bds,s->bd", vsum, phi) / n_particles
    return est_f, est_d


# -- bias sweep ---------------------------------------------------------------

@dataclass
class BiasRow:
    """One measured target: a test function integrated against the filter or
    one derivative coordinate (or the sup norm over coordinates)."""

    N: int
    n: int
    phi: str
    target: str            # "filter" | "deriv" | "deriv:<j>"
    exact: float
    mean: float
    bias: float
    bias_se: float
    l2: float
    l2_se: float
    reps: int


def _moments(err_sum, err2_sum, err4_sum, reps):
    mean_err = err_sum / reps
    se = math.sqrt(max(err2_sum / reps - mean_err**2, 0.0) / reps)
    m2 = err2_sum / reps
    l2 = math.sqrt(m2)
    var_m2 = max(err4_sum / reps - m2**2, 0.0) / reps
    l2_se = math.sqrt(var_m2) / (2.0 * l2) if l2 > 0 else 0.0
    return mean_err, se, l2, l2_se


def _chunk_accumulate(args):
    (model, theta, y, n_particles, seed, rid_lo, rid_hi, record_steps,
     phis, targets) = args
    stats = batch_stats(model, theta, y, n_particles, seed,
                        np.arange(rid_lo, rid_hi), record_steps)
    acc = {}
    for k, (counts, vsum) in stats.items():
        total_mass = counts.sum(axis=1) / n_particles
        if not np.all(total_mass == 1.0):
            raise AssertionError("empirical filter mass must be exactly 1")
        zeta_mass = np.abs(vsum.sum(axis=2)).max() / n_particles
        if zeta_mass > 1e-12:
            raise AssertionError(f"signed measure total mass {zeta_mass} > 1e-12")
        for name, phi in phis.items():
            est_f, est_d = stats_to_estimates(counts, vsum, phi, n_particles)
            exact_f, exact_d = targets[(k, name)]
            err_f = est_f - exact_f
            err_d = est_d - exact_d[None, :]
            err_max = np.abs(err_d).max(axis=1)
            acc[(k, name)] = {
                "sum_f": np.array([est_f.sum()]),
                "err_f": np.array([err_f.sum(), (err_f**2).sum(),
                                   (err_f**4).sum()]),
                "sum_d": est_d.sum(axis=0),
                "err_d1": err_d.sum(axis=0),
                "err_d2": (err_d**2).sum(axis=0),
                "err_d4": (err_d**4).sum(axis=0),
                "err_max": np.array([(err_max**2).sum(), (err_max**4).sum()]),
            }
    return acc


def _run_chunks(model, theta, y, n_particles, seed, reps, record_steps, phis,
                targets, threads=None):
    bounds = [(lo, min(lo + CHUNK, reps)) for lo in range(0, reps, CHUNK)]
    args = [(model, theta, y, n_particles, seed, lo, hi, tuple(record_steps),
             phis, targets) for lo, hi in bounds]
    if (threads is not None and threads <= 1) or len(args) == 1:
        partials = [_chunk_accumulate(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(_chunk_accumulate, args, chunksize=1))
    total = {}
    for part in partials:                      # fixed chunk order
        for key, vals in part.items():
            if key not in total:
                total[key] = {f: v.copy() for f, v in vals.items()}
            else:
                for f, v in vals.items():
                    total[key][f] += v
    return total


def _exact_targets(model, scenario, record_steps):
    states = exact_derivative(model, scenario.theta, scenario.y)
    targets = {}
    for k in record_steps:
        st = states[k]
        for name, phi in scenario.phis.items():
            targets[(k, name)] = (float(st.P @ phi), st.Q @ phi)
    return targets


def bias_sweep(scenario, n_list, reps, seed, record_times=None, threads=None):
    """Measure bias and L2 error of the particle estimates against the exact
    oracle for each particle count; one fixed observation path throughout.

    Centered error moments are computed per replicate per recorded time
    against the exact filter/derivative integrals, rowed per test function,
    per derivative coordinate, and as the coordinate sup norm.
    """
    model = scenario.model()
    if not model.is_grid:
        raise TypeError("bias measurement needs the exact oracle (grid models)")
    n = scenario.n
    record_steps = sorted(record_times if record_times is not None
                          else {math.ceil(n / 2), n})
    targets = _exact_targets(model, scenario, record_steps)
    d = model.theta_dim

    rows = []
    for n_particles in n_list:
        total = _run_chunks(model, scenario.theta, scenario.y, n_particles,
                            seed, reps, record_steps, scenario.phis, targets,
                            threads)
        for k in record_steps:
            for name in scenario.phis:
                exact_f, exact_d = targets[(k, name)]
                acc = total[(k, name)]
                b, se, l2, l2se = _moments(*acc["err_f"], reps)
                rows.append(BiasRow(n_particles, k, name, "filter", exact_f,
                                    float(acc["sum_f"][0]) / reps,
                                    b, se, l2, l2se, reps))
                comp = []
                for j in range(d):
                    b, se, l2, l2se = _moments(acc["err_d1"][j],
                                               acc["err_d2"][j],
                                               acc["err_d4"][j], reps)
                    comp.append((b, se, l2, l2se))
                    rows.append(BiasRow(n_particles, k, name, f"deriv:{j}",
                                        float(exact_d[j]),
                                        float(acc["sum_d"][j]) / reps,
                                        b, se, l2, l2se, reps))
                # sup-norm aggregate: worst coordinate of the mean error with
                # that coordinate's SE, and the L2 of the sup-norm error
                jmax = int(np.argmax([abs(c[0]) for c in comp]))
                m2 = acc["err_max"][0] / reps
                l2_max = math.sqrt(m2)
                var_m2 = max(acc["err_max"][1] / reps - m2**2, 0.0) / reps
                l2_max_se = (math.sqrt(var_m2) / (2.0 * l2_max)
                             if l2_max > 0 else 0.0)
                rows.append(BiasRow(n_particles, k, name, "deriv",
                                    float(exact_d[jmax]),
                                    float(acc["sum_d"][jmax]) / reps,
                                    comp[jmax][0], comp[jmax][1],
                                    l2_max, l2_max_se, reps))
    return rows


def fit_rates(rows, noise_mult=NOISE_MULT, min_points=4):
    """Least-squares slopes of log bias and log L2 against log N per target.

    Bias points below ``noise_mult`` standard errors are excluded; a target
    with fewer than ``min_points`` resolvable biases is flagged instead of
    fitted. Returns a list of JSON-ready dicts.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.phi, row.target, row.n), []).append(row)
    fits = []
    for (phi, target, n), grp in sorted(groups.items()):
        grp = sorted(grp, key=lambda r: r.N)
        entry = {"phi": phi, "target": target, "n": n,
                 "N": [r.N for r in grp]}
        resolvable = [r for r in grp
                      if abs(r.bias) > noise_mult * r.bias_se and r.bias != 0]
        if len(resolvable) >= min_points:
            x = np.log([r.N for r in resolvable])
            ybias = np.log([abs(r.bias) for r in resolvable])
            entry.update(_ls_fit(x, ybias, "bias_slope"))
        else:
            entry["bias_slope"] = None
            entry["bias_flag"] = "bias below noise floor"
        pos = [r for r in grp if r.l2 > 0]
        if len(pos) >= 2:
            x = np.log([r.N for r in pos])
            yl2 = np.log([r.l2 for r in pos])
            entry.update(_ls_fit(x, yl2, "l2_slope"))
        else:
            entry["l2_slope"] = None
        fits.append(entry)
    return fits


def _ls_fit(x, y, label):
    slope, intercept = np.polyfit(x, y, 1)
    yhat = slope * x + intercept
    ss_res = float(((y - yhat) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {label: float(slope), label.replace("slope", "intercept"): float(intercept),
            label.replace("slope", "r2"): r2}


# -- uniformity in time ---------------------------------------------------------

def uniformity_check(model_name, theta, n_particles, n_long, seed, reps,
                     times=(10, 50, 100), phi_spec="indicators", threads=None,
                     noise_mult=NOISE_MULT):
    """Measure the derivative bias at several times along one path and report
    how much it varies; a uniform-in-time bias keeps the ratios modest.

    Returns (rows, summaries): rows are :class:`BiasRow` entries with N fixed
    and the time index varying; each summary aggregates one (phi, target)
    pair with the max/min |bias| ratio over times above the noise floor and
    the max/min L2 ratio over all recorded times.
    """
    times = sorted(set(int(t) for t in times if t <= n_long) | {int(n_long)})
    scenario = make_scenario(model_name, theta, n_long, seed,
                             phi_spec=phi_spec)
    rows = bias_sweep(scenario, [n_particles], reps, seed,
                      record_times=times, threads=threads)
    groups = {}
    for row in rows:
        groups.setdefault((row.phi, row.target), []).append(row)
    summaries = []
    for (phi, target), grp in sorted(groups.items()):
        grp = sorted(grp, key=lambda r: r.n)
        resolvable = [abs(r.bias) for r in grp
                      if abs(r.bias) > noise_mult * r.bias_se]
        l2s = [r.l2 for r in grp if r.l2 > 0]
        entry = {
            "phi": phi, "target": target,
            "times": [r.n for r in grp],
            "bias": [r.bias for r in grp],
            "bias_se": [r.bias_se for r in grp],
            "l2": [r.l2 for r in grp],
            "resolvable_times": sum(abs(r.bias) > noise_mult * r.bias_se
                                    for r in grp),
            "bias_ratio": (max(resolvable) / min(resolvable)
                           if len(resolvable) == len(grp) else None),
            "l2_ratio": (max(l2s) / min(l2s) if len(l2s) == len(grp) else None),
        }
        summaries.append(entry)
    return rows, summaries


# -- stability traces -----------------------------------------------------------

@dataclass
class StabilityTrace:
    """Per-step record of one scaled-initial-weight run."""

    scale: float
    zeta_norms: np.ndarray     # length n_long + 1
    taus: np.ndarray           # length n_long, tau of each step's A matrix
    a_min: np.ndarray          # length n_long, smallest entry of each A


def stability_trace(model_name, theta, n_particles, n_long, w_scales, seed):
    """Trace the derivative-estimate size and the per-step contraction
    coefficient for several scalings of the initial weight function.

    All scales share the particle paths (sampling never reads the weights),
    which isolates the weight dynamics: the traces must fuse once the scaled
    initial condition has been forgotten.
    """
    model = get_model(model_name)
    theta = check_theta(model, theta)
    _, y = simulate(model, theta, n_long, seed)
    traces = []
    for scale in w_scales:
        traj = run(model, theta, y, n_particles, seed, record_matrices=True,
                   w_scale=float(scale))
        taus = np.array([m.tau for m in traj.matrices])
        a_min = np.array([m.A.min() for m in traj.matrices])
        traces.append(StabilityTrace(scale=float(scale),
                                     zeta_norms=traj.zeta_norms,
                                     taus=taus, a_min=a_min))
    return traces


def stability_summary(traces, eps_hat, agree_tol=0.10):
    """Boundedness and forgetting diagnostics for a set of stability traces.

    Burn-in is the number of steps after which the proven per-step
    contraction (1 - eps^4) has shrunk a hundredfold initial-weight spread
    below the steady level.
    """
    burn_in = int(math.ceil(math.log(100.0) / -math.log1p(-eps_hat**4)))
    per_scale = []
    for tr in traces:
        half = (len(tr.zeta_norms) - 1) // 2
        first = float(tr.zeta_norms[: half + 1].max())
        second = float(tr.zeta_norms[half + 1:].max())
        per_scale.append({
            "scale": tr.scale,
            "first_half_max": first,
            "second_half_max": second,
            "half_ratio": second / first if first > 0 else 0.0,
            "tau_max": float(tr.taus.max()),
            "a_min": float(tr.a_min.min()),
        })
    norms = np.stack([tr.zeta_norms for tr in traces])
    post = norms[:, burn_in:]
    if post.shape[1] == 0:
        max_spread = 0.0   # trace shorter than the burn-in: nothing to compare
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            spread = (post.max(axis=0) - post.min(axis=0)) / post.max(axis=0)
        max_spread = float(np.nan_to_num(spread).max())
    return {
        "burn_in": burn_in,
        "eps_hat": eps_hat,
        "per_scale": per_scale,
        "post_burn_in_steps": int(post.shape[1]),
        "max_relative_spread_after_burn_in": max_spread,
        "agree_tol": agree_tol,
        "agree_ok": bool(max_spread <= agree_tol),
    }


# -- online gradient-ascent demo ------------------------------------------------

def rml_demo(model_name, theta_init, n_obs, n_particles, step_size, seed,
             decay=0.0, theta_star=None):
    """Online gradient ascent on the one-step predictive log-likelihood.

    Observations are simulated at ``theta_star`` (the model default when not
    given); the parameter follows the particle predictive score with step
    sizes ``step_size / (1 + decay * k)`` and is projected back into the
    theta box when it strays (events recorded). A demonstration, not a
    convergence claim.
    """
    import dataclasses

    model = get_model(model_name)
    theta_star = (model.default_theta if theta_star is None
                  else check_theta(model, theta_star))
    theta = check_theta(model, theta_init)
    _, y = simulate(model, theta_star, n_obs, seed)
    from .particle import init_cloud

    cloud = init_cloud(model, theta, n_particles, seed)
    margin = 1e-6
    lo = model.theta_box[:, 0] + margin
    hi = model.theta_box[:, 1] - margin
    trace = []
    for k, obs in enumerate(np.asarray(y)):
        score = predictive_score(cloud, obs)
        gamma = step_size / (1.0 + decay * k)
        proposal = cloud.theta + gamma * score
        clipped = np.clip(proposal, lo, hi)
        projected = bool(np.any(clipped != proposal))
        trace.append({"k": k, "theta": cloud.theta.copy(),
                      "score": score, "projected": projected})
        new_theta = clipped
        if k < len(y) - 1:
            cloud = step(dataclasses.replace(cloud, theta=new_theta), obs)
        else:
            cloud = dataclasses.replace(cloud, theta=new_theta)
    trace.append({"k": len(y), "theta": cloud.theta.copy(),
                  "score": np.zeros(model.theta_dim), "projected": False})
    return trace, theta_star
