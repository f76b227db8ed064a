"""Command-line entry point.

Every library operation is exposed as a subcommand; this module only parses
flags, resolves inputs, calls the library, and writes reports. No numeric
logic lives here.

Conventions shared by all subcommands:

* exit 0 on success, 1 when a check-style run fails (mixing violations,
  ratio bounds exceeded), 2 on usage errors;
* ``--seed`` is mandatory wherever randomness is consumed (no wall-clock
  defaults);
* ``--config FILE`` supplies defaults for any flag set; explicit flags win;
* the resolved configuration is echoed to stderr before running;
* ``--out -`` streams the primary CSV to stdout; with a file path, companion
  figures (PNG) and summaries (JSON) are written next to it unless
  ``--no-figures`` is given.
"""

import json
import os
import sys

import click
import numpy as np

from . import biaslab, oracle, ratio, report
from .models import (
    MixingViolationError,
    check_theta,
    grad_consistency_check,
    mixing_check,
    to_config,
)
from .particle import run as particle_run
from .reference import available_models, get_model, simulate, theta_box_corners


def _resolve_theta(model, text):
    if text in (None, "default"):
        return model.default_theta
    return check_theta(model, np.array([float(v) for v in text.split(",")]))


def _parse_int_list(text):
    return [int(v) for v in str(text).split(",")]


def _parse_float_list(text):
    return [float(v) for v in str(text).split(",")]


def _merge_config(ctx, config_path):
    """Fill ctx.params from a JSON config for flags left at their defaults."""
    if not config_path:
        return
    with open(config_path) as fh:
        cfg = json.load(fh)
    for key, value in cfg.items():
        param = key.replace("-", "_")
        if param not in ctx.params:
            raise click.UsageError(f"unknown config key {key!r}")
        src = ctx.get_parameter_source(param)
        if src is None or src.name in ("DEFAULT", "DEFAULT_MAP"):
            ctx.params[param] = value


def _echo_config(ctx):
    resolved = {k: v for k, v in ctx.params.items() if k != "config"}
    click.echo(f"# pf {ctx.info_name} config: "
               + json.dumps(resolved, sort_keys=True, default=str), err=True)


def _emit(out, text_writer, figure_writers=(), no_figures=False):
    """Write the primary CSV (stdout for '-'), then companions beside it."""
    if out == "-":
        sys.stdout.write(text_writer(None))
        return
    text_writer(out)
    if not no_figures:
        stem, _ = os.path.splitext(out)
        for suffix, writer in figure_writers:
            writer(stem + suffix)


def _csv_to(writer_func, *args):
    def inner(path):
        if path is None:
            import io

            buf = io.StringIO()
            writer_func(*args, buf)
            return buf.getvalue()
        writer_func(*args, path)
        return None

    return inner


def _require(ctx, *names):
    for name in names:
        if ctx.params.get(name) is None:
            flag = "--" + name.replace("_", "-").replace("model-ref", "model")
            raise click.UsageError(f"missing required option {flag}")


class _Group(click.Group):
    """Maps check-style library failures to exit code 1 (usage stays 2)."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except MixingViolationError as exc:
            click.echo(f"mixing violation: {exc}", err=True)
            sys.exit(1)


@click.group(cls=_Group)
def main():
    """Particle filter-derivative toolkit: exact oracles, particle runs, and
    bias/stability experiments."""


@main.group()
def model():
    """Inspect the shipped models."""


@model.command("list")
def model_list():
    for name in available_models():
        click.echo(name)


@model.command("show")
@click.argument("name")
def model_show(name):
    click.echo(json.dumps(to_config(get_model(name)), sort_keys=True, indent=2))


@main.command("simulate")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", default="-", show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def simulate_cmd(ctx, model_ref, theta, n, seed, out, config):
    """Draw one trajectory from the model law."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "n", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    x, y = simulate(mdl, th, p["n"], p["seed"])
    _emit(p["out"], _csv_to(report.simulate_to_csv, x, y))


@main.command("oracle")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=None,
              help="Seed for the simulated observation path.")
@click.option("--out", default="-", show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def oracle_cmd(ctx, model_ref, theta, n, seed, out, config):
    """Exact predictor and derivative along a simulated path (grid models)."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "n", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    _, y = simulate(mdl, th, p["n"], p["seed"])
    states = oracle.exact_derivative(mdl, th, y)
    _emit(p["out"], _csv_to(report.oracle_to_csv, states))


@main.command("run")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--particles", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--sim-seed", type=int, default=None,
              help="Seed for the observation path (defaults to --seed).")
@click.option("--w-scale", type=float, default=1.0, show_default=True)
@click.option("--matrices/--no-matrices", default=False, show_default=True)
@click.option("--dump", type=click.Path(), default=None,
              help="Also write the full trajectory as JSON lines.")
@click.option("--out", default="-", show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def run_cmd(ctx, model_ref, theta, particles, n, seed, sim_seed, w_scale,
            matrices, dump, out, config):
    """One particle run along a simulated path; per-step summary CSV."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "particles", "n", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    sim_seed = p["sim_seed"] if p["sim_seed"] is not None else p["seed"]
    _, y = simulate(mdl, th, p["n"], sim_seed)
    traj = particle_run(mdl, th, y, p["particles"], p["seed"],
                        record_matrices=p["matrices"], w_scale=p["w_scale"])
    rows = []
    for k in range(len(traj.clouds)):
        tau = traj.matrices[k - 1].tau if (p["matrices"] and k >= 1) else ""
        rows.append((k, traj.zeta_norms[k], tau))

    def writer(path):
        if path is None:
            import io

            buf = io.StringIO()
            report.write_csv(buf, ["n", "zeta_norm", "tau"], rows)
            return buf.getvalue()
        report.write_csv(path, ["n", "zeta_norm", "tau"], rows)
        return None

    _emit(p["out"], writer)
    if p["dump"]:
        report.trajectory_to_jsonl(traj, p["dump"])


@main.command("bias-sweep")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--n", type=int, default=10, show_default=True)
@click.option("--particles", default="10,20,40,80,160", show_default=True,
              help="Comma list of particle counts.")
@click.option("--reps", type=int, default=50000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--scenario-seed", type=int, default=3, show_default=True,
              help="Seed freezing the shared observation path.")
@click.option("--scenario-file", type=click.Path(exists=True), default=None,
              help="Load the scenario from a file instead of simulating.")
@click.option("--phi", "phi_spec", default="indicators", show_default=True)
@click.option("--threads", type=int, default=None,
              help="Worker processes (default: logical cores).")
@click.option("--out", default="-", show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def bias_sweep_cmd(ctx, model_ref, theta, n, particles, reps, seed,
                   scenario_seed, scenario_file, phi_spec, threads, out,
                   no_figures, config):
    """Bias/L2 sweep against the exact oracle, plus fitted rates."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    if p["scenario_file"]:
        with open(p["scenario_file"]) as fh:
            scenario = biaslab.scenario_from_json(fh.read())
    else:
        scenario = biaslab.make_scenario(p["model_ref"], th, p["n"],
                                         p["scenario_seed"],
                                         phi_spec=p["phi_spec"])
    rows = biaslab.bias_sweep(scenario, _parse_int_list(p["particles"]),
                              p["reps"], p["seed"], threads=p["threads"])
    fits = biaslab.fit_rates(rows)
    figures = [("_bias.png", lambda path: report.figure_bias_sweep(rows, fits, path))]
    _emit(p["out"], _csv_to(report.bias_rows_to_csv, rows), figures,
          p["no_figures"])
    if p["out"] != "-":
        stem = os.path.splitext(p["out"])[0]
        report.write_json(stem + "_slopes.json", fits)
        with open(stem + "_scenario.json", "w") as fh:
            fh.write(biaslab.scenario_to_json(scenario))


@main.command("uniformity")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--particles", type=int, default=40, show_default=True)
@click.option("--n-long", type=int, default=100, show_default=True)
@click.option("--times", default="10,50,100", show_default=True)
@click.option("--reps", type=int, default=50000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", default="-", show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def uniformity_cmd(ctx, model_ref, theta, particles, n_long, times, reps,
                   seed, threads, out, no_figures, config):
    """Bias at several times along one path; uniform-in-time ratios."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    rows, summaries = biaslab.uniformity_check(
        p["model_ref"], th, p["particles"], p["n_long"], p["seed"], p["reps"],
        times=_parse_int_list(p["times"]), threads=p["threads"])
    figures = [("_uniformity.png",
                lambda path: report.figure_uniformity(summaries, path))]
    _emit(p["out"], _csv_to(report.bias_rows_to_csv, rows), figures,
          p["no_figures"])
    if p["out"] != "-":
        report.write_json(os.path.splitext(p["out"])[0] + "_summary.json",
                          summaries)


@main.command("stability")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True)
@click.option("--particles", type=int, default=100, show_default=True)
@click.option("--n-long", type=int, default=500, show_default=True)
@click.option("--w-scales", default="0,1,10,100", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", default="-", show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def stability_cmd(ctx, model_ref, theta, particles, n_long, w_scales, seed,
                  out, no_figures, config):
    """Derivative-size traces under scaled initial weights, with tau(A)."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    traces = biaslab.stability_trace(p["model_ref"], th, p["particles"],
                                     p["n_long"], _parse_float_list(p["w_scales"]),
                                     p["seed"])
    rep = mixing_check(mdl, theta_box_corners(mdl.theta_box) + [th])
    summary = biaslab.stability_summary(traces, rep.eps_hat)
    figures = [("_stability.png",
                lambda path: report.figure_stability(traces, path))]
    _emit(p["out"], _csv_to(report.stability_to_csv, traces), figures,
          p["no_figures"])
    if p["out"] != "-":
        report.write_json(os.path.splitext(p["out"])[0] + "_summary.json",
                          summary)


@main.command("ratio-study")
@click.option("--fixture",
              type=click.Choice(["two-point", "plain-mean", "spread"]),
              default=None,
              help="Named fixture; alternatively give --f/--g/--xi.")
@click.option("--f", "f_vals", default=None, help="Comma list.")
@click.option("--g", "g_vals", default=None, help="Comma list.")
@click.option("--xi", "xi_vals", default=None, help="Comma list.")
@click.option("--k-list", default="1,2,5,10,50,100", show_default=True)
@click.option("--reps", type=int, default=100000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", default="-", show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def ratio_study_cmd(ctx, fixture, f_vals, g_vals, xi_vals, k_list, reps, seed,
                    out, no_figures, config):
    """Empirical-ratio bias/L2 against the 1/k and 1/sqrt(k) bounds."""
    _merge_config(ctx, config)
    _require(ctx, "seed")
    p = ctx.params
    _echo_config(ctx)
    if p["fixture"]:
        f, g, xi = RATIO_FIXTURES[p["fixture"]]
    elif p["f_vals"] and p["g_vals"] and p["xi_vals"]:
        f = _parse_float_list(p["f_vals"])
        g = _parse_float_list(p["g_vals"])
        xi = _parse_float_list(p["xi_vals"])
    else:
        raise click.UsageError("give --fixture or all of --f/--g/--xi")
    study = ratio.ratio_mc_study(f, g, xi, _parse_int_list(p["k_list"]),
                                 p["reps"], p["seed"])
    figures = [("_ratio.png", lambda path: report.figure_ratio_study(study, path))]
    _emit(p["out"], _csv_to(report.ratio_study_to_csv, study), figures,
          p["no_figures"])
    if not study.ok:
        click.echo("ratio bounds violated", err=True)
        sys.exit(1)


@main.command("mixing-check")
@click.option("--model", "model_ref", default=None)
@click.option("--theta", default="default", show_default=True,
              help="Extra probe beyond the theta-box corners.")
@click.option("--point-probes", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--grad-check/--no-grad-check", default=True, show_default=True)
@click.option("--out", default="-", show_default=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def mixing_check_cmd(ctx, model_ref, theta, point_probes, seed, grad_check,
                     out, config):
    """Probe the two-sided density bounds; exit 1 on any violation."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    th = _resolve_theta(mdl, p["theta"])
    rep = mixing_check(mdl, theta_box_corners(mdl.theta_box) + [th],
                       point_probes=p["point_probes"], seed=p["seed"])
    payload = report.mixing_report_payload(rep)
    if p["grad_check"]:
        gc = grad_consistency_check(mdl, th)
        payload["grad_check"] = {"passed": gc.passed,
                                 "max_rel_err": gc.max_rel_err,
                                 "worst": list(map(str, gc.worst))}
    text = json.dumps(payload, sort_keys=True, indent=2)
    if p["out"] == "-":
        click.echo(text)
    else:
        with open(p["out"], "w") as fh:
            fh.write(text + "\n")
    if not rep.ok or (p["grad_check"] and not payload["grad_check"]["passed"]):
        sys.exit(1)


@main.command("rml-demo")
@click.option("--model", "model_ref", default=None)
@click.option("--theta-init", default=None,
              help="Starting parameter (comma list; default: box centre).")
@click.option("--theta-star", default="default", show_default=True,
              help="Data-generating parameter.")
@click.option("--n-obs", type=int, default=10000, show_default=True)
@click.option("--particles", type=int, default=100, show_default=True)
@click.option("--step", "step_size", type=float, default=0.05, show_default=True)
@click.option("--decay", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", default="-", show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def rml_demo_cmd(ctx, model_ref, theta_init, theta_star, n_obs, particles,
                 step_size, decay, seed, out, no_figures, config):
    """Online parameter tracking by predictive-score ascent (demo)."""
    _merge_config(ctx, config)
    _require(ctx, "model_ref", "seed")
    p = ctx.params
    _echo_config(ctx)
    mdl = get_model(p["model_ref"])
    star = _resolve_theta(mdl, p["theta_star"])
    init = (mdl.theta_box.mean(axis=1) if p["theta_init"] is None
            else _resolve_theta(mdl, p["theta_init"]))
    trace, star = biaslab.rml_demo(p["model_ref"], init, p["n_obs"],
                                   p["particles"], p["step_size"], p["seed"],
                                   decay=p["decay"], theta_star=star)
    figures = [("_rml.png", lambda path: report.figure_rml(trace, star, path))]
    _emit(p["out"], _csv_to(report.rml_to_csv, trace), figures,
          p["no_figures"])


RATIO_FIXTURES = {
    "two-point": ([1.0, 0.0], [2.0, 1.0], [0.5, 0.5]),
    "plain-mean": ([1.0, 0.0, 0.5], [1.0, 1.0, 1.0], [0.3, 0.5, 0.2]),
    "spread": ([2.0, 1.0, 0.0, 1.0], [2.0, 0.5, 1.0, 1.5],
               [0.25, 0.25, 0.25, 0.25]),
}


if __name__ == "__main__":
    main()
