"""Shipped model instances and trajectory simulation.

Every experiment and test in this package runs against models built here.
The constructors draw fixed random tables from a seed and then *prove* the
two-sided density bounds over the whole theta box (logits are affine in
theta, so per-cell extremes are attained at box corners), refusing to build
a model whose floor underflows.

Registry names:

* ``grid2``: 2 states, 2 symbols, 1 parameter, logistic-cell map. Used for
  hand-checkable tests and the gradient-ascent demo.
* ``grid5``: 5 states, 4 symbols, 3 parameters, softmax tables, seed 7. The
  shared reproducibility anchor for the bias/stability experiments.
* ``interval1``: continuous reference model on [0, 1].

Grid dominating measures here put mass 1/S per state (and 1/A per symbol),
so densities straddle 1 and the declared two-sided floor is roughly 0.5
rather than being capped at 1/S; the stability experiments rely on that
floor being large.
"""

import itertools

import numpy as np
from scipy.special import logsumexp

from . import rng
from .models import (
    ConstructionError,
    GridModel,
    IntervalModel,
    check_theta,
)

P_SIMULATE = 1


def theta_box_corners(theta_box):
    """All corner vertices of the box, plus its centre, as theta probes."""
    box = np.asarray(theta_box, dtype=float)
    corners = [np.array(c) for c in itertools.product(*box.tolist())]
    corners.append(box.mean(axis=1))
    return corners


def _box_logit_extremes(base, coup, theta_box):
    """Per-cell logit min/max over the theta box (affine => corner extremes)."""
    box = np.asarray(theta_box, dtype=float)
    lo = base.copy()
    hi = base.copy()
    for k in range(box.shape[0]):
        a = coup[k] * box[k, 0]
        b = coup[k] * box[k, 1]
        lo += np.minimum(a, b)
        hi += np.maximum(a, b)
    return lo, hi


def _box_density_bounds(base, coup, theta_box, masses):
    """Rigorous two-sided density bounds over the whole theta box, per row."""
    lo, hi = _box_logit_extremes(base, coup, theta_box)
    log_hi_total = logsumexp(hi, axis=-1, keepdims=True)
    log_lo_total = logsumexp(lo, axis=-1, keepdims=True)
    with np.errstate(over="ignore"):
        dens_min = np.exp(lo - log_hi_total) / masses
        dens_max = np.exp(hi - log_lo_total) / masses
    return dens_min, dens_max


def declared_eps(model):
    """Guaranteed two-sided density floor of a grid model over its theta box."""
    pmin, pmax = _box_density_bounds(model.base_trans, model.coup_trans,
                                     model.theta_box, model.masses)
    qmin, qmax = _box_density_bounds(model.base_obs, model.coup_obs,
                                     model.theta_box, model.obs_masses)
    return float(min(pmin.min(), qmin.min(), 1.0 / pmax.max(), 1.0 / qmax.max()))


def make_grid_hmm(S, A, theta_dim, theta_box=None, seed=0, masses=None,
                  obs_masses=None, base_tables=None, base_scale=0.35,
                  coup_scale=0.1, name=None, param_map="softmax-table",
                  floor=1e-12):
    """Build a softmax-parameterized grid model with analytic gradients.

    ``base_tables``, when given, is a dict with any of the keys
    ``base_trans/base_obs/base_init/coup_trans/coup_obs/coup_init``
    overriding the seeded random draws (used for hand-built fixtures).
    Raises :class:`ConstructionError` if any density over the theta box
    can fall to ``floor`` or below, naming the offending cell.
    """
    if S < 2 or A < 2:
        raise ValueError("need at least 2 states and 2 observation symbols")
    if theta_dim < 1:
        raise ValueError("theta_dim must be >= 1")
    box = (np.asarray(theta_box, dtype=float) if theta_box is not None
           else np.tile([-1.0, 1.0], (theta_dim, 1)))
    if box.shape != (theta_dim, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError(f"bad theta box {box!r}")

    gen = rng.stream(seed, purpose=3)
    tables = {
        "base_trans": gen.uniform(-base_scale, base_scale, (S, S)),
        "base_obs": gen.uniform(-base_scale, base_scale, (S, A)),
        "base_init": gen.uniform(-base_scale, base_scale, S),
        "coup_trans": gen.uniform(-coup_scale, coup_scale, (theta_dim, S, S)),
        "coup_obs": gen.uniform(-coup_scale, coup_scale, (theta_dim, S, A)),
        "coup_init": gen.uniform(-coup_scale, coup_scale, (theta_dim, S)),
    }
    if base_tables:
        for key, value in base_tables.items():
            if key not in tables:
                raise ValueError(f"unknown table override {key!r}")
            tables[key] = np.asarray(value, dtype=float)

    if param_map == "logistic-cell":
        # One free logit per row, the other pinned to zero: row probabilities
        # are plain logistic functions of theta.
        for key in ("base_trans", "base_obs", "coup_trans", "coup_obs"):
            tables[key][..., 1:] = 0.0
        tables["base_init"][1:] = 0.0
        tables["coup_init"][:, 1:] = 0.0
    elif param_map != "softmax-table":
        raise ValueError(f"unknown param_map {param_map!r}")

    model = GridModel(
        S=S, A=A, theta_dim=theta_dim, theta_box=box,
        base_trans=tables["base_trans"], base_obs=tables["base_obs"],
        base_init=tables["base_init"], coup_trans=tables["coup_trans"],
        coup_obs=tables["coup_obs"], coup_init=tables["coup_init"],
        masses=(np.ones(S) if masses is None else np.asarray(masses, dtype=float)),
        obs_masses=(np.ones(A) if obs_masses is None
                    else np.asarray(obs_masses, dtype=float)),
        default_theta=box.mean(axis=1),
        name=name or f"grid{S}x{A}d{theta_dim}",
        param_map=param_map,
    )

    for label, base, coup, m in (
        ("transition", model.base_trans, model.coup_trans, model.masses),
        ("emission", model.base_obs, model.coup_obs, model.obs_masses),
        ("initial", model.base_init[None, :], model.coup_init[:, None, :], model.masses[None, :]),
    ):
        dens_min, _ = _box_density_bounds(base, coup, box, m)
        if dens_min.min() <= floor:
            cell = np.unravel_index(np.argmin(dens_min), dens_min.shape)
            raise ConstructionError(
                f"{label} density can underflow the floor {floor:g} over the "
                f"theta box at cell {tuple(int(i) for i in cell)}"
            )
    return model


def make_interval_model(gamma, sigma, theta_dim, seed=0, A=4, drift=0.6,
                        amp_scale=0.08, name=None):
    """Continuous model on [0, 1] with a uniform mixture floor of weight gamma."""
    if not 0.05 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0.05, 1], got {gamma}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gen = rng.stream(seed, purpose=4)
    box = np.tile([-1.0, 1.0], (theta_dim, 1))
    model = IntervalModel(
        gamma=float(gamma), sigma=float(sigma), theta_dim=theta_dim,
        theta_box=box, drift=drift,
        trans_amp=gen.uniform(0.5, 1.0, theta_dim) * amp_scale,
        init_amp=gen.uniform(0.5, 1.0, theta_dim) * amp_scale,
        init_sigma=max(sigma, 0.25),
        A=A,
        obs_base=gen.uniform(-0.4, 0.4, A),
        obs_slope=gen.uniform(-1.0, 1.0, A),
        obs_coup=gen.uniform(-0.5, 0.5, (theta_dim, A)),
        obs_masses=np.full(A, 1.0 / A),
        default_theta=np.zeros(theta_dim),
        name=name or f"interval-g{gamma:g}",
    )
    return model


def simulate(model, theta, n, seed):
    """Draw one trajectory (x_0..x_n, y_0..y_n) from the model law at theta."""
    if n < 0:
        raise ValueError("n must be >= 0")
    theta = check_theta(model, theta)
    gen = rng.stream(seed, purpose=P_SIMULATE)
    x = [model.sample_init(theta, 1, gen)[0]]
    y = [model.sample_obs(theta, np.asarray(x[-1:]), gen)[0]]
    for _ in range(n):
        x.append(model.sample_trans(theta, np.asarray(x[-1:]), gen)[0])
        y.append(model.sample_obs(theta, np.asarray(x[-1:]), gen)[0])
    if model.is_grid:
        return np.array(x, dtype=np.int64), np.array(y, dtype=np.int64)
    return np.array(x, dtype=float), np.array(y, dtype=np.int64)


def _make_grid2():
    base = {
        "base_trans": np.array([[0.8, 0.0], [-0.5, 0.0]]),
        "coup_trans": np.array([[[1.0, 0.0], [0.6, 0.0]]]),
        "base_obs": np.array([[0.9, 0.0], [-0.9, 0.0]]),
        "coup_obs": np.array([[[0.5, 0.0], [-0.5, 0.0]]]),
        "base_init": np.array([0.2, 0.0]),
        "coup_init": np.array([[0.4, 0.0]]),
    }
    model = make_grid_hmm(
        S=2, A=2, theta_dim=1, theta_box=[[-3.0, 3.0]], seed=2,
        masses=np.full(2, 0.5), obs_masses=np.full(2, 0.5),
        base_tables=base, param_map="logistic-cell", name="grid2",
    )
    return _with_default_theta(model, np.array([0.4]))


def _make_grid5():
    model = make_grid_hmm(
        S=5, A=4, theta_dim=3, theta_box=[[-1.0, 1.0]] * 3, seed=7,
        masses=np.full(5, 0.2), obs_masses=np.full(4, 0.25),
        base_scale=0.35, coup_scale=0.1, name="grid5",
    )
    return _with_default_theta(model, np.array([0.3, -0.4, 0.2]))


def _make_interval1():
    return make_interval_model(gamma=0.1, sigma=0.2, theta_dim=2, seed=3,
                               name="interval1")


def _with_default_theta(model, theta):
    import dataclasses

    return dataclasses.replace(model, default_theta=np.asarray(theta, dtype=float))


_REGISTRY = {
    "grid2": _make_grid2,
    "grid5": _make_grid5,
    "interval1": _make_interval1,
}
_CACHE = {}


def available_models():
    return sorted(_REGISTRY)


def get_model(ref):
    """Resolve a registry name or a JSON config file path to a model."""
    if ref in _REGISTRY:
        if ref not in _CACHE:
            _CACHE[ref] = _REGISTRY[ref]()
        return _CACHE[ref]
    import json
    import os

    from .models import from_config

    if os.path.exists(ref):
        with open(ref) as fh:
            return from_config(json.load(fh))
    raise KeyError(f"unknown model {ref!r}; known: {available_models()}")
