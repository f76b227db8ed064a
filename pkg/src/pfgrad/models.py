"""Parametric state-space models: densities, theta-gradients, samplers.

A model bundles a latent Markov transition density, an observation density,
and an initial law, all parameterized by a d-dimensional theta restricted to
an open box. Two concrete families are provided:

* ``GridModel``: finite state space of S points and a finite observation
  alphabet of A symbols. Transition rows, emission rows and the initial law
  are softmax maps of logits that are affine in theta, so all densities have
  two-sided bounds over the theta box and all gradients are analytic.
* ``IntervalModel``: states in [0, 1] with a mixture transition kernel
  (uniform floor + truncated Gaussian) and quantized softmax emissions, so
  the density floor holds by construction.

Densities are taken with respect to explicit dominating measures: per-point
masses on grids (``masses`` for states, ``obs_masses`` for symbols, with the
initial reference measure equal to the state measure) and Lebesgue measure
on the interval. Samplers draw from density-times-measure and consume
uniforms from a caller-supplied generator in a documented, fixed order, so
trajectories are reproducible across worker schedules.

All evaluators are pure; models are immutable after construction.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

# Densities at or below this are treated as mixing-assumption violations,
# never clamped: the theory requires a strictly positive floor.
DENSITY_FLOOR = 1e-300

# eps_hat must stay strictly inside (0, 1) even for exactly uniform models.
EPS_HAT_TOL = 1e-9


class DomainError(ValueError):
    """A state or observation point lies outside the declared space."""


class SingularityError(ValueError):
    """A log-derivative was requested where the density vanishes."""


class MixingViolationError(RuntimeError):
    """A computation hit a degenerate density that the mixing assumption forbids."""


class ConstructionError(ValueError):
    """Model construction produced tables violating the declared bounds."""


class ThetaError(ValueError):
    """Theta has the wrong dimension, is non-finite, or leaves the theta box."""


class EnumerationLimitError(ValueError):
    """A brute-force enumeration would exceed the configured size guard."""


def check_theta(model, theta, closed=False):
    """Validate theta against the model and return it as a float64 vector.

    The box is open for model evaluation; diagnostics probing the closure
    (e.g. box corners) pass ``closed=True``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.theta_dim,):
        raise ThetaError(
            f"theta has shape {theta.shape}, expected ({model.theta_dim},)"
        )
    if not np.all(np.isfinite(theta)):
        raise ThetaError("theta has non-finite coordinates")
    box = model.theta_box
    if closed:
        inside = np.all(theta >= box[:, 0]) and np.all(theta <= box[:, 1])
    else:
        inside = np.all(theta > box[:, 0]) and np.all(theta < box[:, 1])
    if not inside:
        raise ThetaError(f"theta {theta} outside box {box.tolist()}")
    return theta


def _softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _inverse_cdf(cum, u):
    """Smallest index whose cumulative sum strictly exceeds u (ties go up)."""
    return np.searchsorted(cum, u, side="right")


def _rowwise_inverse_cdf(cum_rows, u):
    """Inverse CDF of ``u[i]`` against ``cum_rows[i]``; same tie rule."""
    return (u[..., None] >= cum_rows).sum(axis=-1)


@dataclass(frozen=True)
class GridModel:
    """Finite state-space model with softmax tables affine in theta.

    Logits for transition row i are ``base_trans[i] + theta @ coup_trans[:, i]``
    (and analogously for emission rows and the initial law); probabilities are
    the row softmax, densities are probabilities divided by the point mass.
    """

    S: int
    A: int
    theta_dim: int
    theta_box: np.ndarray          # (d, 2) open box
    base_trans: np.ndarray         # (S, S) logits
    base_obs: np.ndarray           # (S, A) logits
    base_init: np.ndarray          # (S,) logits
    coup_trans: np.ndarray         # (d, S, S)
    coup_obs: np.ndarray           # (d, S, A)
    coup_init: np.ndarray          # (d, S)
    masses: np.ndarray             # (S,) state measure
    obs_masses: np.ndarray         # (A,) observation measure
    default_theta: np.ndarray
    name: str = "grid"
    param_map: str = "softmax-table"

    kind = "grid"
    is_grid = True

    # -- table evaluators ---------------------------------------------------

    def _probs(self, base, coup, theta):
        logits = base + np.tensordot(theta, coup, axes=(0, 0))
        return _softmax(logits, axis=-1)

    def _probs_grad(self, base, coup, theta):
        """Softmax probabilities and their theta-gradient (d, ...)."""
        s = self._probs(base, coup, theta)
        # d/d theta_k s_j = s_j (C_kj - sum_m s_m C_km), rowwise.
        mean_c = np.sum(s[None, ...] * coup, axis=-1, keepdims=True)
        return s, s[None, ...] * (coup - mean_c)

    def trans_table(self, theta):
        """Transition density p(x'|x) as a (S, S) array, rows = source state."""
        return self._probs(self.base_trans, self.coup_trans, theta) / self.masses

    def trans_grad_table(self, theta):
        _, g = self._probs_grad(self.base_trans, self.coup_trans, theta)
        return g / self.masses

    def obs_table(self, theta):
        """Emission density q(y|x) as a (S, A) array, rows = state."""
        return self._probs(self.base_obs, self.coup_obs, theta) / self.obs_masses

    def obs_grad_table(self, theta):
        _, g = self._probs_grad(self.base_obs, self.coup_obs, theta)
        return g / self.obs_masses

    def init_masses(self, theta):
        """Initial-law probability of each state (masses, not densities)."""
        return self._probs(self.base_init, self.coup_init, theta)

    def init_density_table(self, theta):
        return self.init_masses(theta) / self.masses

    def init_weight_table(self, theta):
        """grad-log initial density per state, (d, S); the reference measure
        is theta-independent so this is the softmax log-gradient."""
        s = self.init_masses(theta)
        return self.coup_init - np.sum(s * self.coup_init, axis=1, keepdims=True)

    # -- pointwise interface ------------------------------------------------

    def _check_states(self, x):
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.equal(np.mod(x, 1), 0)):
                raise DomainError(f"grid states must be integers, got {x}")
            x = x.astype(np.int64)
        if np.any(x < 0) or np.any(x >= self.S):
            raise DomainError(f"state index outside [0, {self.S}): {x}")
        return x

    def _check_obs(self, y):
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DomainError(f"observations must be integers, got {y}")
            y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= self.A):
            raise DomainError(f"observation outside [0, {self.A}): {y}")
        return y

    def trans_density(self, theta, x_from, x_to):
        return self.trans_table(theta)[self._check_states(x_from), self._check_states(x_to)]

    def trans_grad(self, theta, x_from, x_to):
        return self.trans_grad_table(theta)[:, self._check_states(x_from), self._check_states(x_to)]

    def obs_density(self, theta, x, y):
        return self.obs_table(theta)[self._check_states(x), self._check_obs(y)]

    def obs_grad(self, theta, x, y):
        return self.obs_grad_table(theta)[:, self._check_states(x), self._check_obs(y)]

    def init_density(self, theta, x):
        return self.init_density_table(theta)[self._check_states(x)]

    def init_weight(self, theta, x):
        return self.init_weight_table(theta)[:, self._check_states(x)]

    # -- samplers -----------------------------------------------------------
    # Draw layouts (uniforms consumed per call, in order):
    #   sample_init:  N
    #   sample_trans: N (one per source particle)
    #   sample_obs:   N

    def sample_init(self, theta, n, gen):
        cum = np.cumsum(self.init_masses(theta))
        return _inverse_cdf(cum, gen.random(n))

    def sample_trans(self, theta, x_from, gen):
        x_from = self._check_states(x_from)
        cum = np.cumsum(self._probs(self.base_trans, self.coup_trans, theta), axis=1)
        return _rowwise_inverse_cdf(cum[x_from], gen.random(len(x_from)))

    def sample_obs(self, theta, x, gen):
        x = self._check_states(x)
        cum = np.cumsum(self._probs(self.base_obs, self.coup_obs, theta), axis=1)
        return _rowwise_inverse_cdf(cum[x], gen.random(len(x)))


def _trunc_gauss_parts(m, sigma):
    """Normalizer pieces of a Gaussian truncated to [0, 1]."""
    alpha = (0.0 - m) / sigma
    beta = (1.0 - m) / sigma
    z = ndtr(beta) - ndtr(alpha)
    return alpha, beta, z


def _phi(t):
    return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class IntervalModel:
    """States on [0, 1]; mixture kernel with a uniform floor of weight gamma.

    Transition: with probability gamma a uniform draw, otherwise a Gaussian
    of width sigma truncated to [0, 1] and centred at
    ``0.5 + drift*(x-0.5) + sum_k theta_k * trans_amp[k] * cos((k+1) pi x)``.
    The initial law has the same mixture form with centre
    ``0.5 + theta @ init_amp``. Emissions are a finite alphabet with softmax
    logits ``obs_base[a] + obs_slope[a]*x + (theta @ obs_coup[:, a])*x``.
    """

    gamma: float
    sigma: float
    theta_dim: int
    theta_box: np.ndarray
    drift: float
    trans_amp: np.ndarray          # (d,)
    init_amp: np.ndarray           # (d,)
    init_sigma: float
    A: int
    obs_base: np.ndarray           # (A,)
    obs_slope: np.ndarray          # (A,)
    obs_coup: np.ndarray           # (d, A)
    obs_masses: np.ndarray         # (A,)
    default_theta: np.ndarray
    name: str = "interval"

    kind = "interval"
    is_grid = False
    bounds = (0.0, 1.0)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise DomainError(f"state outside [0, 1]: {x}")
        return x

    def _check_obs(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y >= self.A):
            raise DomainError(f"observation outside [0, {self.A}): {y}")
        return y.astype(np.int64)

    def _trans_mean(self, theta, x):
        k = np.arange(1, self.theta_dim + 1)
        basis = np.cos(np.pi * np.multiply.outer(x, k))       # (..., d)
        return 0.5 + self.drift * (x - 0.5) + basis @ (theta * self.trans_amp)

    def _trans_mean_grad(self, x):
        k = np.arange(1, self.theta_dim + 1)
        return np.cos(np.pi * np.multiply.outer(x, k)) * self.trans_amp  # (..., d)

    def _mixture_density(self, m, sigma, x_to):
        _, _, z = _trunc_gauss_parts(m, sigma)
        core = _phi((x_to - m) / sigma) / (sigma * z)
        return self.gamma + (1.0 - self.gamma) * core

    def _mixture_density_mgrad(self, m, sigma, x_to):
        """d/dm of the truncated-Gaussian part (mixture weight applied)."""
        alpha, beta, z = _trunc_gauss_parts(m, sigma)
        core = _phi((x_to - m) / sigma) / (sigma * z)
        dz_dm = -(_phi(beta) - _phi(alpha)) / sigma
        dcore = core * ((x_to - m) / sigma**2 - dz_dm / z)
        return (1.0 - self.gamma) * dcore

    def trans_density(self, theta, x_from, x_to):
        x_from = self._check_x(x_from)
        x_to = self._check_x(x_to)
        m = self._trans_mean(theta, x_from)
        return self._mixture_density(m, self.sigma, x_to)

    def trans_grad(self, theta, x_from, x_to):
        x_from = self._check_x(x_from)
        x_to = self._check_x(x_to)
        m = self._trans_mean(theta, x_from)
        dm = self._mixture_density_mgrad(m, self.sigma, x_to)
        return np.moveaxis(self._trans_mean_grad(x_from) * dm[..., None], -1, 0)

    def _obs_logits(self, theta, x):
        x = np.asarray(x, dtype=float)
        return (
            self.obs_base
            + np.multiply.outer(x, self.obs_slope)
            + np.multiply.outer(x, theta @ self.obs_coup)
        )

    def _obs_probs(self, theta, x):
        return _softmax(self._obs_logits(theta, x), axis=-1)

    def obs_density(self, theta, x, y):
        scalar = np.ndim(x) == 0 and np.ndim(y) == 0
        x = np.atleast_1d(self._check_x(x))
        y = np.broadcast_to(self._check_obs(y), x.shape)
        p = self._obs_probs(theta, x) / self.obs_masses          # (n, A)
        out = p[np.arange(len(x)), y]
        return float(out[0]) if scalar else out

    def obs_grad(self, theta, x, y):
        scalar = np.ndim(x) == 0 and np.ndim(y) == 0
        x = np.atleast_1d(self._check_x(x))
        y = np.broadcast_to(self._check_obs(y), x.shape)
        s = self._obs_probs(theta, x)                            # (n, A)
        coup_x = x[:, None, None] * self.obs_coup                # (n, d, A)
        mean_c = np.sum(s[:, None, :] * coup_x, axis=-1, keepdims=True)
        grad = s[:, None, :] * (coup_x - mean_c) / self.obs_masses
        out = np.moveaxis(grad[np.arange(len(x)), :, y], -1, 0)  # (d, n)
        return out[:, 0] if scalar else out

    def _init_mean(self, theta):
        return 0.5 + float(theta @ self.init_amp)

    def init_density(self, theta, x):
        x = self._check_x(x)
        return self._mixture_density(self._init_mean(theta), self.init_sigma, x)

    def init_weight(self, theta, x):
        x = self._check_x(x)
        l = self.init_density(theta, x)
        dl_dm = self._mixture_density_mgrad(self._init_mean(theta), self.init_sigma, x)
        return np.multiply.outer(self.init_amp, dl_dm / l)

    # -- samplers -----------------------------------------------------------
    # Draw layouts: sample_init and sample_trans consume 2N uniforms
    # (branch then position, interleaved as two blocks); sample_obs consumes N.

    def _sample_mixture(self, m, sigma, gen, n):
        u = gen.random(2 * n)
        branch, pos = u[:n], u[n:]
        alpha, beta, _ = _trunc_gauss_parts(m, sigma)
        lo, hi = ndtr(alpha), ndtr(beta)
        gauss = m + sigma * ndtri(lo + pos * (hi - lo))
        out = np.where(branch < self.gamma, pos, gauss)
        return np.clip(out, 0.0, 1.0)

    def sample_init(self, theta, n, gen):
        m = np.full(n, self._init_mean(theta))
        return self._sample_mixture(m, self.init_sigma, gen, n)

    def sample_trans(self, theta, x_from, gen):
        x_from = self._check_x(x_from)
        m = self._trans_mean(theta, x_from)
        return self._sample_mixture(m, self.sigma, gen, len(x_from))

    def sample_obs(self, theta, x, gen):
        x = self._check_x(x)
        cum = np.cumsum(self._obs_probs(theta, x), axis=-1)
        return _rowwise_inverse_cdf(cum, gen.random(len(x)))


# -- path-functional evaluators (shared by the particle scheme and oracles) --

def eval_r(model, theta, x, x_new, y_prev):
    """One-step path weight: transition density times emission at the source."""
    theta = check_theta(model, theta)
    r = model.trans_density(theta, x, x_new) * model.obs_density(theta, x, y_prev)
    return float(r) if np.ndim(r) == 0 else r


def eval_t(model, theta, x, x_new, y_prev):
    """Gradient of log of the one-step path weight, a theta_dim vector."""
    theta = check_theta(model, theta)
    p = model.trans_density(theta, x, x_new)
    q = model.obs_density(theta, x, y_prev)
    if np.any(p <= DENSITY_FLOOR) or np.any(q <= DENSITY_FLOOR):
        raise SingularityError("log-derivative at a vanishing density")
    return model.trans_grad(theta, x, x_new) / p + model.obs_grad(theta, x, y_prev) / q


def initial_weight(model, theta, x):
    """Gradient of log initial density at x, a theta_dim vector."""
    theta = check_theta(model, theta)
    if np.any(model.init_density(theta, x) <= DENSITY_FLOOR):
        raise SingularityError("initial density vanishes at x")
    return model.init_weight(theta, x)


# -- diagnostics ------------------------------------------------------------

@dataclass
class MixingReport:
    """What the two-sided density bound and gradient bound look like in practice.

    ``eps_hat`` is the largest two-sided floor consistent with every probed
    transition/emission density (zero if any violation was found), ``k_hat``
    the smallest valid gradient bound (at least 1), and ``w_sup`` the largest
    sup-norm of the initial log-gradient over probed states.
    """

    eps_hat: float
    k_hat: float
    w_sup: float
    probe_count: int
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def _theta_grid_probes(model, theta_probes):
    probes = [check_theta(model, t, closed=True) for t in theta_probes]
    if not probes:
        raise ValueError("at least one theta probe is required")
    return probes


def mixing_check(model, theta_probes, point_probes=256, seed=0):
    """Probe the two-sided density bounds and gradient bounds of a model.

    On grid models the scan is exhaustive over every transition and emission
    cell for each theta probe; on interval models ``point_probes`` random
    (x, x', y) triples are drawn per theta probe from ``seed``. Degenerate
    densities are recorded as violations, never raised.
    """
    from . import rng as _rng

    probes = _theta_grid_probes(model, theta_probes)
    eps_cands, grad_mags, w_mags = [], [], []
    violations = []
    count = 0

    for theta in probes:
        if model.is_grid:
            p = model.trans_table(theta)
            q = model.obs_table(theta)
            gp = model.trans_grad_table(theta)
            gq = model.obs_grad_table(theta)
            w = model.init_weight_table(theta)
            cells = [("p", p), ("q", q)]
            count += p.size + q.size
        else:
            gen = _rng.stream(seed, purpose=7)
            x = gen.random(point_probes)
            xn = gen.random(point_probes)
            y = gen.integers(0, model.A, point_probes)
            p = model.trans_density(theta, x, xn)
            q = model.obs_density(theta, x, y)
            gp = model.trans_grad(theta, x, xn)
            gq = model.obs_grad(theta, x, y)
            w = model.init_weight(theta, x)
            cells = [("p", p), ("q", q)]
            count += p.size + q.size
        for label, table in cells:
            bad = ~np.isfinite(table) | (table <= DENSITY_FLOOR)
            if np.any(bad):
                for idx in np.argwhere(bad):
                    violations.append((tuple(theta), label, tuple(idx), float(table[tuple(idx)])))
            else:
                eps_cands.append(min(table.min(), 1.0 / table.max()))
        grad_mags.append(max(np.abs(gp).max(), np.abs(gq).max()))
        w_mags.append(np.abs(w).max())

    if violations:
        eps_hat = 0.0
    else:
        eps_hat = min(min(eps_cands), 1.0 - EPS_HAT_TOL)
    k_hat = max(1.0, float(max(grad_mags)))
    w_sup = float(max(w_mags))
    return MixingReport(eps_hat=float(eps_hat), k_hat=k_hat, w_sup=w_sup,
                        probe_count=count, violations=violations)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst: tuple   # (table, location) of the worst cell
    tolerance: float


def grad_consistency_check(model, theta, h=1e-5, tolerance=1e-5,
                           point_probes=64, seed=0):
    """Compare analytic theta-gradients of p, q, l against central differences.

    Errors are measured relative to max(1, |analytic|). Grid models are probed
    on every cell; interval models on ``point_probes`` random points.
    """
    from . import rng as _rng

    theta = check_theta(model, theta)
    box = model.theta_box
    if np.any(theta - h <= box[:, 0]) or np.any(theta + h >= box[:, 1]):
        raise ThetaError("theta too close to the box boundary for step h")

    if model.is_grid:
        evals = {
            "p": (lambda t: model.trans_table(t), lambda t: model.trans_grad_table(t)),
            "q": (lambda t: model.obs_table(t), lambda t: model.obs_grad_table(t)),
            "l": (lambda t: model.init_density_table(t), lambda t: model.init_weight_table(t) * model.init_density_table(t)),
        }
    else:
        gen = _rng.stream(seed, purpose=9)
        x = gen.random(point_probes)
        xn = gen.random(point_probes)
        y = gen.integers(0, model.A, point_probes)
        evals = {
            "p": (lambda t: model.trans_density(t, x, xn), lambda t: model.trans_grad(t, x, xn)),
            "q": (lambda t: model.obs_density(t, x, y), lambda t: model.obs_grad(t, x, y)),
            "l": (lambda t: model.init_density(t, x), lambda t: model.init_weight(t, x) * model.init_density(t, x)),
        }

    worst_err, worst_loc = 0.0, ("", ())
    for label, (f, g) in evals.items():
        analytic = np.asarray(g(theta))
        for k in range(model.theta_dim):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            fd = (np.asarray(f(tp)) - np.asarray(f(tm))) / (2.0 * h)
            err = np.abs(fd - analytic[k]) / np.maximum(1.0, np.abs(analytic[k]))
            idx = np.unravel_index(np.argmax(err), err.shape)
            if err[idx] > worst_err:
                worst_err = float(err[idx])
                worst_loc = (label, (k,) + tuple(int(i) for i in idx))
    return GradCheckReport(passed=worst_err <= tolerance, max_rel_err=worst_err,
                           worst=worst_loc, tolerance=tolerance)


# -- config round-trip ------------------------------------------------------

def to_config(model):
    """Serialize a model to a JSON-compatible dict (bit-exact round trip)."""
    if model.is_grid:
        return {
            "kind": "grid",
            "name": model.name,
            "states": model.S,
            "obs_alphabet": model.A,
            "theta_dim": model.theta_dim,
            "theta_box": model.theta_box.tolist(),
            "param_map": model.param_map,
            "masses": model.masses.tolist(),
            "obs_masses": model.obs_masses.tolist(),
            "base_trans": model.base_trans.tolist(),
            "base_obs": model.base_obs.tolist(),
            "base_init": model.base_init.tolist(),
            "coup_trans": model.coup_trans.tolist(),
            "coup_obs": model.coup_obs.tolist(),
            "coup_init": model.coup_init.tolist(),
            "default_theta": model.default_theta.tolist(),
        }
    return {
        "kind": "interval",
        "name": model.name,
        "bounds": list(model.bounds),
        "obs_alphabet": model.A,
        "theta_dim": model.theta_dim,
        "theta_box": model.theta_box.tolist(),
        "gamma": model.gamma,
        "sigma": model.sigma,
        "drift": model.drift,
        "trans_amp": model.trans_amp.tolist(),
        "init_amp": model.init_amp.tolist(),
        "init_sigma": model.init_sigma,
        "obs_base": model.obs_base.tolist(),
        "obs_slope": model.obs_slope.tolist(),
        "obs_coup": model.obs_coup.tolist(),
        "obs_masses": model.obs_masses.tolist(),
        "default_theta": model.default_theta.tolist(),
    }


def from_config(cfg):
    """Rebuild a model from :func:`to_config` output, validating normalization."""
    kind = cfg.get("kind")
    if kind == "grid":
        model = GridModel(
            S=int(cfg["states"]),
            A=int(cfg["obs_alphabet"]),
            theta_dim=int(cfg["theta_dim"]),
            theta_box=np.asarray(cfg["theta_box"], dtype=float),
            base_trans=np.asarray(cfg["base_trans"], dtype=float),
            base_obs=np.asarray(cfg["base_obs"], dtype=float),
            base_init=np.asarray(cfg["base_init"], dtype=float),
            coup_trans=np.asarray(cfg["coup_trans"], dtype=float),
            coup_obs=np.asarray(cfg["coup_obs"], dtype=float),
            coup_init=np.asarray(cfg["coup_init"], dtype=float),
            masses=np.asarray(cfg["masses"], dtype=float),
            obs_masses=np.asarray(cfg["obs_masses"], dtype=float),
            default_theta=np.asarray(cfg["default_theta"], dtype=float),
            name=cfg.get("name", "grid"),
            param_map=cfg.get("param_map", "softmax-table"),
        )
    elif kind == "interval":
        model = IntervalModel(
            gamma=float(cfg["gamma"]),
            sigma=float(cfg["sigma"]),
            theta_dim=int(cfg["theta_dim"]),
            theta_box=np.asarray(cfg["theta_box"], dtype=float),
            drift=float(cfg["drift"]),
            trans_amp=np.asarray(cfg["trans_amp"], dtype=float),
            init_amp=np.asarray(cfg["init_amp"], dtype=float),
            init_sigma=float(cfg["init_sigma"]),
            A=int(cfg["obs_alphabet"]),
            obs_base=np.asarray(cfg["obs_base"], dtype=float),
            obs_slope=np.asarray(cfg["obs_slope"], dtype=float),
            obs_coup=np.asarray(cfg["obs_coup"], dtype=float),
            obs_masses=np.asarray(cfg["obs_masses"], dtype=float),
            default_theta=np.asarray(cfg["default_theta"], dtype=float),
            name=cfg.get("name", "interval"),
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    validate_normalization(model)
    return model


def validate_normalization(model, theta=None, tol=1e-9):
    """Check structural sanity and that transition/emission rows integrate
    to 1 under the model measures."""
    if model.is_grid:
        shapes = {
            "base_trans": (model.S, model.S),
            "base_obs": (model.S, model.A),
            "base_init": (model.S,),
            "coup_trans": (model.theta_dim, model.S, model.S),
            "coup_obs": (model.theta_dim, model.S, model.A),
            "coup_init": (model.theta_dim, model.S),
            "masses": (model.S,),
            "obs_masses": (model.A,),
        }
        for name, want in shapes.items():
            got = getattr(model, name).shape
            if got != want:
                raise ConstructionError(f"{name} has shape {got}, expected {want}")
        if np.any(model.masses <= 0) or np.any(model.obs_masses <= 0):
            raise ConstructionError("dominating-measure masses must be positive")
    if model.theta_box.shape != (model.theta_dim, 2) or np.any(
            model.theta_box[:, 0] >= model.theta_box[:, 1]):
        raise ConstructionError("theta box must be (d, 2) with low < high")
    theta = model.default_theta if theta is None else check_theta(model, theta)
    if model.is_grid:
        rows = model.trans_table(theta) @ model.masses
        obs_rows = model.obs_table(theta) @ model.obs_masses
        init_total = model.init_masses(theta).sum()
        worst = max(np.abs(rows - 1.0).max(), np.abs(obs_rows - 1.0).max(),
                    abs(init_total - 1.0))
    else:
        from scipy.integrate import quad

        xs = np.linspace(0.05, 0.95, 4)
        worst = 0.0
        for x in xs:
            total, _ = quad(lambda xn: float(model.trans_density(theta, x, xn)), 0.0, 1.0)
            worst = max(worst, abs(total - 1.0))
        obs_rows = model._obs_probs(theta, xs).sum(axis=-1)
        worst = max(worst, np.abs(obs_rows - 1.0).max())
        total, _ = quad(lambda x: float(model.init_density(theta, x)), 0.0, 1.0)
        worst = max(worst, abs(total - 1.0))
    if worst > tol:
        raise ConstructionError(f"model normalization off by {worst:.3g}")
    return worst
