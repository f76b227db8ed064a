"""Exact one-step predictor and its theta-derivative on grid models.

Three independent routes to the same objects:

* :func:`exact_filter` / :func:`exact_derivative`: a coupled forward
  recursion. The unnormalized predictor masses and the derivative-numerator
  masses are propagated together and rescaled by the predictor total each
  step; the rescaling cancels in every reported ratio, which is itself a
  regression-tested fact.
* :func:`path_bruteforce`: direct enumeration of all state paths, forming
  the ratio-of-path-sums definition with no recursion at all.
* :func:`fd_derivative`: central finite differences of the exact filter
  across theta coordinates.

Conventions: the step-k predictor conditions on observations up to k-1, so
step 0 is the initial law itself; derivative arrays hold per-state masses,
one row per theta coordinate, each row summing to zero.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .models import EnumerationLimitError, ThetaError, check_theta


@dataclass
class ExactFilterState:
    """Predictor masses P (S,) and derivative masses Q (d, S) at one step."""

    n: int
    P: np.ndarray
    Q: np.ndarray = None
    H_total: np.ndarray = None   # running derivative-numerator total mass (d,)
    H_tv: float = None           # its total-variation size, for growth checks


def _require_grid(model):
    if not getattr(model, "is_grid", False):
        raise TypeError("exact oracles are defined on grid models only")


def grid_tables(model, theta):
    """Tabulated probabilities/gradients used by every oracle route.

    Returns (trans_prob, trans_prob_grad, obs_dens, obs_dens_grad, init_mass,
    init_weight): transition entries are row-stochastic *probabilities*
    (density times destination mass), observation entries are densities.
    """
    _require_grid(model)
    tp = model.trans_table(theta) * model.masses
    gp = model.trans_grad_table(theta) * model.masses
    q = model.obs_table(theta)
    gq = model.obs_grad_table(theta)
    xi = model.init_masses(theta)
    w = model.init_weight_table(theta)
    return tp, gp, q, gq, xi, w


def initial_conditions(model, theta):
    """Initial predictor masses and centered derivative masses (xi, zeta)."""
    _, _, _, _, xi, w = grid_tables(model, theta)
    w_bar = w @ xi
    zeta = (w - w_bar[:, None]) * xi
    return xi, zeta


def exact_derivative(model, theta, y, init_mass=None, init_deriv=None):
    """Run the coupled tangent recursion, one state per observation consumed.

    ``y`` has length n+1 and the returned list has entries for steps 0..n;
    the step-k state conditions on y[0:k]. Custom initial conditions replace
    (xi, zeta) for stability studies.
    """
    theta = check_theta(model, theta)
    y = np.asarray(y)
    tp, gp, q, gq, xi, _ = grid_tables(model, theta)
    d = model.theta_dim

    if init_mass is None:
        fmass, hnum = initial_conditions(model, theta)
    else:
        fmass = np.asarray(init_mass, dtype=float).copy()
        hnum = (np.zeros((d, model.S)) if init_deriv is None
                else np.asarray(init_deriv, dtype=float).copy())

    def snapshot(k, fmass, hnum):
        total = fmass.sum()
        p = fmass / total
        h = hnum.sum(axis=1) / total
        qmass = hnum / total - p[None, :] * h[:, None]
        return ExactFilterState(n=k, P=p, Q=qmass, H_total=h,
                                H_tv=float(np.abs(hnum).sum() / total))

    out = [snapshot(0, fmass, hnum)]
    for k in range(len(y) - 1):
        qd = q[:, y[k]]
        gqd = gq[:, :, y[k]]
        a = fmass * qd
        b = hnum * qd + fmass * gqd
        fmass = a @ tp
        hnum = b @ tp + np.einsum("j,djk->dk", a, gp)
        scale = fmass.sum()
        fmass = fmass / scale
        hnum = hnum / scale
        out.append(snapshot(k + 1, fmass, hnum))
    return out


def exact_filter(model, theta, y, init_mass=None):
    """Predictor-only forward recursion (same stepping as exact_derivative)."""
    theta = check_theta(model, theta)
    y = np.asarray(y)
    tp, _, q, _, xi, _ = grid_tables(model, theta)
    fmass = (xi if init_mass is None else np.asarray(init_mass, dtype=float)).copy()
    fmass = fmass / fmass.sum()
    out = [ExactFilterState(n=0, P=fmass.copy())]
    for k in range(len(y) - 1):
        fmass = (fmass * q[:, y[k]]) @ tp
        fmass = fmass / fmass.sum()
        out.append(ExactFilterState(n=k + 1, P=fmass.copy()))
    return out


def path_bruteforce(model, theta, y, guard=10**6):
    """Final-step (P, Q) by enumerating every state path, no recursion.

    Accumulates the path weight r and the path functional t (initialized at
    the raw initial log-gradient; the centering term cancels in the ratio
    definition) with plain compensated sums, then marginalizes onto the last
    state. Enumeration is refused above ``guard`` paths.
    """
    theta = check_theta(model, theta)
    y = np.asarray(y)
    n = len(y) - 1
    S, d = model.S, model.theta_dim
    if S ** (n + 1) > guard:
        raise EnumerationLimitError(
            f"{S}^{n + 1} paths exceed the enumeration guard {guard}"
        )
    tp, gp, q, gq, xi, w = grid_tables(model, theta)

    r_terms = []
    t_terms = [[] for _ in range(d)]
    p_terms = [[] for _ in range(S)]
    q_terms = [[[] for _ in range(S)] for _ in range(d)]
    for path in itertools.product(range(S), repeat=n + 1):
        weight = xi[path[0]]
        tfun = [w[j, path[0]] for j in range(d)]
        for k in range(1, n + 1):
            x_prev, x_cur = path[k - 1], path[k]
            weight *= tp[x_prev, x_cur] * q[x_prev, y[k - 1]]
            for j in range(d):
                tfun[j] += (gp[j, x_prev, x_cur] / tp[x_prev, x_cur]
                            + gq[j, x_prev, y[k - 1]] / q[x_prev, y[k - 1]])
        r_terms.append(weight)
        p_terms[path[-1]].append(weight)
        for j in range(d):
            t_terms[j].append(weight * tfun[j])
            q_terms[j][path[-1]].append(weight * tfun[j])

    r_bar = math.fsum(r_terms)
    t_bar = np.array([math.fsum(t) for t in t_terms])
    p = np.array([math.fsum(p_terms[s]) for s in range(S)]) / r_bar
    t_mass = np.array([[math.fsum(q_terms[j][s]) for s in range(S)]
                       for j in range(d)]) / r_bar
    q_mass = t_mass - p[None, :] * (t_bar / r_bar)[:, None]
    return p, q_mass


def fd_derivative(model, theta, y, h=1e-5):
    """Central-difference derivative of the exact filter, per step.

    Returns a list of (d, S) arrays aligned with :func:`exact_filter` output.
    """
    theta = check_theta(model, theta)
    box = model.theta_box
    if np.any(theta - h <= box[:, 0]) or np.any(theta + h >= box[:, 1]):
        raise ThetaError("theta +- h leaves the theta box")
    y = np.asarray(y)
    d, S = model.theta_dim, model.S
    out = np.zeros((len(y), d, S))
    for j in range(d):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = exact_filter(model, tp, y)
        fm = exact_filter(model, tm, y)
        for k in range(len(y)):
            out[k, j] = (fp[k].P - fm[k].P) / (2.0 * h)
    return [out[k] for k in range(len(y))]


def tv_norm(masses):
    """Total variation of a (vector) measure given per-state masses.

    Scalar measures: sum of absolute masses. Vector measures (d, S): sum over
    coordinates of the scalar total variation.
    """
    return float(np.abs(np.asarray(masses)).sum())
