"""Monte Carlo study of ratios of empirical integrals.

For bounded f and positive bounded g on a finite domain, the ratio of
k-sample empirical means xi_k(f)/xi_k(g) estimates xi(f)/xi(g) with bias
at most 2*alpha*beta^2/k and root-mean-square error at most
2*alpha*beta/sqrt(k), where alpha is the spread of f/g and beta the spread
of g. This module measures both sides: exact alpha/beta on the finite
domain, Monte Carlo bias/L2 with standard errors, and (for tiny domains and
small k) exhaustive outcome enumeration as an independent check.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng

P_RATIO = 5


def alpha_beta(f, g):
    """Exact spread constants of the ratio bound on a finite domain."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.ndim != 1 or f.size == 0:
        raise ValueError("f and g must be equal-length nonempty vectors")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise ValueError("f and g must be finite")
    if np.any(g <= 0):
        raise ValueError("g must be strictly positive")
    h = f / g
    return float(h.max() - h.min()), float(g.max() / g.min())


@dataclass
class RatioRow:
    k: int
    bias: float
    bias_se: float
    l2: float
    l2_se: float
    bound_bias: float
    bound_l2: float

    @property
    def bias_ok(self):
        return abs(self.bias) <= self.bound_bias + 3.0 * self.bias_se

    @property
    def l2_ok(self):
        return self.l2 <= self.bound_l2 + 3.0 * self.l2_se


@dataclass
class RatioStudy:
    alpha: float
    beta: float
    exact_ratio: float
    reps: int
    rows: list = field(default_factory=list)

    @property
    def ok(self):
        return all(r.bias_ok and r.l2_ok for r in self.rows)


def ratio_mc_study(f, g, xi, k_list, reps, seed):
    """Estimate bias and L2 error of the empirical ratio for each sample
    size k, with Monte Carlo standard errors and the theoretical bounds."""
    if reps < 10**4:
        raise ValueError("need at least 1e4 replicates for stable moments")
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != f.shape or np.any(xi < 0):
        raise ValueError("xi must be a nonnegative vector matching f")
    xi = xi / xi.sum()
    alpha, beta = alpha_beta(f, g)
    target = float((xi @ f) / (xi @ g))
    cum = np.cumsum(xi)

    study = RatioStudy(alpha=alpha, beta=beta, exact_ratio=target, reps=reps)
    for k in sorted(int(k) for k in k_list):
        gen = rng.stream(seed, 0, step=k, purpose=P_RATIO)
        idx = np.searchsorted(cum, gen.random((reps, k)), side="right")
        idx = np.minimum(idx, len(f) - 1)
        ratio = f[idx].mean(axis=1) / g[idx].mean(axis=1)
        err = ratio - target
        bias = float(err.mean())
        bias_se = float(err.std(ddof=1) / math.sqrt(reps))
        m2 = float((err**2).mean())
        l2 = math.sqrt(m2)
        var_m2 = max(float((err**4).mean()) - m2**2, 0.0) / reps
        l2_se = math.sqrt(var_m2) / (2.0 * l2) if l2 > 0 else 0.0
        study.rows.append(RatioRow(
            k=k, bias=bias, bias_se=bias_se, l2=l2, l2_se=l2_se,
            bound_bias=2.0 * alpha * beta**2 / k,
            bound_l2=2.0 * alpha * beta / math.sqrt(k),
        ))
    return study


def ratio_enumeration(f, g, xi, k, guard=10**6):
    """Exact bias and L2 of the k-sample empirical ratio by enumerating all
    |domain|^k outcomes; the independent check for tiny cases."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    xi = np.asarray(xi, dtype=float)
    xi = xi / xi.sum()
    m = len(f)
    if m**k > guard:
        raise ValueError(f"{m}^{k} outcomes exceed the enumeration guard")
    target = float((xi @ f) / (xi @ g))
    bias_terms, m2_terms = [], []
    for outcome in itertools.product(range(m), repeat=k):
        idx = list(outcome)
        prob = float(np.prod(xi[idx]))
        err = f[idx].mean() / g[idx].mean() - target
        bias_terms.append(prob * err)
        m2_terms.append(prob * err * err)
    return math.fsum(bias_terms), math.sqrt(math.fsum(m2_terms))
