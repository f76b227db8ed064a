"""O(N^2) particle approximation of the predictor and its derivative.

Each particle carries a state and a theta-dimension weight vector. One step
consumes one observation: every new particle picks an ancestor with
probability proportional to the ancestor's emission weight and moves through
the transition kernel, and every new weight is assembled from two ratios of
sums over all N ancestors (gradient term plus weighted average of the old
weights), which is what makes the per-step cost quadratic in N.

The companion matrix view of the same update (column-stochastic transport
matrix A, gradient-source matrix B, with new weights = old weights @ A + B)
is exposed for instrumentation, together with the ergodicity coefficient
of A that controls how fast the weight recursion forgets its initial
condition.

All randomness comes from counter-based streams keyed by
(master seed, replicate, step); a step draws one uniform per particle for
the ancestor choice and then hands the generator to the model kernel
sampler. Clouds are immutable; stepping returns a new cloud.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .models import MixingViolationError, check_theta

P_PARTICLE = 2

# A weight sum whose magnitude falls below this is treated as a mixing
# violation; under a two-sided density floor it cannot occur.
_SUM_FLOOR = 1e-280


@dataclass(frozen=True)
class ParticleCloud:
    """Particle states and weight vectors at one time step.

    ``states`` has shape (N,), ``weights`` (theta_dim, N) with column i the
    weight vector of particle i. ``replicate`` and ``master_seed`` identify
    the random stream; together with ``n`` they are the stream cursor.
    """

    model: object
    theta: np.ndarray
    n: int
    states: np.ndarray
    weights: np.ndarray
    master_seed: int
    replicate: int = 0
    y_consumed: object = None   # observation that produced this cloud
    w_scale: float = 1.0        # scale applied to the initial weight function

    @property
    def n_particles(self):
        return self.states.shape[0]

    @property
    def centered(self):
        """Centered weight columns V = W - mean(W)."""
        return self.weights - self.weights.mean(axis=1, keepdims=True)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atoms, total mass exactly one."""

    atoms: np.ndarray


@dataclass(frozen=True)
class SignedEmpirical:
    """Atoms with vector masses (theta_dim, N); total mass centered to zero."""

    atoms: np.ndarray
    masses: np.ndarray


def init_cloud(model, theta, n_particles, seed, replicate=0, w_scale=1.0):
    """Draw the initial cloud from the model's initial law.

    Weights start at the initial log-density gradient of each particle,
    optionally scaled by ``w_scale`` (the scaled function is still a valid
    bounded initial weight, which is all the stability theory asks of it).
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    theta = check_theta(model, theta)
    gen = rng.stream(seed, replicate, step=0, purpose=P_PARTICLE)
    states = model.sample_init(theta, n_particles, gen)
    weights = w_scale * model.init_weight(theta, states)
    return ParticleCloud(model=model, theta=theta, n=0, states=states,
                         weights=np.ascontiguousarray(weights, dtype=float),
                         master_seed=seed, replicate=replicate,
                         w_scale=w_scale)


def _pairwise_r(model, theta, states_from, states_to, y):
    """r(new|old) = transition density to each new state times the emission
    weight of the old state, as an (N_old, N_new) matrix, plus its gradient."""
    qv = model.obs_density(theta, states_from, y)
    qg = model.obs_grad(theta, states_from, y)
    pmat = model.trans_density(theta, states_from[:, None], states_to[None, :])
    gmat = model.trans_grad(theta, states_from[:, None], states_to[None, :])
    rmat = pmat * qv[:, None]
    grad_rmat = gmat * qv[None, :, None] + pmat[None, :, :] * qg[:, :, None]
    return rmat, grad_rmat, qv, qg


def step(cloud, y):
    """Advance the cloud by one observation.

    New particles are drawn from the emission-weighted kernel mixture
    (ancestor by inverse CDF on normalized emission weights, one uniform per
    particle, lowest index on ties; then kernel propagation). New weights
    apply the quadratic recursion: both ratio terms share the same
    denominator, the sum of r(new_i | old_j) over all ancestors j.
    """
    model, theta = cloud.model, cloud.theta
    states, weights = cloud.states, cloud.weights
    n_new = cloud.n + 1
    gen = rng.stream(cloud.master_seed, cloud.replicate, step=n_new,
                     purpose=P_PARTICLE)

    qv = model.obs_density(theta, states, y)
    total_q = qv.sum()
    if not np.isfinite(total_q) or total_q <= _SUM_FLOOR:
        raise MixingViolationError(
            f"emission weights degenerate at step {n_new} (sum {total_q!r})"
        )
    cum = np.cumsum(qv) / total_q
    ancestors = np.searchsorted(cum, gen.random(cloud.n_particles), side="right")
    ancestors = np.minimum(ancestors, cloud.n_particles - 1)
    new_states = model.sample_trans(theta, states[ancestors], gen)

    rmat, grad_rmat, _, _ = _pairwise_r(model, theta, states, new_states, y)
    denom = rmat.sum(axis=0)
    if np.any(~np.isfinite(denom)) or np.any(denom <= _SUM_FLOOR):
        raise MixingViolationError(f"kernel mixture degenerate at step {n_new}")
    grad_term = grad_rmat.sum(axis=1)
    carry_term = weights @ rmat
    new_weights = (grad_term + carry_term) / denom

    return replace(cloud, n=n_new, states=new_states,
                   weights=new_weights, y_consumed=y)


@dataclass(frozen=True)
class StepMatrices:
    """Transport matrix A (column stochastic), source matrix B, and tau(A)."""

    A: np.ndarray
    B: np.ndarray
    tau: float


def ergodicity_coefficient(a_matrix):
    """Half the largest l1 distance between two columns of a stochastic matrix."""
    a = np.asarray(a_matrix, dtype=float)
    n = a.shape[1]
    worst = 0.0
    block = max(1, int(2**22 // max(1, a.size)))
    for start in range(0, n, block):
        diff = np.abs(a[:, start:start + block, None] - a[:, None, :]).sum(axis=0)
        worst = max(worst, float(diff.max()))
    return 0.5 * worst


def step_matrices(prev_cloud, new_cloud):
    """Matrix form of the transition from prev_cloud to new_cloud.

    Satisfies new.weights == prev.weights @ A + B up to roundoff, which the
    test suite checks at 1e-10.
    """
    if new_cloud.n != prev_cloud.n + 1 or new_cloud.y_consumed is None:
        raise ValueError("new_cloud must be step(prev_cloud, y)")
    rmat, grad_rmat, _, _ = _pairwise_r(prev_cloud.model, prev_cloud.theta,
                                        prev_cloud.states, new_cloud.states,
                                        new_cloud.y_consumed)
    colsum = rmat.sum(axis=0)
    a_matrix = rmat / colsum[None, :]
    b_matrix = grad_rmat.sum(axis=1) / colsum[None, :]
    return StepMatrices(A=a_matrix, B=b_matrix,
                        tau=ergodicity_coefficient(a_matrix))


def filter_measure(cloud):
    return EmpiricalMeasure(atoms=cloud.states.copy())


def deriv_measure(cloud):
    return SignedEmpirical(atoms=cloud.states.copy(),
                           masses=cloud.centered / cloud.n_particles)


def _phi_values(phi, atoms):
    if callable(phi):
        return np.asarray([phi(a) for a in atoms], dtype=float)
    table = np.asarray(phi, dtype=float)
    return table[np.asarray(atoms, dtype=np.int64)]


def integrate(measure, phi):
    """Atom-weighted integral of a test function (table over grid states or
    callable); scalar for plain empirical measures, vector for signed ones."""
    vals = _phi_values(phi, measure.atoms)
    if isinstance(measure, EmpiricalMeasure):
        return float(vals.mean())
    return measure.masses @ vals


def zeta_norm(cloud):
    """Total-variation size of the signed derivative estimate, computed
    atom-wise: mean over particles of the l1 norm of the centered weight."""
    return float(np.abs(cloud.centered).sum() / cloud.n_particles)


def weight_norm(vector):
    """The vector norm used for weights and biases (sup norm)."""
    return float(np.abs(np.asarray(vector)).max())


@dataclass
class CloudTrajectory:
    """A recorded particle run: clouds for steps 0..n plus instrumentation."""

    model: object
    theta: np.ndarray
    y: np.ndarray
    clouds: list
    zeta_norms: np.ndarray
    matrices: list = None

    @property
    def n_steps(self):
        return len(self.clouds) - 1


def run(model, theta, y, n_particles, seed, replicate=0,
        record_matrices=False, w_scale=1.0):
    """Run the particle scheme along a fixed observation path.

    Produces clouds for steps 0..n where n = len(y) - 1; stepping to cloud k
    consumes y[k-1], so the final observation is left for predictive scoring.
    Deterministic in (model, theta, y, n_particles, seed, replicate).
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("observation sequence must be nonempty")
    cloud = init_cloud(model, theta, n_particles, seed, replicate,
                       w_scale=w_scale)
    clouds = [cloud]
    matrices = [] if record_matrices else None
    for k in range(len(y) - 1):
        new_cloud = step(cloud, y[k])
        if record_matrices:
            matrices.append(step_matrices(cloud, new_cloud))
        clouds.append(new_cloud)
        cloud = new_cloud
    norms = np.array([zeta_norm(c) for c in clouds])
    return CloudTrajectory(model=model, theta=theta, y=y, clouds=clouds,
                           zeta_norms=norms, matrices=matrices)


def _centered_u0(cloud):
    """Initial centered weight function u = w - integral of w d(initial law),
    evaluated on the initial particles (grid models use the exact integral)."""
    model, theta = cloud.model, cloud.theta
    if model.is_grid:
        w_bar = model.init_weight_table(theta) @ model.init_masses(theta)
    else:
        from scipy.integrate import quad

        w_bar = np.array([
            quad(lambda x: float(model.init_weight(theta, np.array([x]))[j, 0]
                                 * model.init_density(theta, np.array([x]))[0]),
                 0.0, 1.0)[0]
            for j in range(model.theta_dim)
        ])
    return cloud.weights - (cloud.w_scale * w_bar)[:, None]


def centered_weight_check(trajectory):
    """Verify that centered weights equal the one-step ratio functional
    evaluated on the particles, minus its empirical mean; returns the largest
    absolute deviation over all steps, particles and coordinates.

    Step 0 compares against the centered initial weight; step k >= 1 against
    the ratio of integrals of r and grad-r under the previous step's
    empirical measures.
    """
    model, theta = trajectory.model, trajectory.theta
    worst = 0.0

    cloud0 = trajectory.clouds[0]
    u0 = _centered_u0(cloud0)
    v_hat = u0 - u0.mean(axis=1, keepdims=True)
    worst = max(worst, float(np.abs(cloud0.centered - v_hat).max()))

    for k in range(1, len(trajectory.clouds)):
        prev, cur = trajectory.clouds[k - 1], trajectory.clouds[k]
        n = prev.n_particles
        rmat, grad_rmat, _, _ = _pairwise_r(model, theta, prev.states,
                                            cur.states, cur.y_consumed)
        zeta_int = (prev.centered / n) @ rmat          # (d, N_new)
        xi_grad_int = grad_rmat.sum(axis=1) / n
        xi_int = rmat.sum(axis=0) / n
        v_fun = (zeta_int + xi_grad_int) / xi_int
        v_hat = v_fun - v_fun.mean(axis=1, keepdims=True)
        worst = max(worst, float(np.abs(cur.centered - v_hat).max()))
    return worst


def predictive_score(cloud, y):
    """Particle estimate of the gradient of the one-step predictive
    log-likelihood at observation y."""
    model, theta = cloud.model, cloud.theta
    qv = model.obs_density(theta, cloud.states, y)
    qg = model.obs_grad(theta, cloud.states, y)
    n = cloud.n_particles
    zeta_q = (cloud.centered / n) @ qv
    xi_gq = qg.mean(axis=1)
    xi_q = qv.mean()
    if xi_q <= _SUM_FLOOR:
        raise MixingViolationError("predictive denominator degenerate")
    return (zeta_q + xi_gq) / xi_q
