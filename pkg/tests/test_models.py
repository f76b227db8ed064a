import dataclasses
import json
import math

import numpy as np
import pytest

from pfgrad.models import (
    DomainError,
    GridModel,
    SingularityError,
    ThetaError,
    check_theta,
    eval_r,
    eval_t,
    from_config,
    grad_consistency_check,
    initial_weight,
    mixing_check,
    to_config,
    validate_normalization,
)
from pfgrad.reference import get_model, make_grid_hmm, theta_box_corners
from pfgrad import rng


def uniform_grid(S=4, A=4, d=2):
    """All-zero logits: uniform tables; masses chosen so densities are 1/S."""
    zeros = {
        "base_trans": np.zeros((S, S)), "base_obs": np.zeros((S, A)),
        "base_init": np.zeros(S),
        "coup_trans": np.zeros((d, S, S)), "coup_obs": np.zeros((d, S, A)),
        "coup_init": np.zeros((d, S)),
    }
    return make_grid_hmm(S=S, A=A, theta_dim=d, seed=0, base_tables=zeros,
                         obs_masses=np.full(A, 1.0 / A))


def test_eval_r_uniform_kernel():
    m = uniform_grid(S=4)
    th = m.default_theta
    # transition density 1/4 (unit state masses), emission density exactly 1
    assert eval_r(m, th, 0, 2, 1) == pytest.approx(0.25, abs=1e-15)


def test_eval_r_hand_product():
    # p(0|0) = 0.9 and q(0|0) = 0.8 via explicit logit ratios
    base = {
        "base_trans": np.array([[math.log(9.0), 0.0], [0.0, 0.0]]),
        "base_obs": np.array([[math.log(4.0), 0.0], [0.0, 0.0]]),
        "base_init": np.zeros(2),
        "coup_trans": np.zeros((1, 2, 2)), "coup_obs": np.zeros((1, 2, 2)),
        "coup_init": np.zeros((1, 2)),
    }
    m = make_grid_hmm(S=2, A=2, theta_dim=1, seed=0, base_tables=base)
    assert eval_r(m, m.default_theta, 0, 0, 0) == pytest.approx(0.72, abs=1e-12)


def test_eval_r_constant_emission_scales_transition():
    m = uniform_grid(S=3, A=2)
    th = np.array([0.1, -0.2])
    p = m.trans_density(th, 1, 2)
    assert eval_r(m, th, 1, 2, 0) == pytest.approx(1.0 * p, rel=1e-14)


def test_eval_r_domain_error():
    m = uniform_grid()
    with pytest.raises(DomainError):
        eval_r(m, m.default_theta, 0, 99, 0)


def test_eval_t_theta_independent_is_zero():
    m = uniform_grid()
    t = eval_t(m, np.array([0.3, 0.1]), 0, 1, 2)
    assert np.all(t == 0.0)


def test_eval_t_logistic_cell():
    base = {
        "base_trans": np.zeros((2, 2)), "base_obs": np.zeros((2, 2)),
        "base_init": np.zeros(2),
        "coup_trans": np.array([[[1.0, 0.0], [0.0, 0.0]]]),
        "coup_obs": np.zeros((1, 2, 2)), "coup_init": np.zeros((1, 2)),
    }
    m = make_grid_hmm(S=2, A=2, theta_dim=1, seed=0, base_tables=base,
                      theta_box=[[-4.0, 4.0]], param_map="logistic-cell")
    theta = np.array([0.7])
    p = m.trans_density(theta, 0, 0)   # logistic in theta
    t = eval_t(m, theta, 0, 0, 1)
    assert t[0] == pytest.approx(1.0 - p, abs=1e-12)


def test_eval_t_matches_finite_difference():
    m = get_model("grid5")
    th = m.default_theta
    h = 1e-6
    for x, xn, y in [(0, 1, 2), (3, 3, 0), (4, 2, 3)]:
        t = eval_t(m, th, x, xn, y)
        for j in range(m.theta_dim):
            tp, tm = th.copy(), th.copy()
            tp[j] += h
            tm[j] -= h
            fd = (math.log(eval_r(m, tp, x, xn, y))
                  - math.log(eval_r(m, tm, x, xn, y))) / (2 * h)
            assert abs(fd - t[j]) / max(1.0, abs(t[j])) < 1e-6


def test_eval_t_singularity():
    m = uniform_grid()
    broken = dataclasses.replace(m, base_obs=np.full((4, 4), 0.0) + np.array(
        [[-800.0, 0, 0, 0]] * 4))
    with pytest.raises(SingularityError):
        eval_t(broken, broken.default_theta, 0, 1, 0)


def test_initial_weight_theta_independent():
    m = uniform_grid()
    assert np.all(initial_weight(m, m.default_theta, 2) == 0.0)


def test_initial_weight_softmax_identity_coupling():
    # coup_init = identity: coordinate j of w at state i is delta_ij - mass_j
    S = 3
    base = {
        "base_trans": np.zeros((S, S)), "base_obs": np.zeros((S, 2)),
        "base_init": np.array([0.2, -0.1, 0.4]),
        "coup_trans": np.zeros((S, S, S)), "coup_obs": np.zeros((S, S, 2)),
        "coup_init": np.eye(S),
    }
    m = make_grid_hmm(S=S, A=2, theta_dim=S, seed=0, base_tables=base)
    th = np.array([0.3, -0.2, 0.1])
    masses = m.init_masses(th)
    for i in range(S):
        w = initial_weight(m, th, i)
        expected = np.eye(S)[:, i] - masses
        np.testing.assert_allclose(w, expected, atol=1e-14)


def test_initial_weight_integrates_to_zero():
    m = get_model("grid5")
    th = m.default_theta
    w = m.init_weight_table(th)
    assert np.abs(w @ m.init_masses(th)).max() < 1e-14


def test_mixing_check_uniform_model_eps_capped_below_one():
    S = 4
    zeros = {
        "base_trans": np.zeros((S, S)), "base_obs": np.zeros((S, S)),
        "base_init": np.zeros(S),
        "coup_trans": np.zeros((1, S, S)), "coup_obs": np.zeros((1, S, S)),
        "coup_init": np.zeros((1, S)),
    }
    m = make_grid_hmm(S=S, A=S, theta_dim=1, seed=0, base_tables=zeros,
                      masses=np.full(S, 1.0 / S), obs_masses=np.full(S, 1.0 / S))
    rep = mixing_check(m, [m.default_theta])
    assert rep.violations == []
    assert rep.eps_hat == pytest.approx(1.0, abs=1e-6)
    assert rep.eps_hat < 1.0


def test_mixing_check_two_state_min_density():
    base = {
        "base_trans": np.log(np.array([[9.0, 1.0], [1.0, 9.0]])),
        "base_obs": np.log(np.array([[9.0, 1.0], [1.0, 9.0]])),
        "base_init": np.zeros(2),
        "coup_trans": np.zeros((1, 2, 2)), "coup_obs": np.zeros((1, 2, 2)),
        "coup_init": np.zeros((1, 2)),
    }
    m = make_grid_hmm(S=2, A=2, theta_dim=1, seed=0, base_tables=base)
    rep = mixing_check(m, [m.default_theta])
    assert rep.eps_hat == pytest.approx(0.1, abs=1e-12)


def test_mixing_check_zero_cell_violation():
    m = uniform_grid(S=2, A=2, d=1)
    bad = dataclasses.replace(
        m, base_trans=np.array([[800.0, -800.0], [0.0, 0.0]]))
    rep = mixing_check(bad, [bad.default_theta])
    assert rep.violations
    assert rep.eps_hat == 0.0


def test_mixing_check_probe_count_exhaustive():
    m = get_model("grid5")
    rep = mixing_check(m, [m.default_theta])
    assert rep.probe_count == m.S * m.S + m.S * m.A


def test_grad_consistency_softmax_model():
    m = get_model("grid5")
    report = grad_consistency_check(m, m.default_theta, h=1e-5)
    assert report.passed
    assert report.max_rel_err < 1e-6


def test_grad_consistency_negative_control():
    m = get_model("grid5")

    class Corrupted(GridModel):
        def trans_grad_table(self, theta):
            g = super().trans_grad_table(theta).copy()
            g[1, 2, 3] += 0.5
            return g

    bad = Corrupted(**{f.name: getattr(m, f.name)
                       for f in dataclasses.fields(m)})
    report = grad_consistency_check(bad, m.default_theta)
    assert not report.passed
    assert report.worst == ("p", (1, 2, 3))


def test_rows_normalize_and_gradient_rows_sum_to_zero():
    m = get_model("grid5")
    for theta in theta_box_corners(m.theta_box):
        p = m.trans_table(theta)
        q = m.obs_table(theta)
        assert np.abs(p @ m.masses - 1.0).max() < 1e-12
        assert np.abs(q @ m.obs_masses - 1.0).max() < 1e-12
        gp = m.trans_grad_table(theta)
        assert np.abs(gp @ m.masses).max() < 1e-10


def test_transition_sampler_matches_density():
    m = get_model("grid5")
    th = m.default_theta
    gen = rng.stream(123, purpose=8)
    n = 10**5
    x_from = np.zeros(n, dtype=np.int64)
    draws = m.sample_trans(th, x_from, gen)
    probs = m.trans_table(th)[0] * m.masses
    for s in range(m.S):
        freq = (draws == s).mean()
        se = math.sqrt(probs[s] * (1 - probs[s]) / n)
        assert abs(freq - probs[s]) < 4 * se


def test_observation_and_initial_samplers_match_densities():
    m = get_model("grid5")
    th = m.default_theta
    n = 10**5
    gen = rng.stream(124, purpose=8)
    obs = m.sample_obs(th, np.full(n, 3, dtype=np.int64), gen)
    obs_probs = m.obs_table(th)[3] * m.obs_masses
    init = m.sample_init(th, n, rng.stream(125, purpose=8))
    init_probs = m.init_masses(th)
    for draws, probs, size in ((obs, obs_probs, m.A), (init, init_probs, m.S)):
        for s in range(size):
            freq = (draws == s).mean()
            se = math.sqrt(probs[s] * (1 - probs[s]) / n)
            assert abs(freq - probs[s]) < 4 * se


def test_interval_observation_sampler_matches_density():
    m = get_model("interval1")
    th = m.default_theta
    n = 10**5
    x = np.full(n, 0.42)
    draws = m.sample_obs(th, x, rng.stream(126, purpose=8))
    probs = m._obs_probs(th, np.array([0.42]))[0]
    for s in range(m.A):
        freq = (draws == s).mean()
        se = math.sqrt(probs[s] * (1 - probs[s]) / n)
        assert abs(freq - probs[s]) < 4 * se


def test_check_theta_errors():
    m = get_model("grid5")
    with pytest.raises(ThetaError):
        check_theta(m, [0.1, 0.2])
    with pytest.raises(ThetaError):
        check_theta(m, [np.inf, 0.0, 0.0])
    with pytest.raises(ThetaError):
        check_theta(m, [1.0, 0.0, 0.0])     # on the open-box boundary
    check_theta(m, [1.0, 0.0, 0.0], closed=True)


def test_config_round_trip_bit_exact():
    for name in ("grid5", "grid2", "interval1"):
        m = get_model(name)
        cfg = to_config(m)
        text = json.dumps(cfg, sort_keys=True)
        m2 = from_config(json.loads(text))
        assert to_config(m2) == cfg
        th = m.default_theta
        if m.is_grid:
            assert np.array_equal(m.trans_table(th), m2.trans_table(th))
            assert np.array_equal(m.obs_grad_table(th), m2.obs_grad_table(th))
        else:
            x = np.linspace(0.1, 0.9, 5)
            assert np.array_equal(m.trans_density(th, x, x[::-1]),
                                  m2.trans_density(th, x, x[::-1]))


def test_loader_validates_structure():
    m = get_model("grid5")
    validate_normalization(m)
    cfg = to_config(m)
    cfg["masses"] = [0.2] * (m.S + 1)        # wrong length
    with pytest.raises(Exception):
        from_config(cfg)
    cfg = to_config(m)
    cfg["obs_masses"] = [-0.25] * m.A        # measure must be positive
    with pytest.raises(Exception):
        from_config(cfg)
