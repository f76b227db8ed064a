import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr
from scipy.stats import kstest

from pfgrad import rng
from pfgrad.models import (
    ConstructionError,
    grad_consistency_check,
    mixing_check,
)
import pfgrad.models as models_mod
from pfgrad.reference import (
    available_models,
    declared_eps,
    get_model,
    make_grid_hmm,
    make_interval_model,
    simulate,
    theta_box_corners,
)


def test_symmetric_logits_doubly_stochastic_at_zero():
    base = {
        "base_trans": np.array([[0.4, -0.3], [-0.3, 0.4]]),
        "base_obs": np.array([[0.2, -0.2], [-0.2, 0.2]]),
        "base_init": np.zeros(2),
        "coup_trans": np.full((1, 2, 2), 0.1), "coup_obs": np.zeros((1, 2, 2)),
        "coup_init": np.zeros((1, 2)),
    }
    m = make_grid_hmm(S=2, A=2, theta_dim=1, seed=0, base_tables=base)
    probs = m.trans_table(np.zeros(1)) * m.masses
    np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-14)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-14)


def test_grid5_mixing_matches_table_minimum():
    m = make_grid_hmm(S=5, A=4, theta_dim=3, seed=7)
    probes = [m.default_theta]
    rep = mixing_check(m, probes)
    p = m.trans_table(m.default_theta)
    q = m.obs_table(m.default_theta)
    truth = min(p.min(), q.min(), 1.0 / p.max(), 1.0 / q.max())
    assert rep.eps_hat == pytest.approx(truth, abs=1e-15)


def test_corner_thetas_within_declared_bounds():
    m = get_model("grid5")
    eps0 = declared_eps(m)
    assert eps0 > 0
    for theta in theta_box_corners(m.theta_box):
        for table in (m.trans_table(theta), m.obs_table(theta)):
            assert table.min() >= eps0 - 1e-12
            assert table.max() <= 1.0 / eps0 + 1e-12


def test_construction_error_on_wide_box():
    with pytest.raises(ConstructionError) as exc:
        make_grid_hmm(S=3, A=2, theta_dim=1, theta_box=[[-2000.0, 2000.0]],
                      seed=1, coup_scale=1.0)
    assert "cell" in str(exc.value)


def test_shipped_models_pass_diagnostics():
    for name in available_models():
        m = get_model(name)
        probes = theta_box_corners(m.theta_box) + [m.default_theta]
        rep = mixing_check(m, probes, point_probes=128, seed=0)
        assert rep.violations == []
        assert rep.eps_hat > 0
        if m.is_grid:
            assert rep.eps_hat >= declared_eps(m) - 1e-12


def test_shipped_models_gradients_at_random_thetas():
    gen = rng.stream(2024, purpose=11)
    for name in available_models():
        m = get_model(name)
        box = m.theta_box
        for _ in range(20):
            theta = box[:, 0] + (box[:, 1] - box[:, 0]) * (
                0.05 + 0.9 * gen.random(m.theta_dim))
            report = grad_consistency_check(m, theta, h=1e-5, tolerance=1e-5)
            assert report.passed, (name, theta, report)


def test_interval_gamma_one_is_uniform():
    m = make_interval_model(gamma=1.0, sigma=0.2, theta_dim=1, seed=0)
    xs = np.linspace(0.0, 1.0, 7)
    dens = m.trans_density(np.zeros(1), np.full_like(xs, 0.3), xs)
    np.testing.assert_allclose(dens, 1.0, atol=1e-12)


def test_interval_density_integrates_to_one():
    m = get_model("interval1")
    th = m.default_theta
    for x in (0.1, 0.5, 0.9):
        total, _ = quad(lambda xn: float(m.trans_density(th, x, xn)), 0.0, 1.0)
        assert abs(total - 1.0) < 1e-8


def test_interval_parameter_errors():
    with pytest.raises(ValueError):
        make_interval_model(gamma=0.01, sigma=0.2, theta_dim=1)
    with pytest.raises(ValueError):
        make_interval_model(gamma=0.1, sigma=-1.0, theta_dim=1)


def test_interval_sampler_ks():
    m = get_model("interval1")
    th = m.default_theta
    gen = rng.stream(99, purpose=2)
    x0 = np.full(10**5, 0.37)
    draws = m.sample_trans(th, x0, gen)
    mean = m._trans_mean(th, np.array([0.37]))[0]
    alpha, beta, z = models_mod._trunc_gauss_parts(mean, m.sigma)

    def cdf(t):
        t = np.asarray(t, dtype=float)
        core = (ndtr((t - mean) / m.sigma) - ndtr(alpha)) / z
        return m.gamma * t + (1 - m.gamma) * core

    stat = kstest(draws, cdf).statistic
    assert stat < 1.63 / math.sqrt(len(draws))   # 1% critical value


def test_simulate_single_step():
    m = get_model("grid5")
    x, y = simulate(m, m.default_theta, 0, seed=5)
    assert len(x) == 1 and len(y) == 1


def test_simulate_deterministic():
    m = get_model("interval1")
    a = simulate(m, m.default_theta, 25, seed=8)
    b = simulate(m, m.default_theta, 25, seed=8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = simulate(m, m.default_theta, 25, seed=9)
    assert not np.array_equal(a[0], c[0])


def test_simulate_near_absorbing_occupancy():
    # p(0|0) = 0.99, p(0|1) = 0.5: stationary state-0 mass = 0.5/0.51
    base = {
        "base_trans": np.array([[math.log(99.0), 0.0], [0.0, 0.0]]),
        "base_obs": np.zeros((2, 2)),
        "base_init": np.zeros(2),
        "coup_trans": np.zeros((1, 2, 2)), "coup_obs": np.zeros((1, 2, 2)),
        "coup_init": np.zeros((1, 2)),
    }
    m = make_grid_hmm(S=2, A=2, theta_dim=1, seed=0, base_tables=base)
    x, _ = simulate(m, m.default_theta, 40000, seed=3)
    occupancy = (np.asarray(x) == 0).mean()
    target = 0.5 / 0.51
    assert abs(occupancy - target) < 0.02


def test_registry_and_unknown_name():
    assert "grid5" in available_models()
    with pytest.raises(KeyError):
        get_model("no-such-model")


def test_model_config_file_round_trip(tmp_path):
    import json

    from pfgrad.models import to_config

    m = get_model("grid2")
    path = tmp_path / "grid2.json"
    path.write_text(json.dumps(to_config(m)))
    m2 = get_model(str(path))
    assert to_config(m2) == to_config(m)
