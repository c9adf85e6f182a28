"""Benchmark-model and Kalman-oracle tests."""

import math

import numpy as np
import pytest
from scipy import stats

from pfml import (
    ApfConfig,
    Dataset,
    RngStream,
    kalman_loglik,
    make_example1,
    make_example2,
    make_lgss,
    run_apf,
    simulate,
)
from pfml.models import LgssModel, example2_input, get_model


# ---------------------------------------------------------------------------
# kalman_loglik
# ---------------------------------------------------------------------------

def test_kalman_single_step_hand_value():
    # predictive var of y_1: sigma0^2 a^2 + sigma_w^2 + sigma_e^2 = 3
    tmpl = LgssModel(a_x=1.0, c=1.0, sigma_w=1.0, sigma_e=1.0, sigma0=1.0)
    data = Dataset(y=np.zeros((1, 1)))
    expected = -0.5 * math.log(2.0 * math.pi * 3.0)
    assert abs(kalman_loglik(tmpl, data) - expected) < 1e-14


def test_kalman_decoupled_observation():
    # c = 0: the likelihood factorizes into iid N(0, sigma_e^2) terms
    tmpl = LgssModel(a_x=0.9, c=0.0, sigma_w=0.5, sigma_e=0.7, sigma0=1.0)
    y = RngStream(1, 1).generator().standard_normal((20, 1))
    data = Dataset(y=y)
    expected = float(np.sum(stats.norm.logpdf(y[:, 0], scale=0.7)))
    assert abs(kalman_loglik(tmpl, data) - expected) < 1e-10


def test_kalman_against_joint_gaussian_oracle():
    """Two-route check: the recursion must match the log-density of the
    joint Gaussian distribution of y_{1:T} assembled directly from the
    state autocovariance."""
    rng = np.random.default_rng(3)
    for _ in range(10):
        tmpl = LgssModel(
            a_x=rng.uniform(-0.9, 0.9),
            c=rng.uniform(0.5, 2.0),
            sigma_w=rng.uniform(0.2, 1.5),
            sigma_e=rng.uniform(0.2, 1.5),
            sigma0=rng.uniform(0.5, 2.0),
        )
        T = 30
        model = make_lgss(tmpl)
        data = simulate(model, model.theta_true, T, RngStream(4, rng.integers(1e6)))

        # cov(x_s, x_t) from the linear recursion, then Sigma_y = c^2 cov + R
        Px = np.empty((T, T))
        var = tmpl.sigma0**2
        vars_t = []
        for t in range(T):
            var = tmpl.a_x**2 * var + tmpl.sigma_w**2
            vars_t.append(var)
        for s in range(T):
            for t in range(s, T):
                Px[s, t] = Px[t, s] = vars_t[s] * tmpl.a_x ** (t - s)
        Sy = tmpl.c**2 * Px + tmpl.sigma_e**2 * np.eye(T)
        direct = stats.multivariate_normal(mean=np.zeros(T), cov=Sy).logpdf(data.y[:, 0])
        recursive = kalman_loglik(tmpl, data)
        assert abs(recursive - direct) <= 1e-10 * max(1.0, abs(direct))


def test_kalman_rejects_bad_variances():
    with pytest.raises(ValueError):
        LgssModel(sigma_w=0.0)
    with pytest.raises(ValueError):
        LgssModel(sigma_e=-1.0)


# ---------------------------------------------------------------------------
# shipped models
# ---------------------------------------------------------------------------

def test_example1_transition_density_plugin():
    model = make_example1()
    theta = model.make_theta([25.0, 1.0])
    x_prev = np.zeros((1, 1))
    x_next = np.array([[2.0]])
    mean = 8.0 * math.cos(1.2)
    expected = -0.5 * (2.0 - mean) ** 2 - 0.5 * math.log(2 * math.pi)
    got = model.trans_logdensity(theta, x_next, x_prev, 1)[0]
    assert abs(got - expected) < 1e-12


def test_example1_observation_density_even_in_state():
    model = make_example1()
    theta = model.theta_true
    y = np.array([0.3])
    for x in (0.7, 1.9, 12.0):
        a = model.obs_logdensity(theta, y, np.array([[x]]), 4)[0]
        b = model.obs_logdensity(theta, y, np.array([[-x]]), 4)[0]
        assert a == b
        assert np.isfinite(a)


def test_example2_transition_mean_arithmetic():
    model = make_example2(10)
    theta = model.make_theta([0.5, 0.0])
    # x/(a+x^2) at x=1, a=0.5 is 2/3; with b=0 the input drops out
    got = model.trans_logdensity(theta, np.array([[2.0 / 3.0]]), np.array([[1.0]]), 1)[0]
    assert abs(got - (-0.5 * math.log(2 * math.pi))) < 1e-12


def test_example2_input_is_fixed_and_bounded():
    u1 = example2_input(1000)
    u2 = example2_input(1000)
    assert np.array_equal(u1, u2)
    assert np.all((u1 >= -1.0) & (u1 <= 1.0))
    assert np.array_equal(example2_input(50), u1[:50])


def test_example2_simulation_smoke_many_seeds():
    model = make_example2(1000)
    theta = model.theta_true
    for s in range(100):
        data = simulate(model, theta, 1000, RngStream(1000 + s, 1))
        assert np.all(np.isfinite(data.y))


def test_example2_pole_guard_returns_neg_inf_not_nan():
    model = make_example2(10)
    theta = model.make_theta([-1.0, 0.0])  # a + x^2 = 0 at x = 1
    val = model.trans_logdensity(theta, np.array([[0.0]]), np.array([[1.0]]), 1)[0]
    assert val == -np.inf
    near = model.trans_logdensity(
        theta, np.array([[0.0]]), np.array([[1.0 + 1e-14]]), 1
    )[0]
    assert val == -np.inf and not np.isnan(near)


def test_lgss_unknown_subsets():
    tmpl = LgssModel(unknown=("a_x", "sigma_w"))
    model = make_lgss(tmpl)
    assert model.param_names == ("a_x", "sigma_w")
    assert model.param_transforms == ("unconstrained", "log-positive")
    new = tmpl.with_theta(model.make_theta([0.5, 0.9]))
    assert new.a_x == 0.5 and new.sigma_w == 0.9 and new.sigma_e == tmpl.sigma_e
    with pytest.raises(ValueError):
        LgssModel(unknown=("sigma0",))


def test_get_model_registry():
    assert get_model("example1").name == "example1"
    assert get_model("example2", T=20).name == "example2"
    assert get_model("lgss").name == "lgss"
    with pytest.raises(ValueError):
        get_model("nope")


def test_bootstrap_loglik_tracks_kalman_over_theta_grid():
    """Bootstrap marginal-likelihood estimates at N=5000 stay within 3
    Monte Carlo standard errors of the exact likelihood over a grid."""
    tmpl = LgssModel()
    model = make_lgss(tmpl)
    data = simulate(model, model.theta_true, 50, RngStream(14, 1))
    for j, a in enumerate(np.linspace(0.6, 1.0, 5)):
        theta = model.make_theta([a])
        exact = kalman_loglik(tmpl.with_theta(theta), data)
        vals = [
            run_apf(model, theta, ApfConfig(N=5000), data, RngStream(14, 50 * (j + 1) + s))[0]
            for s in range(20)
        ]
        z = np.exp(np.asarray(vals) - exact)
        se = z.std(ddof=1) / math.sqrt(len(vals))
        assert abs(z.mean() - 1.0) <= 3.0 * se, f"grid point a={a}"
