"""Outer-loop, mode-extraction and SGD-baseline tests."""

import math

import numpy as np
import pytest

from pfml import (
    IdentifyConfig,
    RngStream,
    extract_estimate,
    identify,
    kalman_loglik,
    make_example1,
    make_lgss,
    sgd_identify,
    simulate,
)
from pfml.identify import IterationTrace
from pfml.models import LgssModel


def _lgss_setup(T=200):
    tmpl = LgssModel(a_x=0.7, sigma_w=0.7, sigma_e=0.3)
    model = make_lgss(tmpl)
    data = simulate(model, model.theta_true, T, RngStream(5, 1))
    return tmpl, model, data


def _kalman_grid_argmax(tmpl, model, data, lo, hi, n=800):
    grid = np.linspace(lo, hi, n)
    vals = [kalman_loglik(tmpl.with_theta(model.make_theta([a])), data) for a in grid]
    return float(grid[int(np.argmax(vals))])


def test_identify_converges_to_kalman_argmax():
    tmpl, model, data = _lgss_setup()
    astar = _kalman_grid_argmax(tmpl, model, data, 0.4, 0.95)
    trace = identify(model, data, model.make_theta([0.4]),
                     IdentifyConfig(K=10, N=2000, seed=5, stream_base=1 << 24))
    assert trace.thetas.shape == (11, 1)
    assert abs(trace.thetas[-1, 0] - astar) <= 0.02 * abs(astar)


def test_identify_one_step_property_large_n():
    """With many particles the first iteration already lands near the
    maximum-likelihood point."""
    tmpl, model, data = _lgss_setup(T=50)
    astar = _kalman_grid_argmax(tmpl, model, data, 0.3, 0.95)
    theta0 = 0.4
    trace = identify(model, data, model.make_theta([theta0]),
                     IdentifyConfig(K=1, N=100_000, seed=5, stream_base=1 << 24))
    theta1 = trace.thetas[1, 0]
    assert abs(theta1 - astar) < abs(theta0 - astar)
    assert abs(theta1 - astar) <= 0.05 * abs(astar)


def test_identify_reproducible_bit_identical():
    model = make_example1()
    data = simulate(model, model.theta_true, 40, RngStream(2, 1))
    cfg = IdentifyConfig(K=5, N=60, seed=2, stream_base=1 << 24)
    t1 = identify(model, data, model.make_theta([20.0, 1.0]), cfg)
    t2 = identify(model, data, model.make_theta([20.0, 1.0]), cfg)
    assert np.array_equal(t1.thetas, t2.thetas)
    assert t1.online_logliks == t2.online_logliks
    assert [r["value"] for r in t1.inner] == [r["value"] for r in t2.inner]
    assert t1.density_eval_units == t2.density_eval_units


def test_identify_anchoring_never_regresses():
    """Each inner maximization starts at theta_{k-1}, so its value is at
    least the online value of the frozen system at theta_{k-1}."""
    model = make_example1()
    data = simulate(model, model.theta_true, 60, RngStream(3, 1))
    trace = identify(model, data, model.make_theta([18.0, 1.2]),
                     IdentifyConfig(K=8, N=80, seed=3, stream_base=1 << 24))
    for k in range(8):
        assert trace.inner[k]["value"] >= trace.online_logliks[k] - 1e-10


def test_identify_trace_bounded_on_example1():
    model = make_example1()
    data = simulate(model, model.theta_true, 60, RngStream(4, 1))
    for r, theta0 in enumerate([[11.0, 3.9], [39.0, 0.2]]):
        trace = identify(model, data, model.make_theta(theta0),
                         IdentifyConfig(K=20, N=80, seed=4, stream_base=(r + 1) << 24))
        assert np.max(np.abs(trace.thetas[:, 0])) <= 10.0 * 30.0
        assert np.max(np.abs(trace.thetas[:, 1])) <= 10.0 * 4.0


def test_identify_rejects_degenerate_start():
    tmpl = LgssModel(a_x=0.5, sigma_w=1e-3, sigma_e=1e-3)
    model = make_lgss(tmpl)
    from pfml import Dataset

    data = Dataset(y=np.full((5, 1), 1e200))
    with pytest.raises(ValueError, match="theta0"):
        identify(model, data, model.make_theta([0.5]),
                 IdentifyConfig(K=3, N=16, seed=1, stream_base=1 << 24))


def test_identify_grid_recording():
    model = make_example1()
    data = simulate(model, model.theta_true, 30, RngStream(6, 1))
    grid = [model.make_theta([b, 0.32]) for b in (20.0, 25.0, 30.0)]
    cfg = IdentifyConfig(K=2, N=40, seed=6, stream_base=1 << 24,
                         record_surface_grids=grid)
    trace = identify(model, data, model.make_theta([22.0, 0.5]), cfg)
    assert all(len(rec["grid_logliks"]) == 3 for rec in trace.inner)


# ---------------------------------------------------------------------------
# extract_estimate
# ---------------------------------------------------------------------------

def _trace_from(thetas, transforms=("unconstrained",)):
    arr = np.asarray(thetas, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    K = arr.shape[0] - 1
    return IterationTrace(
        thetas=arr, transforms=transforms,
        inner=[{"value": 0.0}] * K, online_logliks=[0.0] * K,
        wall_ms=[0.0] * K, config={},
    )


def test_extract_point_mass():
    trace = _trace_from([3.7] * 61)
    summary = extract_estimate([trace], burn_in=0, bins=50)
    assert summary.theta_hat.values[0] == 3.7
    assert summary.samples_used == 60
    assert len(summary.counts[0]) == 1  # a single occupied bin


def test_extract_bimodal_pool_finds_heavier_mode():
    g = RngStream(77, 0).generator()
    pool = np.concatenate([
        g.normal(0.6, 0.05, size=700),
        g.normal(0.2, 0.05, size=300),
    ])
    trace = _trace_from(np.concatenate([[0.0], pool]))  # theta_0 then iterates
    summary = extract_estimate([trace], burn_in=0, bins=50)
    assert abs(summary.theta_hat.values[0] - 0.6) < 0.05


def test_extract_burn_in_and_pooling():
    t1 = _trace_from([0.0] + [1.0] * 10 + [2.0] * 10)
    t2 = _trace_from([5.0] + [1.0] * 10 + [2.0] * 10)
    summary = extract_estimate([t1, t2], burn_in=10, bins=1)
    # only the 2.0 samples survive the burn-in
    assert summary.samples_used == 20
    assert summary.theta_hat.values[0] == 2.0


def test_extract_permutation_invariance():
    g = RngStream(78, 0).generator()
    pool = g.normal(1.0, 0.3, size=400)
    t_a = _trace_from(np.concatenate([[0.0], pool]))
    t_b = _trace_from(np.concatenate([[0.0], pool[::-1]]))
    s_a = extract_estimate([t_a], burn_in=0, bins=40)
    s_b = extract_estimate([t_b], burn_in=0, bins=40)
    assert s_a.theta_hat.values[0] == s_b.theta_hat.values[0]
    assert np.array_equal(s_a.counts[0], s_b.counts[0])


def test_extract_tie_break_prefers_heavier_neighborhood():
    # two bins tie at the top; the right one has the heavier neighborhood
    samples = [0.05] * 4 + [0.45] * 4 + [0.55] * 3
    trace = _trace_from([0.0] + samples)
    summary = extract_estimate([trace], burn_in=0, bins=10)
    assert 0.4 < summary.theta_hat.values[0] < 0.5


def test_extract_validation_errors():
    trace = _trace_from([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        extract_estimate([trace], burn_in=10, bins=5)
    with pytest.raises(ValueError):
        extract_estimate([trace], burn_in=0, bins=50)  # 2 samples < 50 bins
    with pytest.raises(ValueError):
        extract_estimate([], burn_in=0, bins=5)


# ---------------------------------------------------------------------------
# sgd_identify
# ---------------------------------------------------------------------------

def test_sgd_on_quadratic_surrogate_converges():
    model = make_example1()
    data = simulate(model, model.theta_true, 10, RngStream(8, 1))
    target = np.array([24.0, math.log(0.5)])  # optimum in transformed space

    def hook(theta_ref, k):
        def objective(theta):
            v = np.array([theta.values[0], math.log(theta.values[1])])
            return -float(np.sum((v - target) ** 2))
        return objective

    trace = sgd_identify(model, data, model.make_theta([20.0, 1.0]),
                         steps=300, N=10, gamma0=0.4, alpha=0.6,
                         rng=RngStream(8, 2), objective_hook=hook)
    assert not trace.diverged
    final = trace.thetas[-1]
    assert abs(final[0] - 24.0) < 1e-2
    assert abs(math.log(final[1]) - math.log(0.5)) < 1e-2


def test_sgd_runs_on_example1_and_is_reproducible():
    model = make_example1()
    data = simulate(model, model.theta_true, 40, RngStream(9, 1))
    kw = dict(steps=10, N=50, gamma0=0.02, alpha=0.7, rng=RngStream(9, 2))
    t1 = sgd_identify(model, data, model.make_theta([20.0, 1.0]), **kw)
    t2 = sgd_identify(model, data, model.make_theta([20.0, 1.0]), **kw)
    assert np.array_equal(t1.thetas, t2.thetas)
    assert t1.thetas.shape[0] == 11
    assert t1.method == "sgd"


def test_sgd_aggressive_step_flags_divergence_without_crash():
    model = make_example1()
    data = simulate(model, model.theta_true, 40, RngStream(10, 1))
    trace = sgd_identify(model, data, model.make_theta([20.0, 1.0]),
                         steps=60, N=50, gamma0=500.0, alpha=0.6,
                         rng=RngStream(10, 2))
    assert trace.diverged
    assert trace.diagnostic is not None


def test_sgd_parameter_validation():
    model = make_example1()
    data = simulate(model, model.theta_true, 10, RngStream(11, 1))
    with pytest.raises(ValueError):
        sgd_identify(model, data, model.theta_true, steps=5, N=10,
                     gamma0=-1.0, alpha=0.7, rng=RngStream(11, 2))
    with pytest.raises(ValueError):
        sgd_identify(model, data, model.theta_true, steps=5, N=10,
                     gamma0=0.1, alpha=0.4, rng=RngStream(11, 2))
