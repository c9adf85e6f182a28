"""Benchmark models: two nonlinear scalar examples and a linear-Gaussian oracle.

The two nonlinear models are the standard test cases for particle-filter
based identification:

* ``example1`` — the univariate growth benchmark
  x_t = 0.5 x_{t-1} + b x_{t-1}/(1+x_{t-1}^2) + 8 cos(1.2 t) + q w_t,
  y_t = 0.05 x_t^2 + e_t, with unknowns theta = (b, q), q > 0.
* ``example2`` — x_t = x_{t-1}/(a + x_{t-1}^2) + b u_t + w_t,
  y_t = x_t + e_t, with unknowns theta = (a, b) and a fixed exogenous
  input sequence.  Hard because a sits in a denominator: a pole
  a + x^2 = 0 is reachable during optimization and is guarded by a -inf
  log-density rather than NaN.

The linear-Gaussian model ships with an exact Kalman log-likelihood used
as the validation oracle throughout the test suite.

All initial distributions are theta-independent; the nonlinear examples
use a standard normal initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ssm import Dataset, ModelContract, ParamVector, RngStream

__all__ = [
    "EXAMPLE2_INPUT_SEED",
    "EXAMPLE2_INPUT_STREAM",
    "LgssModel",
    "kalman_loglik",
    "make_example1",
    "make_example2",
    "make_lgss",
    "get_model",
    "MODEL_NAMES",
]

_LOG_2PI = math.log(2.0 * math.pi)

# The exogenous input of example2 is part of the model definition: drawn
# once i.i.d. uniform on [-1, 1] from this fixed named stream so that the
# input gain stays identifiable and every run sees the same excitation.
EXAMPLE2_INPUT_SEED = 0xE2
EXAMPLE2_INPUT_STREAM = 0xE2

POLE_GUARD = 1e-12


def _normal_logpdf(x, mean, std):
    z = (np.asarray(x, dtype=np.float64) - mean) / std
    # z*z may overflow for absurd arguments; -inf is the right answer then
    with np.errstate(over="ignore"):
        return -0.5 * z * z - np.log(std) - 0.5 * _LOG_2PI


def _std_normal_init(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, 1))


def make_example1() -> ModelContract:
    """Univariate growth benchmark with unknowns theta = (b, q)."""

    def trans_mean(b, x, t):
        return 0.5 * x + b * x / (1.0 + x * x) + 8.0 * np.cos(1.2 * np.asarray(t))

    def trans_sample(theta, x_prev, t, rng):
        b, q = theta.values
        m = trans_mean(b, x_prev[:, 0], t)
        return (m + q * rng.standard_normal(m.shape))[:, None]

    def trans_logdensity(theta, x_next, x_prev, t):
        b, q = theta.values
        m = trans_mean(b, x_prev[:, 0], t)
        return _normal_logpdf(x_next[:, 0], m, q)

    def obs_logdensity(theta, y, x, t):
        y1 = np.asarray(y, dtype=np.float64).reshape(-1, 1)[:, 0]
        return _normal_logpdf(y1, 0.05 * x[:, 0] ** 2, 1.0)

    def obs_sample(theta, x, t, rng):
        m = 0.05 * x[:, 0] ** 2
        return (m + rng.standard_normal(m.shape))[:, None]

    return ModelContract(
        name="example1",
        state_dim=1,
        obs_dim=1,
        param_names=("b", "q"),
        param_transforms=("unconstrained", "log-positive"),
        init_sample=_std_normal_init,
        trans_sample=trans_sample,
        trans_logdensity=trans_logdensity,
        obs_logdensity=obs_logdensity,
        obs_sample=obs_sample,
        theta_true=ParamVector([25.0, math.sqrt(0.1)],
                               ("unconstrained", "log-positive")),
    )


def example2_input(T: int) -> np.ndarray:
    """The fixed input sequence u_{1:T} (uniform on [-1, 1], named stream)."""
    g = RngStream(EXAMPLE2_INPUT_SEED, EXAMPLE2_INPUT_STREAM).generator()
    return g.uniform(-1.0, 1.0, size=T)


def make_example2(T: int) -> ModelContract:
    """Denominator-parameter benchmark with unknowns theta = (a, b).

    Materializes the input sequence for horizons up to ``T``; the
    transition callables accept any 1-based step index t <= T.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    u = example2_input(T)

    def trans_mean(a, b, x, t):
        denom = a + x * x
        t_idx = np.asarray(t, dtype=np.int64) - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            m = x / denom + b * u[t_idx]
        return m, denom

    def trans_sample(theta, x_prev, t, rng):
        a, b = theta.values
        m, _ = trans_mean(a, b, x_prev[:, 0], t)
        return (m + rng.standard_normal(m.shape))[:, None]

    def trans_logdensity(theta, x_next, x_prev, t):
        a, b = theta.values
        m, denom = trans_mean(a, b, x_prev[:, 0], t)
        ld = _normal_logpdf(x_next[:, 0], m, 1.0)
        # A pole in the transition mean yields an ordered -inf, never NaN.
        return np.where(np.abs(denom) <= POLE_GUARD, -np.inf, ld)

    def obs_logdensity(theta, y, x, t):
        y1 = np.asarray(y, dtype=np.float64).reshape(-1, 1)[:, 0]
        return _normal_logpdf(y1, x[:, 0], 1.0)

    def obs_sample(theta, x, t, rng):
        return (x[:, 0] + rng.standard_normal(x.shape[0]))[:, None]

    def input_fn(t):
        return np.array([u[t - 1]])

    return ModelContract(
        name="example2",
        state_dim=1,
        obs_dim=1,
        param_names=("a", "b"),
        param_transforms=("unconstrained", "unconstrained"),
        init_sample=_std_normal_init,
        trans_sample=trans_sample,
        trans_logdensity=trans_logdensity,
        obs_logdensity=obs_logdensity,
        obs_sample=obs_sample,
        input_fn=input_fn,
        theta_true=ParamVector([0.5, -2.0]),
    )


# ---------------------------------------------------------------------------
# Linear-Gaussian state-space model with exact likelihood.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LgssModel:
    """Scalar linear-Gaussian model
    x_t = a_x x_{t-1} + sigma_w w_t, y_t = c x_t + sigma_e e_t,
    x_0 ~ N(0, sigma0^2).

    ``unknown`` names the coefficients exposed as the parameter vector
    (any subset of a_x, c, sigma_w, sigma_e; sigma0 stays fixed because
    the initial distribution must not depend on theta).
    """

    a_x: float = 0.8
    c: float = 1.0
    sigma_w: float = 0.3
    sigma_e: float = 1.0
    sigma0: float = 1.0
    unknown: tuple[str, ...] = ("a_x",)

    _FIELDS = ("a_x", "c", "sigma_w", "sigma_e")
    _POSITIVE = ("sigma_w", "sigma_e")

    def __post_init__(self):
        for name in self.unknown:
            if name not in self._FIELDS:
                raise ValueError(f"unknown coefficient {name!r} (sigma0 cannot vary)")
        for name in ("sigma_w", "sigma_e", "sigma0"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")

    @property
    def transforms(self) -> tuple[str, ...]:
        return tuple(
            "log-positive" if n in self._POSITIVE else "unconstrained"
            for n in self.unknown
        )

    def theta(self) -> ParamVector:
        """Parameter vector holding this model's own unknown coefficients."""
        return ParamVector([getattr(self, n) for n in self.unknown], self.transforms)

    def with_theta(self, theta: ParamVector) -> "LgssModel":
        """Concrete coefficients with the unknowns replaced by ``theta``."""
        if theta.d != len(self.unknown):
            raise ValueError(f"expected {len(self.unknown)} parameters, got {theta.d}")
        return replace(self, **dict(zip(self.unknown, map(float, theta.values))))


def kalman_loglik(model: LgssModel, data: Dataset) -> float:
    """Exact log p(y_{1:T}) by the scalar prediction/update recursion.

    Accumulates the innovation likelihood: at each step the one-step
    predictive distribution of y_t is Gaussian with mean c*m_pred and
    variance c^2*P_pred + sigma_e^2.
    """
    if data.obs_dim != 1:
        raise ValueError("kalman_loglik expects scalar observations")
    a, c = model.a_x, model.c
    qv, rv = model.sigma_w**2, model.sigma_e**2
    m, P = 0.0, model.sigma0**2
    ll = 0.0
    for t in range(data.T):
        m_pred = a * m
        P_pred = a * a * P + qv
        S = c * c * P_pred + rv
        innov = data.y[t, 0] - c * m_pred
        ll += -0.5 * (innov * innov / S + math.log(2.0 * math.pi * S))
        K = P_pred * c / S
        m = m_pred + K * innov
        P = (1.0 - K * c) * P_pred
    return float(ll)


def make_lgss(model: LgssModel = LgssModel()) -> ModelContract:
    """Model contract over the unknown coefficients of ``model``."""

    def concrete(theta):
        return model.with_theta(theta)

    def init_sample(rng, n):
        return (model.sigma0 * rng.standard_normal(n))[:, None]

    def trans_sample(theta, x_prev, t, rng):
        m = concrete(theta)
        mu = m.a_x * x_prev[:, 0]
        return (mu + m.sigma_w * rng.standard_normal(mu.shape))[:, None]

    def trans_logdensity(theta, x_next, x_prev, t):
        m = concrete(theta)
        return _normal_logpdf(x_next[:, 0], m.a_x * x_prev[:, 0], m.sigma_w)

    def obs_logdensity(theta, y, x, t):
        m = concrete(theta)
        y1 = np.asarray(y, dtype=np.float64).reshape(-1, 1)[:, 0]
        return _normal_logpdf(y1, m.c * x[:, 0], m.sigma_e)

    def obs_sample(theta, x, t, rng):
        m = concrete(theta)
        mu = m.c * x[:, 0]
        return (mu + m.sigma_e * rng.standard_normal(mu.shape))[:, None]

    return ModelContract(
        name="lgss",
        state_dim=1,
        obs_dim=1,
        param_names=model.unknown,
        param_transforms=model.transforms,
        init_sample=init_sample,
        trans_sample=trans_sample,
        trans_logdensity=trans_logdensity,
        obs_logdensity=obs_logdensity,
        obs_sample=obs_sample,
        theta_true=model.theta(),
    )


MODEL_NAMES = ("example1", "example2", "lgss")


def get_model(name: str, T: int = 100) -> ModelContract:
    """Model selection by name string (CLI/config entry point)."""
    if name == "example1":
        return make_example1()
    if name == "example2":
        return make_example2(T)
    if name == "lgss":
        return make_lgss()
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
