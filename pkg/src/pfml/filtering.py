"""Auxiliary particle filter and the frozen bootstrap run at a reference parameter.

Two entry points:

* :func:`run_apf` — the general auxiliary particle filter with pluggable
  proposal and resampling weights, returning the marginal-likelihood
  estimate and the full particle system.
* :func:`run_frozen_bootstrap` — the bootstrap filter at a reference
  parameter, recording particles, ancestor indices and online weights so
  the likelihood estimator can later be re-evaluated at other parameters
  as a deterministic function of the saved system.

All weight arithmetic is done in log space with max-shift normalization;
raw log-weights are never exponentiated without a shift, so weights as
small as exp(-700) stay representable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .ssm import Dataset, ModelContract, ParamVector, RngStream

__all__ = [
    "WeightDegeneracy",
    "Proposal",
    "ApfConfig",
    "ParticleSystem",
    "categorical_resample",
    "run_apf",
    "run_frozen_bootstrap",
    "save_system",
    "load_system",
]

_LOG_ZERO = -np.inf


class WeightDegeneracy(RuntimeError):
    """All importance weights are numerically zero (or NaN) at some step.

    Signals likelihood underflow at the parameter that generated the
    weights; the identification loop must treat that parameter as invalid.
    """

    def __init__(self, step: Optional[int] = None, detail: str = ""):
        self.step = step
        msg = "weight degeneracy"
        if step is not None:
            msg += f" at t={step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


def categorical_resample(weights, count: int, rng: np.random.Generator,
                         step: Optional[int] = None) -> np.ndarray:
    """Draw ``count`` i.i.d. indices with probability weights[j]/sum(weights).

    Multinomial resampling: inverse-CDF lookup of uniform draws.  Weights
    must be nonnegative and finite with at least one strictly positive
    entry; otherwise :class:`WeightDegeneracy` is raised (carrying
    ``step`` when the caller supplies it).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if np.any(np.isnan(w)):
        raise WeightDegeneracy(step, "NaN weight")
    if np.any(w < 0.0) or np.any(np.isinf(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise WeightDegeneracy(step, "all weights zero")
    cdf = np.cumsum(w / total)
    u = rng.random(count)
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


@dataclass(frozen=True)
class Proposal:
    """Proposal contract for the auxiliary particle filter.

    ``sample(theta, x_prev, y, t, rng) -> (n, state_dim)`` and
    ``logdensity(theta, x_next, x_prev, y, t) -> (n,)``.  The support of
    the proposal must cover the support of the transition density.
    """

    sample: Callable
    logdensity: Callable


@dataclass(frozen=True)
class ApfConfig:
    """Configuration of :func:`run_apf`.

    ``weight_mode="bootstrap-at-reference"`` proposes from the transition
    density at ``theta_ref`` (defaulting to the filter's own theta) and
    uses the importance weights as resampling weights; ``"custom"``
    requires an explicit proposal and resampling-weight rule
    ``resampling_weight(x, w, t) -> (n,)`` (nonnegative, scale-free: the
    weights ``w`` are passed normalized to a unit maximum).
    """

    N: int
    weight_mode: str = "bootstrap-at-reference"
    proposal: Optional[Proposal] = None
    resampling_weight: Optional[Callable] = None
    theta_ref: Optional[ParamVector] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.weight_mode not in ("bootstrap-at-reference", "custom"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.weight_mode == "custom":
            if self.proposal is None or self.resampling_weight is None:
                raise ValueError("custom mode requires proposal and resampling_weight")


@dataclass(frozen=True)
class ParticleSystem:
    """Frozen record of one particle filter run.

    ``particles[t, n]`` is x_t^n for t = 0..T; ``ancestors[t-1, n]`` is
    the index a_t^n of the particle at t-1 from which particle n at t was
    propagated.  ``online_logweights[t, n]`` is log w_t^n as computed
    during generation (zeros at t=0; for the frozen bootstrap run it
    equals log g(y_t | x_t^n) at the reference parameter for t >= 1).
    """

    particles: np.ndarray
    ancestors: np.ndarray
    theta_ref: ParamVector
    online_logweights: np.ndarray
    online_loglik: float
    seed_info: tuple[int, int]

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=np.float64)
        a = np.asarray(self.ancestors, dtype=np.int64)
        lw = np.asarray(self.online_logweights, dtype=np.float64)
        T1, N = p.shape[0], p.shape[1]
        if p.ndim != 3:
            raise ValueError("particles must have shape (T+1, N, state_dim)")
        if a.shape != (T1 - 1, N):
            raise ValueError(f"ancestors shape {a.shape} != {(T1 - 1, N)}")
        if lw.shape != (T1, N):
            raise ValueError(f"online_logweights shape {lw.shape} != {(T1, N)}")
        if a.size and (a.min() < 0 or a.max() >= N):
            raise ValueError("ancestor indices out of range")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "ancestors", a)
        object.__setattr__(self, "online_logweights", lw)

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    @property
    def state_dim(self) -> int:
        return self.particles.shape[2]


def _logsumexp(lw: np.ndarray) -> float:
    m = lw.max()
    if not np.isfinite(m):
        return float(m) if m == _LOG_ZERO else float("nan")
    return float(m + np.log(np.exp(lw - m).sum()))


def _shifted_weights(lw: np.ndarray) -> np.ndarray:
    """Natural-space weights normalized to unit maximum (never raw exp)."""
    return np.exp(lw - lw.max())


def _check_logdensity(ld: np.ndarray, what: str, t: int):
    if np.any(np.isnan(ld)):
        n = int(np.argmax(np.isnan(ld)))
        raise FloatingPointError(f"{what} returned NaN at t={t}, n={n}")
    if np.any(ld == np.inf):
        n = int(np.argmax(ld == np.inf))
        raise FloatingPointError(f"{what} returned +inf at t={t}, n={n}")


def run_apf(model: ModelContract, theta: ParamVector, cfg: ApfConfig,
            data: Dataset, rng: RngStream) -> tuple[float, ParticleSystem]:
    """General auxiliary particle filter.

    Initialization draws from p(x0) with unit weights; each step resamples
    ancestors from the previous resampling weights, propagates through the
    proposal, and reweights by

        w_t^n = [wbar_{t-1}^{a_t^n} / nubar_{t-1}^{a_t^n}]
                * f_theta(x_t^n | x_{t-1}^{a_t^n}) / q(x_t^n | ...)
                * g_theta(y_t | x_t^n)

    where wbar and nubar are the importance and resampling weights, each
    normalized over all N particles.  Per step z_t is the mean weight and
    the returned estimate is log zhat = sum_t log z_t.

    Returns ``(log zhat, system)`` where ``system`` records the run.
    """
    model.validate_theta(theta)
    N, T = cfg.N, data.T
    if T < 1:
        raise ValueError("dataset must contain at least one observation")

    bootstrap = cfg.weight_mode == "bootstrap-at-reference"
    theta_prop = cfg.theta_ref if (bootstrap and cfg.theta_ref is not None) else theta
    g = rng.generator()

    particles = np.empty((T + 1, N, model.state_dim))
    ancestors = np.empty((T, N), dtype=np.int64)
    online_lw = np.empty((T + 1, N))
    particles[0] = model.init_sample(g, N)
    online_lw[0] = 0.0

    lw = np.zeros(N)            # log importance weights w_{t-1}
    lnu = np.zeros(N)           # log resampling weights nu_{t-1}
    loglik = 0.0
    for t in range(1, T + 1):
        anc = categorical_resample(_shifted_weights(lnu), N, g, step=t)
        x_prev = particles[t - 1][anc]
        if bootstrap:
            x_t = model.trans_sample(theta_prop, x_prev, t, g)
            lq = model.trans_logdensity(theta_prop, x_t, x_prev, t)
        else:
            x_t = cfg.proposal.sample(theta, x_prev, data.y[t - 1], t, g)
            lq = cfg.proposal.logdensity(theta, x_t, x_prev, data.y[t - 1], t)
        lf = model.trans_logdensity(theta, x_t, x_prev, t)
        lg = model.obs_logdensity(theta, data.y[t - 1], x_t, t)
        _check_logdensity(lf, "trans_logdensity", t)
        _check_logdensity(lg, "obs_logdensity", t)
        _check_logdensity(lq, "proposal logdensity", t)

        lw_bar = lw - _logsumexp(lw)
        lnu_bar = lnu - _logsumexp(lnu)
        lw_new = lw_bar[anc] - lnu_bar[anc] + lf - lq + lg

        lz = _logsumexp(lw_new) - np.log(N)
        if lz == _LOG_ZERO or np.isnan(lz):
            raise WeightDegeneracy(t)
        loglik += lz

        particles[t] = x_t
        ancestors[t - 1] = anc
        online_lw[t] = lw_new
        lw = lw_new
        if bootstrap:
            lnu = lw_new
        else:
            nu = np.asarray(
                cfg.resampling_weight(x_t, _shifted_weights(lw_new), t),
                dtype=np.float64,
            )
            if np.any(np.isnan(nu)) or np.any(nu < 0.0):
                raise WeightDegeneracy(t, "invalid resampling weights")
            with np.errstate(divide="ignore"):
                lnu = np.log(nu)

    system = ParticleSystem(
        particles=particles, ancestors=ancestors, theta_ref=theta,
        online_logweights=online_lw, online_loglik=loglik,
        seed_info=(rng.seed, rng.stream),
    )
    return loglik, system


def run_frozen_bootstrap(model: ModelContract, theta_ref: ParamVector, N: int,
                         data: Dataset, rng: RngStream) -> ParticleSystem:
    """Bootstrap filter at ``theta_ref``, returning the complete frozen system.

    Per step: resample ancestors from the categorical distribution over
    the previous importance weights, propagate from the transition density
    at ``theta_ref``, and set w_t^n = g(y_t | x_t^n) at ``theta_ref``.
    The recorded ``online_loglik`` is sum_t log((1/N) sum_n w_t^n).

    Raises :class:`WeightDegeneracy` carrying t when all weights underflow
    (the caller must treat ``theta_ref`` as invalid).
    """
    model.validate_theta(theta_ref)
    if N < 1:
        raise ValueError("N must be >= 1")
    T = data.T
    g = rng.generator()

    particles = np.empty((T + 1, N, model.state_dim))
    ancestors = np.empty((T, N), dtype=np.int64)
    online_lw = np.empty((T + 1, N))
    particles[0] = model.init_sample(g, N)
    online_lw[0] = 0.0

    lw = np.zeros(N)
    loglik = 0.0
    for t in range(1, T + 1):
        anc = categorical_resample(_shifted_weights(lw), N, g, step=t)
        x_t = model.trans_sample(theta_ref, particles[t - 1][anc], t, g)
        if not np.all(np.isfinite(x_t)):
            raise FloatingPointError(
                f"run_frozen_bootstrap: non-finite state at t={t} "
                f"for theta_ref={theta_ref}"
            )
        lw = model.obs_logdensity(theta_ref, data.y[t - 1], x_t, t)
        _check_logdensity(lw, "obs_logdensity", t)
        lz = _logsumexp(lw) - np.log(N)
        if lz == _LOG_ZERO:
            raise WeightDegeneracy(t)
        loglik += lz
        particles[t] = x_t
        ancestors[t - 1] = anc
        online_lw[t] = lw

    return ParticleSystem(
        particles=particles, ancestors=ancestors, theta_ref=theta_ref,
        online_logweights=online_lw, online_loglik=loglik,
        seed_info=(rng.seed, rng.stream),
    )


# ---------------------------------------------------------------------------
# Archive format: npz with a JSON header, for re-evaluation in other processes.
# ---------------------------------------------------------------------------

_SYSTEM_FORMAT = "pfml-particle-system-v1"


def save_system(system: ParticleSystem, path) -> Path:
    """Write a versioned binary archive of the frozen system."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    header = {
        "format": _SYSTEM_FORMAT,
        "theta_ref": list(map(float, system.theta_ref.values)),
        "transforms": list(system.theta_ref.transforms),
        "online_loglik": float(system.online_loglik),
        "seed": int(system.seed_info[0]),
        "stream": int(system.seed_info[1]),
        "N": system.N,
        "T": system.T,
        "state_dim": system.state_dim,
    }
    with open(path, "wb") as f:
        np.savez(
            f,
            header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
            particles=system.particles,
            ancestors=system.ancestors,
            online_logweights=system.online_logweights,
        )
    return path


def load_system(path) -> ParticleSystem:
    """Inverse of :func:`save_system`."""
    with np.load(path) as arch:
        header = json.loads(bytes(arch["header"]).decode())
        if header.get("format") != _SYSTEM_FORMAT:
            raise ValueError(f"unrecognized archive format {header.get('format')!r}")
        theta_ref = ParamVector(header["theta_ref"], tuple(header["transforms"]))
        return ParticleSystem(
            particles=arch["particles"],
            ancestors=arch["ancestors"],
            theta_ref=theta_ref,
            online_logweights=arch["online_logweights"],
            online_loglik=header["online_loglik"],
            seed_info=(header["seed"], header["stream"]),
        )
