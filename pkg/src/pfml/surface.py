"""Deterministic re-evaluation of the likelihood estimator over a frozen system.

Conditioned on the particles and ancestor indices generated by the
bootstrap filter at a reference parameter, the marginal-likelihood
estimator becomes a pure function of the probed parameter: transition and
observation densities are re-evaluated at the new parameter while the
reference densities and the resampling correction are divided back out.
The resulting surface is smooth in the parameter (the resampling
decisions are frozen, so there are no fixed-seed style jumps) and can be
handed to any deterministic optimizer.

Weight bookkeeping runs in log space along the frozen genealogy: per-step
normalizations telescope into scalar shifts, so the whole recursion
reduces to one gather-and-add pass plus row-wise log-sum-exp reductions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .filtering import ParticleSystem
from .ssm import Dataset, ModelContract, ParamVector, fmt_float

__all__ = [
    "LocalLikelihoodSurface",
    "SurfaceValue",
    "build_surface",
    "structural_loglik",
    "surface_values_to_csv",
]


@dataclass(frozen=True)
class SurfaceValue:
    """One evaluation of the frozen-system likelihood estimator.

    ``loglik`` is sum(per_step) when ``degenerate_at`` is None, and -inf
    when some step's weights all underflowed (``degenerate_at`` carries
    the 1-based step; per_step entries from there on are -inf).
    """

    loglik: float
    per_step: np.ndarray
    degenerate_at: Optional[int] = None


class LocalLikelihoodSurface:
    """Pure map theta -> log-likelihood estimate over one frozen system.

    All reference-parameter quantities (transition/observation
    log-densities along the genealogy and the normalized resampling
    correction) are precomputed once at construction; an evaluation then
    costs one vectorized transition-density and one observation-density
    call at the probed parameter plus O(T*N) bookkeeping.  Evaluations
    involve no randomness: the same parameter always yields bit-identical
    values, and concurrent evaluation from multiple threads is safe.
    """

    def __init__(self, system: ParticleSystem, model: ModelContract):
        model.validate_theta(system.theta_ref)
        if system.state_dim != model.state_dim:
            raise ValueError(
                f"system state_dim {system.state_dim} != model state_dim "
                f"{model.state_dim}"
            )
        self.system = system
        self.model = model
        self.theta_ref = system.theta_ref

        T, N, dx = system.T, system.N, system.state_dim
        self._T, self._N = T, N
        self._log_n = np.log(N)

        anc = system.ancestors                       # (T, N), row t-1 holds a_t
        gathered = np.take_along_axis(
            system.particles[:-1], anc[:, :, None], axis=1
        )                                            # x_{t-1}^{a_t^n}
        self._x_next = system.particles[1:].reshape(T * N, dx)
        self._x_prev = gathered.reshape(T * N, dx)
        self._tvec = np.repeat(np.arange(1, T + 1), N)
        self._anc = anc

    def attach_data(self, data: Dataset):
        if data.T != self._T:
            raise ValueError(f"dataset length {data.T} != system horizon {self._T}")
        self._y_rep = np.repeat(data.y, self._N, axis=0)   # (T*N, obs_dim)

        T, N = self._T, self._N
        ref = self.theta_ref
        self.log_f_ref = self.model.trans_logdensity(
            ref, self._x_next, self._x_prev, self._tvec
        ).reshape(T, N)
        self.log_g_ref = self.model.obs_logdensity(
            ref, self._y_rep, self._x_next, self._tvec
        ).reshape(T, N)

        # Normalized log resampling correction: the reference observation
        # weight of each resampled ancestor, normalized over the resampled
        # ancestor set.  Uniform at t=1 (unit initial weights).
        log_star = np.empty((T, N))
        log_star[0] = -self._log_n
        for t in range(1, T):
            row = self.log_g_ref[t - 1][self._anc[t]]
            m = row.max()
            log_star[t] = row - (m + np.log(np.exp(row - m).sum()))
        self.log_star = log_star
        return self

    def evaluate(self, theta: ParamVector) -> SurfaceValue:
        """Log-likelihood estimate at ``theta`` over the frozen system.

        Implements, in log space and along the frozen genealogy,

            w_t^n = [w_{t-1}^{a_t^n} / sum_j w_{t-1}^{a_t^j}] / star_t^n
                    * f_theta / f_ref * g_theta(y_t | x_t^n),
            z_t   = (1/N) sum_n w_t^n,

        returning sum_t log z_t.  At theta equal to the reference
        parameter the bracketed terms cancel exactly and the online
        bootstrap estimate is recovered.  If every weight underflows at
        some step the value is the ordered -inf sentinel (never an
        exception), so simplex search can move away from catastrophic
        parameters.
        """
        self.model.validate_theta(theta)
        T, N = self._T, self._N

        lf = self.model.trans_logdensity(
            theta, self._x_next, self._x_prev, self._tvec
        ).reshape(T, N)
        lg = self.model.obs_logdensity(
            theta, self._y_rep, self._x_next, self._tvec
        ).reshape(T, N)
        delta = lf - self.log_f_ref - self.log_star + lg
        if np.any(np.isnan(delta)):
            t, n = np.argwhere(np.isnan(delta))[0]
            if np.isnan(lf[t, n]):
                what = "trans_logdensity"
            elif np.isnan(lg[t, n]):
                what = "obs_logdensity"
            else:
                what = "delta assembly (conflicting infinities)"
            raise FloatingPointError(
                f"{what} produced NaN at t={t + 1}, n={n} for theta={theta}"
            )

        # Per-row max shift keeps the genealogy accumulator bounded; the
        # shifts telescope back into per_step below.
        shift = delta.max(axis=1)
        if np.any(np.isposinf(shift)):
            t = int(np.argmax(np.isposinf(shift))) + 1
            raise FloatingPointError(
                f"model density returned +inf at t={t} for theta={theta}"
            )
        degenerate_at = None
        if not np.all(np.isfinite(shift)):
            degenerate_at = int(np.argmax(~np.isfinite(shift))) + 1
            delta = delta[: degenerate_at - 1]
            shift = shift[: degenerate_at - 1]
        Tv = delta.shape[0]
        delta = delta - shift[:, None]

        u = np.zeros(N)
        U = np.empty((Tv, N))
        G = np.empty((Tv, N))
        for t in range(Tv):
            np.take(u, self._anc[t], out=G[t])
            np.add(G[t], delta[t], out=U[t])
            u = U[t]

        per_step = np.full(T, -np.inf)
        if Tv:
            lse_u = _row_logsumexp(U)
            lse_g = _row_logsumexp(G)
            per_step[:Tv] = lse_u - lse_g - self._log_n + shift
            bad = ~np.isfinite(per_step[:Tv])
            if np.any(bad):
                first = int(np.argmax(bad))
                degenerate_at = first + 1
                per_step[first:] = -np.inf

        if degenerate_at is not None:
            return SurfaceValue(-np.inf, per_step, degenerate_at)
        return SurfaceValue(float(per_step.sum()), per_step, None)

    def evaluate_grid(self, grid: Sequence[ParamVector]) -> list[SurfaceValue]:
        """Element-wise :meth:`evaluate`, ordered as the input grid."""
        if len(grid) == 0:
            raise ValueError("grid must be nonempty")
        return [self.evaluate(theta) for theta in grid]


def _row_logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(m), out, m)


def build_surface(system: ParticleSystem, model: ModelContract,
                  data: Dataset) -> LocalLikelihoodSurface:
    """Precompute all reference terms for fast repeated evaluation."""
    return LocalLikelihoodSurface(system, model).attach_data(data)


def structural_loglik(surface: LocalLikelihoodSurface, theta: ParamVector,
                      omega_tol: float = 1e-12) -> float:
    """Independent product-of-sums assembly of the same estimator.

    Computes log prod_t [(1/N) sum_n c_t^n * omega_t^n(theta)
    * f_theta(x_t^n | x_{t-1}^{a_t^n}) * g_theta(y_t | x_t^n)] with the
    theta-independent constants c_t^n and the normalized theta-dependent
    mixing weights omega_t^n assembled explicitly, asserting
    sum_n omega_t^n = 1 at every step.  Serves as a cross-check of
    :meth:`LocalLikelihoodSurface.evaluate`; the two routes organize the
    arithmetic differently but define the same estimator.
    """
    surface.model.validate_theta(theta)
    T, N = surface._T, surface._N
    log_c = -surface.log_star - surface.log_f_ref

    lf = surface.model.trans_logdensity(
        theta, surface._x_next, surface._x_prev, surface._tvec
    ).reshape(T, N)
    lg = surface.model.obs_logdensity(
        theta, surface._y_rep, surface._x_next, surface._tvec
    ).reshape(T, N)

    W = np.full(N, 1.0 / N)          # normalized weights from the previous step
    loglik = 0.0
    for t in range(T):
        Wa = W[surface._anc[t]]
        sa = Wa.sum()
        if sa <= 0.0 or not np.isfinite(sa):
            return -np.inf
        omega = Wa / sa
        err = abs(omega.sum() - 1.0)
        if err > omega_tol:
            raise AssertionError(
                f"sum of mixing weights differs from 1 by {err:.3e} at t={t + 1}"
            )
        log_terms = log_c[t] + lf[t] + lg[t]
        with np.errstate(divide="ignore"):
            log_terms = log_terms + np.log(omega)
        m = log_terms.max()
        if not np.isfinite(m):
            return -np.inf
        w_nat = np.exp(log_terms - m)
        z_shifted = w_nat.sum() / N
        loglik += m + np.log(z_shifted)
        W = w_nat / w_nat.sum()
    return float(loglik)


def surface_values_to_csv(path, thetas: Sequence[ParamVector],
                          values: Sequence[SurfaceValue],
                          param_names: Sequence[str],
                          comments: Optional[dict] = None,
                          repeat: Optional[Sequence[int]] = None) -> Path:
    """Emit grid evaluations as CSV: theta components, loglik, degenerate flag."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comments:
            for k in sorted(comments):
                f.write(f"# {k} = {comments[k]}\n")
        w = csv.writer(f)
        header = list(param_names) + ["loglik", "degenerate"]
        if repeat is not None:
            header = ["repeat"] + header
        w.writerow(header)
        for i, (theta, val) in enumerate(zip(thetas, values)):
            row = [fmt_float(v) for v in theta.values]
            row += [fmt_float(val.loglik), "1" if val.degenerate_at is not None else "0"]
            if repeat is not None:
                row = [str(repeat[i])] + row
            w.writerow(row)
    return path
