"""Deterministic maximization of a scalar objective over parameter vectors.

The default method is a Nelder-Mead style simplex search written here so
that tie-breaking, -inf ordering and termination are fully pinned down:
the surface being maximized is deterministic but may contain flat -inf
plateaus where gradient-based methods fail.  Components tagged
log-positive are optimized in log space.  A finite-difference BFGS mode
(delegating to scipy) is available for smooth problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ssm import ParamVector

__all__ = [
    "OptimizerConfig",
    "OptResult",
    "maximize",
    "to_unconstrained",
    "from_unconstrained",
]


def to_unconstrained(theta: ParamVector) -> np.ndarray:
    """Map to the unconstrained search space (log on log-positive tags)."""
    v = np.array(theta.values, dtype=np.float64)
    for i, tag in enumerate(theta.transforms):
        if tag == "log-positive":
            if v[i] <= 0.0:
                raise ValueError(f"component {i} tagged log-positive but {v[i]} <= 0")
            v[i] = np.log(v[i])
    return v


def from_unconstrained(v: np.ndarray, transforms: tuple[str, ...]) -> ParamVector:
    """Inverse of :func:`to_unconstrained`."""
    v = np.asarray(v, dtype=np.float64)
    out = v.copy()
    for i, tag in enumerate(transforms):
        if tag == "log-positive":
            out[i] = np.exp(v[i])
    return ParamVector(out, transforms)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`maximize`.

    ``initial_step`` (per component, in transformed space) defaults to
    max(0.1 * |v_i|, 0.1).  Convergence is declared when the simplex
    diameter has dropped below ``x_tolerance`` and the value spread below
    ``f_tolerance``.
    """

    method: str = "simplex-search"
    max_evals: int = 400
    x_tolerance: float = 1e-6
    f_tolerance: float = 1e-9
    initial_step: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.method not in ("simplex-search", "quasi-newton-fd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.x_tolerance <= 0.0 or self.f_tolerance <= 0.0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class OptResult:
    argmax: ParamVector
    value: float
    evals_used: int
    converged: bool
    termination_reason: str

    def summary(self) -> dict:
        return {
            "value": float(self.value),
            "evals_used": int(self.evals_used),
            "converged": bool(self.converged),
            "termination_reason": self.termination_reason,
        }


class _Budget:
    """Evaluation counter that stops the search at the cap."""

    def __init__(self, fn, limit):
        self.fn = fn
        self.limit = limit
        self.used = 0

    def __call__(self, v):
        if self.used >= self.limit:
            raise _BudgetExhausted
        self.used += 1
        val = float(self.fn(v))
        if np.isnan(val):
            raise FloatingPointError("objective returned NaN")
        return val


class _BudgetExhausted(Exception):
    pass


def maximize(objective: Callable[[ParamVector], float], theta_init: ParamVector,
             cfg: OptimizerConfig) -> OptResult:
    """Maximize a pure deterministic objective.

    The objective must be finite at ``theta_init`` (values of -inf
    elsewhere are permitted and are ordered below all reals).  Identical
    inputs produce identical results: the search involves no randomness
    and simplex ties are broken toward the lowest vertex index.
    """
    d = theta_init.d
    if cfg.max_evals < d + 1:
        raise ValueError(f"max_evals must be >= d+1 = {d + 1}")
    transforms = theta_init.transforms
    v0 = to_unconstrained(theta_init)

    def f(v):
        return objective(from_unconstrained(v, transforms))

    budget = _Budget(f, cfg.max_evals)
    f0 = budget(v0)
    if f0 == -np.inf:
        raise ValueError(
            "objective is -inf at theta_init; choose a different starting point"
        )

    if cfg.method == "quasi-newton-fd":
        v_best, f_best, converged, reason = _bfgs_fd(budget, v0, f0, cfg)
    else:
        v_best, f_best, converged, reason = _simplex(budget, v0, f0, cfg, d)

    return OptResult(
        argmax=from_unconstrained(v_best, transforms),
        value=f_best,
        evals_used=budget.used,
        converged=converged,
        termination_reason=reason,
    )


def _initial_steps(v0: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    if cfg.initial_step is not None:
        steps = np.asarray(cfg.initial_step, dtype=np.float64)
        if steps.shape != v0.shape:
            raise ValueError("initial_step length must match parameter dimension")
        return steps
    return np.maximum(0.1 * np.abs(v0), 0.1)


def _simplex(budget: _Budget, v0: np.ndarray, f0: float, cfg: OptimizerConfig,
             d: int) -> tuple[np.ndarray, float, bool, str]:
    # Standard reflection/expansion/contraction/shrink coefficients.
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    verts = [v0.copy()]
    vals = [f0]
    steps = _initial_steps(v0, cfg)
    try:
        for i in range(d):
            v = v0.copy()
            v[i] += steps[i]
            verts.append(v)
            vals.append(budget(v))
    except _BudgetExhausted:
        best = int(np.argmax(vals))
        return verts[best], vals[best], False, "max_evals"

    verts = np.asarray(verts)
    vals = np.asarray(vals)

    def sort():
        # Descending value; stable so equal values keep lower-index order.
        order = np.argsort(-vals, kind="stable")
        return verts[order], vals[order]

    verts, vals = sort()
    reason = "max_evals"
    converged = False
    try:
        while True:
            # Both criteria are required (a value-only test stops falsely
            # when two vertices straddle the optimum with equal values).
            diam = np.max(np.abs(verts[1:] - verts[0]))
            spread = vals[0] - vals[-1]
            if diam < cfg.x_tolerance and np.isfinite(spread) and spread < cfg.f_tolerance:
                converged, reason = True, "tolerance"
                break

            # Centroid over the finite-valued best d vertices; -inf never
            # enters the arithmetic (the best vertex is always finite).
            finite = np.isfinite(vals[:-1])
            centroid = verts[:-1][finite].mean(axis=0)

            vr = centroid + alpha * (centroid - verts[-1])
            fr = budget(vr)
            if fr > vals[0]:
                ve = centroid + gamma * (centroid - verts[-1])
                fe = budget(ve)
                if fe > fr:
                    verts[-1], vals[-1] = ve, fe
                else:
                    verts[-1], vals[-1] = vr, fr
            elif fr > vals[-2]:
                verts[-1], vals[-1] = vr, fr
            else:
                if fr > vals[-1]:
                    vc = centroid + rho * (vr - centroid)
                    fc = budget(vc)
                    accept = fc >= fr
                else:
                    vc = centroid - rho * (centroid - verts[-1])
                    fc = budget(vc)
                    accept = fc > vals[-1]
                if accept:
                    verts[-1], vals[-1] = vc, fc
                else:
                    for i in range(1, d + 1):
                        verts[i] = verts[0] + sigma * (verts[i] - verts[0])
                        vals[i] = budget(verts[i])
            verts, vals = sort()
    except _BudgetExhausted:
        pass

    return verts[0].copy(), float(vals[0]), converged, reason


def _bfgs_fd(budget: _Budget, v0: np.ndarray, f0: float,
             cfg: OptimizerConfig) -> tuple[np.ndarray, float, bool, str]:
    from scipy.optimize import minimize

    best = {"v": v0.copy(), "f": f0}

    def neg(v):
        try:
            val = budget(np.asarray(v, dtype=np.float64))
        except _BudgetExhausted:
            raise StopIteration
        if val > best["f"]:
            best["v"], best["f"] = np.asarray(v, dtype=np.float64).copy(), val
        return -val

    try:
        res = minimize(
            neg, v0, method="BFGS",
            options={"gtol": cfg.f_tolerance, "xrtol": cfg.x_tolerance,
                     "maxiter": cfg.max_evals},
        )
        converged = bool(res.success)
        reason = "x_tolerance" if converged else "max_evals"
    except StopIteration:
        converged, reason = False, "max_evals"
    return best["v"], best["f"], converged, reason
