"""Outer identification loop, final-estimate extraction and the SGD baseline.

Each outer iteration freezes a bootstrap particle system at the current
parameter, maximizes the deterministic local likelihood surface over that
system, and adopts the maximizer as the next iterate.  With finitely many
particles the iterates keep fluctuating around the maximum-likelihood
estimate, so the final estimate is taken as the mode of the histogram of
post-burn-in iterates pooled over repeats.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .filtering import WeightDegeneracy, run_frozen_bootstrap
from .optimize import (
    OptimizerConfig,
    from_unconstrained,
    maximize,
    to_unconstrained,
)
from .ssm import Dataset, ModelContract, ParamVector, RngStream, fmt_float
from .surface import build_surface

__all__ = [
    "IdentifyConfig",
    "IterationTrace",
    "EstimateSummary",
    "identify",
    "sgd_identify",
    "extract_estimate",
    "trace_to_csv",
    "trace_to_json",
    "summary_to_json",
]


@dataclass(frozen=True)
class IdentifyConfig:
    """Settings for one :func:`identify` run.

    Iteration k uses the stream ``stream_base + k`` of ``seed``, so
    systems are independent across iterations and the whole trace is a
    deterministic function of (config, seed).  Parallel repeats must use
    disjoint ``stream_base`` ranges.
    """

    K: int
    N: int
    seed: int
    stream_base: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    record_surface_grids: Optional[Sequence[ParamVector]] = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")


@dataclass
class IterationTrace:
    """Record of one outer-loop run.

    ``thetas`` holds theta_0..theta_K ((K+1, d) array); ``inner`` holds
    one diagnostics dict per iteration.  ``density_eval_units`` counts
    model density/sampling passes in units of N*T (one filter run = 2
    units, one surface evaluation = 2 units), used for budget-matched
    method comparisons.  An aborted run carries the truncated trace plus
    a diagnostic message.
    """

    thetas: np.ndarray
    transforms: tuple[str, ...]
    inner: list[dict]
    online_logliks: list[float]
    wall_ms: list[float]
    config: dict
    method: str = "identify"
    aborted_at: Optional[int] = None
    diagnostic: Optional[str] = None
    diverged: bool = False
    density_eval_units: float = 0.0

    @property
    def K(self) -> int:
        return self.thetas.shape[0] - 1

    def theta(self, k: int) -> ParamVector:
        return ParamVector(self.thetas[k], self.transforms)


def identify(model: ModelContract, data: Dataset, theta0: ParamVector,
             cfg: IdentifyConfig) -> IterationTrace:
    """Iterated frozen-surface maximization.

    For k = 1..K: freeze a bootstrap system at theta_{k-1} on a fresh
    stream, build the local surface, and maximize it starting from
    theta_{k-1}.  The inner optimizer never regresses from its start, so
    the surface value at theta_k is at least the online value at
    theta_{k-1} over the same system.  Convergence in one iteration is
    expected only in the many-particle limit; with finite N the full
    trace is recorded and summarized by :func:`extract_estimate`.

    Weight degeneracy at the initial parameter raises ``ValueError``
    (choose a better theta0); degeneracy at a later iteration aborts and
    returns the trace up to k-1 with a diagnostic.
    """
    model.validate_theta(theta0)
    thetas = [np.array(theta0.values)]
    inner: list[dict] = []
    onlines: list[float] = []
    walls: list[float] = []
    units = 0.0
    aborted_at = None
    diagnostic = None

    theta = theta0
    for k in range(1, cfg.K + 1):
        t0 = time.perf_counter()
        stream = RngStream(cfg.seed, cfg.stream_base + k)
        try:
            system = run_frozen_bootstrap(model, theta, cfg.N, data, stream)
        except WeightDegeneracy as e:
            if k == 1:
                raise ValueError(
                    f"weight degeneracy at theta0={theta0} (t={e.step}); "
                    "choose a different starting point"
                ) from e
            aborted_at = k
            diagnostic = f"weight degeneracy at iteration {k}, t={e.step}"
            break
        surface = build_surface(system, model, data)
        units += 2.0

        res = maximize(lambda th: surface.evaluate(th).loglik, theta, cfg.optimizer)
        units += 2.0 * res.evals_used

        rec = res.summary()
        if cfg.record_surface_grids is not None:
            grid_vals = surface.evaluate_grid(cfg.record_surface_grids)
            rec["grid_logliks"] = [v.loglik for v in grid_vals]
            units += 2.0 * len(grid_vals)
        inner.append(rec)
        onlines.append(system.online_loglik)
        walls.append(1e3 * (time.perf_counter() - t0))
        theta = res.argmax
        thetas.append(np.array(theta.values))

    return IterationTrace(
        thetas=np.asarray(thetas),
        transforms=theta0.transforms,
        inner=inner,
        online_logliks=onlines,
        wall_ms=walls,
        config={
            "method": "identify", "K": cfg.K, "N": cfg.N, "seed": cfg.seed,
            "stream_base": cfg.stream_base,
            "optimizer": {
                "method": cfg.optimizer.method,
                "max_evals": cfg.optimizer.max_evals,
                "x_tolerance": cfg.optimizer.x_tolerance,
                "f_tolerance": cfg.optimizer.f_tolerance,
            },
            "theta0": list(map(float, theta0.values)),
        },
        aborted_at=aborted_at,
        diagnostic=diagnostic,
        density_eval_units=units,
    )


def sgd_identify(model: ModelContract, data: Dataset, theta0: ParamVector,
                 steps: int, N: int, gamma0: float, alpha: float,
                 rng: RngStream,
                 objective_hook: Optional[Callable] = None) -> IterationTrace:
    """Stochastic-gradient ascent baseline.

    At each step a fresh system is frozen at the current iterate and the
    finite-difference gradient of the local surface is taken at that same
    point (a deterministic quantity given the system); the iterate moves
    by gamma_k * gradient with the Robbins-Monro schedule
    gamma_k = gamma0 / k**alpha, working in the transformed
    (unconstrained) parameter space.  Non-finite gradients skip the step
    with a flag; weight degeneracy or a runaway iterate flags divergence
    and stops, never raises.

    ``objective_hook(theta_ref, k) -> callable`` replaces the frozen
    surface objective (testing seam).
    """
    model.validate_theta(theta0)
    if gamma0 <= 0.0:
        raise ValueError("gamma0 must be > 0")
    if not (0.5 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0.5, 1]")

    transforms = theta0.transforms
    d = theta0.d
    # Runaway bound per component: log-positive ones overflow exp long
    # before the generic magnitude limit.
    v_limit = np.where(
        np.array([tag == "log-positive" for tag in transforms]), 300.0, 1e8
    )
    thetas = [np.array(theta0.values)]
    inner: list[dict] = []
    onlines: list[float] = []
    walls: list[float] = []
    units = 0.0
    diverged = False
    diagnostic = None

    v = to_unconstrained(theta0)
    h = 1e-4
    for k in range(1, steps + 1):
        t0 = time.perf_counter()
        theta = ParamVector(thetas[-1], transforms)
        if objective_hook is not None:
            objective = objective_hook(theta, k)
            online = objective(theta)
        else:
            try:
                system = run_frozen_bootstrap(
                    model, theta, N, data, rng.child(k)
                )
            except WeightDegeneracy as e:
                diverged = True
                diagnostic = f"weight degeneracy at step {k}, t={e.step}"
                break
            surface = build_surface(system, model, data)
            objective = lambda th: surface.evaluate(th).loglik
            online = system.online_loglik
            units += 2.0

        grad = np.empty(d)
        for i in range(d):
            step = h * max(1.0, abs(v[i]))
            vp, vm = v.copy(), v.copy()
            vp[i] += step
            vm[i] -= step
            fp = objective(from_unconstrained(vp, transforms))
            fm = objective(from_unconstrained(vm, transforms))
            grad[i] = (fp - fm) / (2.0 * step)
        if objective_hook is None:
            units += 2.0 * (2 * d)

        gamma = gamma0 / k**alpha
        skipped = not np.all(np.isfinite(grad))
        if not skipped:
            v = v + gamma * grad
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > v_limit):
            diverged = True
            diagnostic = f"iterate diverged at step {k}"
            inner.append({"gamma": gamma, "grad_norm": float(np.max(np.abs(grad))),
                          "skipped": skipped})
            onlines.append(float(online))
            walls.append(1e3 * (time.perf_counter() - t0))
            break

        theta_next = from_unconstrained(v, transforms)
        thetas.append(np.array(theta_next.values))
        inner.append({"gamma": gamma, "grad_norm": float(np.max(np.abs(grad))),
                      "skipped": skipped})
        onlines.append(float(online))
        walls.append(1e3 * (time.perf_counter() - t0))

    return IterationTrace(
        thetas=np.asarray(thetas),
        transforms=transforms,
        inner=inner,
        online_logliks=onlines,
        wall_ms=walls,
        config={
            "method": "sgd", "steps": steps, "N": N, "gamma0": gamma0,
            "alpha": alpha, "seed": rng.seed, "stream_base": rng.stream,
            "theta0": list(map(float, theta0.values)),
        },
        method="sgd",
        diverged=diverged,
        diagnostic=diagnostic,
        density_eval_units=units,
    )


# ---------------------------------------------------------------------------
# Final-estimate extraction: mode of the pooled post-burn-in histogram.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateSummary:
    """Histogram mode extraction result.

    ``theta_hat[i]`` is the center of the highest-count bin of component
    i over all post-burn-in iterates pooled across traces.
    """

    theta_hat: ParamVector
    burn_in: int
    bin_edges: list[np.ndarray]
    counts: list[np.ndarray]
    mode_bin: tuple[int, ...]
    samples_used: int


def extract_estimate(traces: Sequence[IterationTrace], burn_in: int,
                     bins: int = 50) -> EstimateSummary:
    """Pool post-burn-in iterates and take the per-component histogram mode.

    Keeps theta_k for k > burn_in from every trace, bins each component
    over its pooled [min, max] range with ``bins`` equal-width bins, and
    returns the center of the highest-count bin.  Ties are broken toward
    the bin whose neighborhood (bin plus adjacent bins) holds more mass,
    then toward the lower index.  The result is invariant to the order of
    the pooled samples.
    """
    if isinstance(traces, IterationTrace):
        traces = [traces]
    if not traces:
        raise ValueError("at least one trace is required")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    pool = [tr.thetas[burn_in + 1 :] for tr in traces if tr.thetas.shape[0] > burn_in + 1]
    if not pool:
        raise ValueError(f"no samples remain after burn-in {burn_in}")
    samples = np.concatenate(pool, axis=0)
    n, d = samples.shape
    if n < bins:
        raise ValueError(f"{n} post-burn-in samples < {bins} bins")

    theta_hat = np.empty(d)
    edges_out, counts_out, modes = [], [], []
    for i in range(d):
        col = samples[:, i]
        lo, hi = float(col.min()), float(col.max())
        if lo == hi:
            edges = np.array([lo - 0.5, lo + 0.5])
            counts = np.array([n])
        else:
            edges = np.linspace(lo, hi, bins + 1)
            counts, _ = np.histogram(col, bins=edges)
        mode = _mode_bin(counts)
        theta_hat[i] = 0.5 * (edges[mode] + edges[mode + 1])
        edges_out.append(edges)
        counts_out.append(counts)
        modes.append(mode)

    return EstimateSummary(
        theta_hat=ParamVector(theta_hat, traces[0].transforms),
        burn_in=burn_in,
        bin_edges=edges_out,
        counts=counts_out,
        mode_bin=tuple(modes),
        samples_used=n,
    )


def _mode_bin(counts: np.ndarray) -> int:
    top = counts.max()
    candidates = np.flatnonzero(counts == top)
    if candidates.size == 1:
        return int(candidates[0])
    padded = np.concatenate([[0], counts, [0]])
    hood = padded[candidates] + counts[candidates] + padded[candidates + 2]
    return int(candidates[np.argmax(hood)])  # argmax takes the first (lowest index)


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------

def trace_to_csv(trace: IterationTrace, path, param_names: Sequence[str],
                 include_wall: bool = True, comments: Optional[dict] = None) -> Path:
    """Per-iteration CSV: k, theta components, inner value, online loglik, wall ms."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comments:
            for key in sorted(comments):
                f.write(f"# {key} = {comments[key]}\n")
        w = csv.writer(f)
        header = ["k"] + list(param_names) + ["inner_value", "online_loglik"]
        if include_wall:
            header.append("wall_ms")
        w.writerow(header)
        for k in range(trace.thetas.shape[0]):
            row = [str(k)] + [fmt_float(v) for v in trace.thetas[k]]
            if k == 0:
                row += ["", ""]
            else:
                val = trace.inner[k - 1].get("value", "")
                row += [fmt_float(val) if val != "" else "",
                        fmt_float(trace.online_logliks[k - 1])]
            if include_wall:
                row.append(fmt_float(trace.wall_ms[k - 1]) if k > 0 else "")
            w.writerow(row)
    return path


def trace_to_json(trace: IterationTrace, path) -> Path:
    path = Path(path)
    doc = {
        "config": trace.config,
        "method": trace.method,
        "thetas": [list(map(float, row)) for row in trace.thetas],
        "transforms": list(trace.transforms),
        "inner": trace.inner,
        "online_logliks": list(map(float, trace.online_logliks)),
        "aborted_at": trace.aborted_at,
        "diagnostic": trace.diagnostic,
        "diverged": trace.diverged,
        "density_eval_units": trace.density_eval_units,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def summary_to_json(summary: EstimateSummary, path,
                    param_names: Sequence[str],
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    doc = {
        "theta_hat": list(map(float, summary.theta_hat.values)),
        "param_names": list(param_names),
        "burn_in": summary.burn_in,
        "samples_used": summary.samples_used,
        "mode_bin": list(summary.mode_bin),
        "histograms": [
            {
                "param": param_names[i],
                "bin_edges": list(map(float, summary.bin_edges[i])),
                "counts": list(map(int, summary.counts[i])),
            }
            for i in range(len(param_names))
        ],
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
