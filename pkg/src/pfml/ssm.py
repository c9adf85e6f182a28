"""State-space model contract, parameter vectors, datasets and seeded RNG streams.

Everything downstream (filtering, surface re-evaluation, identification)
is built on the types defined here.  A model is a bundle of vectorized
callables (samplers and log-densities); a dataset is an observation
record with optional simulation ground truth; randomness is always
addressed as an explicit ``(seed, stream)`` pair so that any run can be
reproduced bit-for-bit from metadata alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TRANSFORM_TAGS",
    "ParamVector",
    "RngStream",
    "ModelContract",
    "Dataset",
    "simulate",
    "log_joint",
    "save_dataset",
    "load_dataset",
    "fmt_float",
]

TRANSFORM_TAGS = ("unconstrained", "log-positive")


def fmt_float(v: float) -> str:
    """Shortest round-trip decimal representation of a double."""
    return repr(float(v))


@dataclass(frozen=True)
class ParamVector:
    """Parameter vector with per-component transform tags.

    Components tagged ``log-positive`` must be strictly positive in
    natural space; they are optimized in log space.  The length is fixed
    per model and must be identical across all evaluations belonging to
    one experiment.
    """

    values: np.ndarray
    transforms: tuple[str, ...] = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if not self.transforms:
            object.__setattr__(self, "transforms", ("unconstrained",) * vals.size)
        if len(self.transforms) != vals.size:
            raise ValueError(
                f"transforms length {len(self.transforms)} != values length {vals.size}"
            )
        for tag in self.transforms:
            if tag not in TRANSFORM_TAGS:
                raise ValueError(f"unknown transform tag {tag!r}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter values must be finite")
        for v, tag in zip(vals, self.transforms):
            if tag == "log-positive" and v <= 0.0:
                raise ValueError(f"log-positive component must be > 0, got {v}")

    @property
    def d(self) -> int:
        return self.values.size

    def replace_values(self, values) -> "ParamVector":
        """Same transform tags, new component values."""
        return ParamVector(np.asarray(values, dtype=np.float64), self.transforms)

    def __repr__(self):
        vals = ", ".join(fmt_float(v) for v in self.values)
        return f"ParamVector([{vals}])"


@dataclass(frozen=True)
class RngStream:
    """Address of a reproducible random stream.

    Backed by the counter-based Philox generator keyed directly with the
    128-bit pair ``(seed, stream)``: identical pairs give bit-identical
    draw sequences on every platform, and distinct stream ids give
    statistically independent streams.  Freezing randomness therefore
    reduces to storing two integers.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RngStream":
        """Stream with id ``stream + offset`` (same seed)."""
        return RngStream(self.seed, (self.stream + offset) % 2**64)


@dataclass(frozen=True)
class ModelContract:
    """User-supplied densities and samplers defining a state-space model.

    All callables are vectorized over a leading particle axis: states are
    ``(n, state_dim)`` arrays, log-densities return ``(n,)`` arrays.  The
    time argument ``t`` (1-based step index of the state being produced)
    may be a scalar or an ``(n,)`` integer array and must broadcast; any
    exogenous input u_t is absorbed through ``t``.

    Fields
    ------
    init_sample : (rng, n) -> (n, state_dim)
        Draws from the initial distribution p(x0).  Takes no parameters:
        the initial state is theta-independent by contract.
    trans_sample : (theta, x_prev, t, rng) -> (n, state_dim)
        Draws from the transition density f(x_t | x_{t-1}).
    trans_logdensity : (theta, x_next, x_prev, t) -> (n,)
        Exact log-density of ``trans_sample``'s distribution.
    obs_logdensity : (theta, y, x, t) -> (n,)
        Observation log-density g(y_t | x_t); ``y`` is ``(obs_dim,)`` or
        ``(n, obs_dim)``.
    obs_sample : (theta, x, t, rng) -> (n, obs_dim)
        Observation sampler, consistent with ``obs_logdensity``.
    input_fn : (t) -> (input_dim,) array, optional
        Exogenous input u_t; part of the model definition.
    """

    name: str
    state_dim: int
    obs_dim: int
    param_names: tuple[str, ...]
    param_transforms: tuple[str, ...]
    init_sample: Callable
    trans_sample: Callable
    trans_logdensity: Callable
    obs_logdensity: Callable
    obs_sample: Callable
    input_fn: Optional[Callable] = None
    theta_true: Optional[ParamVector] = None

    def validate_theta(self, theta: ParamVector) -> None:
        if theta.d != len(self.param_names):
            raise ValueError(
                f"model {self.name!r} expects {len(self.param_names)} parameters, "
                f"got {theta.d}"
            )
        if theta.transforms != self.param_transforms:
            raise ValueError(
                f"transform tags {theta.transforms} do not match model "
                f"{self.name!r} ({self.param_transforms})"
            )

    def make_theta(self, values) -> ParamVector:
        return ParamVector(np.asarray(values, dtype=np.float64), self.param_transforms)


@dataclass(frozen=True)
class Dataset:
    """Observation record, with simulation ground truth when available.

    ``y`` has shape (T, obs_dim).  ``x`` (when present) is the full state
    trajectory x_{0:T} with shape (T+1, state_dim).  ``u`` stores the
    exogenous input sequence u_{1:T} for self-description of models that
    have one.
    """

    y: np.ndarray
    x: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    theta_true: Optional[ParamVector] = None
    seed_info: Optional[tuple[int, int]] = None
    model_name: Optional[str] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "y", y)
        if self.x is not None:
            x = np.asarray(self.x, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != y.shape[0] + 1:
                raise ValueError(
                    f"trajectory has {x.shape[0]} rows, expected T+1={y.shape[0] + 1}"
                )
            object.__setattr__(self, "x", x)
        if self.u is not None:
            u = np.asarray(self.u, dtype=np.float64)
            if u.ndim == 1:
                u = u[:, None]
            if u.shape[0] != y.shape[0]:
                raise ValueError("input sequence length must equal T")
            object.__setattr__(self, "u", u)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.y.shape[1]


def simulate(model: ModelContract, theta: ParamVector, T: int, rng: RngStream) -> Dataset:
    """Draw a trajectory and observations by ancestral sampling.

    x0 ~ p(x0), then x_t ~ f(. | x_{t-1}) and y_t ~ g(. | x_t) for
    t = 1..T, all from a single generator so the whole dataset is a
    deterministic function of ``rng``.

    Raises
    ------
    FloatingPointError
        If the propagated state becomes non-finite (numerically unstable
        model/parameter combination); the message names t and theta.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    model.validate_theta(theta)
    g = rng.generator()

    x = np.empty((T + 1, model.state_dim))
    y = np.empty((T, model.obs_dim))
    x[0] = model.init_sample(g, 1)[0]
    for t in range(1, T + 1):
        xt = model.trans_sample(theta, x[t - 1 : t], t, g)
        if not np.all(np.isfinite(xt)):
            raise FloatingPointError(
                f"simulate: non-finite state at t={t} for theta={theta} "
                f"(model {model.name!r})"
            )
        x[t] = xt[0]
        y[t - 1] = model.obs_sample(theta, x[t : t + 1], t, g)[0]

    u = None
    if model.input_fn is not None:
        u = np.stack([np.atleast_1d(model.input_fn(t)) for t in range(1, T + 1)])
    return Dataset(
        y=y, x=x, u=u, theta_true=theta,
        seed_info=(rng.seed, rng.stream), model_name=model.name,
    )


def log_joint(model: ModelContract, theta: ParamVector, data: Dataset) -> float:
    """Log of the complete-data density along the stored trajectory.

    Returns sum_t log f(x_t|x_{t-1}) + sum_t log g(y_t|x_t).  The p(x0)
    factor is excluded (it carries no parameter information).  Requires a
    dataset with a full state trajectory.
    """
    if data.x is None:
        raise ValueError("log_joint requires a dataset with a state trajectory")
    model.validate_theta(theta)
    T = data.T
    tvec = np.arange(1, T + 1)
    lf = model.trans_logdensity(theta, data.x[1:], data.x[:-1], tvec)
    lg = model.obs_logdensity(theta, data.y, data.x[1:], tvec)
    return float(np.sum(lf) + np.sum(lg))


# ---------------------------------------------------------------------------
# Serialization: CSV with a JSON sidecar.
# ---------------------------------------------------------------------------

_DATASET_FORMAT = "pfml-dataset-v1"


def save_dataset(data: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (t, y_*, optional x_*, optional u_*) plus a
    ``<path>.json`` sidecar carrying T, dims, theta_true, seed and x0."""
    path = Path(path)
    if path.suffix == ".csv":
        path = path.with_suffix("")
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")

    header = ["t"] + [f"y_{i + 1}" for i in range(data.obs_dim)]
    if data.x is not None:
        header += [f"x_{i + 1}" for i in range(data.x.shape[1])]
    if data.u is not None:
        header += [f"u_{i + 1}" for i in range(data.u.shape[1])]

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t in range(1, data.T + 1):
            row = [str(t)] + [fmt_float(v) for v in data.y[t - 1]]
            if data.x is not None:
                row += [fmt_float(v) for v in data.x[t]]
            if data.u is not None:
                row += [fmt_float(v) for v in data.u[t - 1]]
            w.writerow(row)

    meta = {
        "format": _DATASET_FORMAT,
        "model": data.model_name,
        "T": data.T,
        "obs_dim": data.obs_dim,
        "state_dim": None if data.x is None else int(data.x.shape[1]),
        "input_dim": None if data.u is None else int(data.u.shape[1]),
        "theta_true": None if data.theta_true is None else list(map(float, data.theta_true.values)),
        "transforms": None if data.theta_true is None else list(data.theta_true.transforms),
        "seed": None if data.seed_info is None else int(data.seed_info[0]),
        "stream": None if data.seed_info is None else int(data.seed_info[1]),
        "x0": None if data.x is None else list(map(float, data.x[0])),
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return csv_path, json_path


def load_dataset(path) -> Dataset:
    """Inverse of :func:`save_dataset`."""
    path = Path(path)
    if path.suffix == ".csv":
        path = path.with_suffix("")
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    with open(json_path, encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format") != _DATASET_FORMAT:
        raise ValueError(f"unrecognized dataset format {meta.get('format')!r}")

    with open(csv_path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    cols = {name: i for i, name in enumerate(header)}
    T = meta["T"]
    if len(body) != T:
        raise ValueError(f"expected {T} rows, found {len(body)}")

    def grab(prefix, dim):
        out = np.empty((T, dim))
        for t, row in enumerate(body):
            for i in range(dim):
                out[t, i] = float(row[cols[f"{prefix}_{i + 1}"]])
        return out

    y = grab("y", meta["obs_dim"])
    x = None
    if meta["state_dim"] is not None:
        xs = grab("x", meta["state_dim"])
        x = np.vstack([np.asarray(meta["x0"], dtype=np.float64)[None, :], xs])
    u = grab("u", meta["input_dim"]) if meta["input_dim"] is not None else None
    theta = None
    if meta["theta_true"] is not None:
        theta = ParamVector(meta["theta_true"], tuple(meta["transforms"]))
    seed_info = None
    if meta["seed"] is not None:
        seed_info = (meta["seed"], meta["stream"])
    return Dataset(y=y, x=x, u=u, theta_true=theta, seed_info=seed_info,
                   model_name=meta["model"])
