"""Command-line front end.

Subcommands::

    pfml simulate      write a simulated dataset (CSV + JSON sidecar)
    pfml identify      run repeated identification on a dataset
    pfml grid          evaluate likelihood surfaces over a parameter grid
    pfml compare-sgd   budget-matched comparison against the SGD baseline
    pfml replicate-ex1 end-to-end run of the first benchmark experiment
    pfml replicate-ex2 end-to-end run of the second benchmark experiment

Settings come from an optional key=value config file plus flags (flags
win).  ``PFML_SEED`` is used when no seed is given anywhere.  All output
files embed the resolved configuration and every stream id used, so any
run can be reproduced from its outputs alone.

Exit codes: 0 success, 2 configuration error, 3 runtime degeneracy with
no completed repeat.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .filtering import WeightDegeneracy, run_frozen_bootstrap
from .identify import (
    IdentifyConfig,
    extract_estimate,
    identify,
    sgd_identify,
    summary_to_json,
    trace_to_csv,
    trace_to_json,
)
from .models import MODEL_NAMES, get_model, kalman_loglik, LgssModel
from .optimize import OptimizerConfig
from .ssm import Dataset, ParamVector, RngStream, fmt_float, load_dataset, save_dataset, simulate
from .surface import build_surface, surface_values_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3

# Stream-id allocation (all ids below 2**24 are reserved for shared work;
# repeat r owns the block starting at (r+1) << 24).
STREAM_DATA = 1
STREAM_GRID_BASE = 0x100000
STREAM_SCATTER_BASE = 0x200000
SGD_STREAM_OFFSET = 1 << 23


def _repeat_stream_base(repeat: int) -> int:
    return (repeat + 1) << 24


class ConfigError(Exception):
    pass


_THETA0_INTERVALS = {
    # (low, high) per component; sampling is uniform, open at zero for
    # log-positive components.
    "example1": ((10.0, 0.0), (40.0, 4.0)),
    "example2": ((0.1, -4.0), (1.0, -0.5)),
    "lgss": ((-0.9,), (0.9,)),
}


@dataclass
class ExperimentConfig:
    model: str = "example1"
    T: int = 100
    N: int = 100
    K: int = 50
    repeats: int = 20
    seed: int = 0
    burn_in: int = 25
    bins: int = 50
    workers: int = 0                      # 0 -> logical cores
    out: Path = Path(".")
    data: Optional[Path] = None
    theta_true: Optional[tuple[float, ...]] = None
    theta0: Optional[tuple[float, ...]] = None
    theta0_low: Optional[tuple[float, ...]] = None
    theta0_high: Optional[tuple[float, ...]] = None
    theta_ref: Optional[tuple[float, ...]] = None
    grid: Optional[str] = None
    max_evals: int = 400
    x_tol: float = 1e-6
    f_tol: float = 1e-9
    gamma0: float = 0.05
    alpha: float = 0.7
    sgd_steps: int = 0                    # 0 -> matched to identify budget

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_evals=self.max_evals, x_tolerance=self.x_tol,
                               f_tolerance=self.f_tol)

    def effective_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def as_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[k] = v
        d["version"] = __version__
        return d

    def validate(self, need_data: bool = False) -> None:
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODEL_NAMES}")
        for name in ("T", "N", "K", "repeats"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if need_data:
            if self.data is None:
                raise ConfigError("a dataset path is required (--data or config key data)")
            if not Path(self.data).with_suffix(".json").exists():
                raise ConfigError(f"dataset sidecar not found for {self.data}")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {self.out}: {e}") from e
        probe = self.out / ".pfml-writable"
        try:
            probe.touch()
            probe.unlink()
        except OSError as e:
            raise ConfigError(f"output directory {self.out} is not writable: {e}") from e


_TUPLE_KEYS = ("theta_true", "theta0", "theta0_low", "theta0_high", "theta_ref")
_INT_KEYS = ("T", "N", "K", "repeats", "seed", "burn_in", "bins", "workers",
             "max_evals", "sgd_steps")
_FLOAT_KEYS = ("x_tol", "f_tol", "gamma0", "alpha")
_PATH_KEYS = ("out", "data")
_STR_KEYS = ("model", "grid")


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _TUPLE_KEYS:
        return tuple(float(v) for v in raw.split(","))
    if key in _PATH_KEYS:
        return Path(raw)
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown config key {key!r}")


def load_config_file(path: Path) -> dict:
    """Parse a key=value experiment file ('#' starts a comment)."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, raw)
    return out


def resolve_config(args: argparse.Namespace, defaults: Optional[dict] = None) -> ExperimentConfig:
    """Defaults < config file < flags; PFML_SEED fills a missing seed."""
    cfg = ExperimentConfig()
    for k, v in (defaults or {}).items():
        setattr(cfg, k, v)
    seed_given = "seed" in (defaults or {})
    if getattr(args, "config", None):
        for k, v in load_config_file(args.config).items():
            setattr(cfg, k, v)
            seed_given = seed_given or k == "seed"
    for k in list(cfg.__dict__):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, _coerce(k, v) if isinstance(v, str) and k in _TUPLE_KEYS else v)
            seed_given = seed_given or k == "seed"
    if not seed_given and "PFML_SEED" in os.environ:
        try:
            cfg.seed = int(os.environ["PFML_SEED"])
        except ValueError as e:
            raise ConfigError(f"PFML_SEED is not an integer: {e}") from e
    if isinstance(cfg.out, str):
        cfg.out = Path(cfg.out)
    if isinstance(cfg.data, str):
        cfg.data = Path(cfg.data)
    return cfg


# ---------------------------------------------------------------------------
# Shared helpers.
# ---------------------------------------------------------------------------

def _model_for(cfg: ExperimentConfig):
    return get_model(cfg.model, T=cfg.T)


def _theta_true(cfg: ExperimentConfig, model) -> ParamVector:
    if cfg.theta_true is not None:
        return model.make_theta(cfg.theta_true)
    if model.theta_true is None:
        raise ConfigError(f"model {cfg.model!r} needs an explicit theta_true")
    return model.theta_true


def _theta0_intervals(cfg: ExperimentConfig, model) -> tuple[np.ndarray, np.ndarray]:
    low = cfg.theta0_low if cfg.theta0_low is not None else _THETA0_INTERVALS[cfg.model][0]
    high = cfg.theta0_high if cfg.theta0_high is not None else _THETA0_INTERVALS[cfg.model][1]
    low, high = np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64)
    if low.shape != high.shape or low.size != len(model.param_names):
        raise ConfigError("theta0 interval length must match the model's parameter count")
    return low, high


def _sample_theta0(cfg: ExperimentConfig, model, repeat: int) -> ParamVector:
    """Uniform on the initialization box, half-open at zero so log-positive
    components stay strictly positive."""
    if cfg.theta0 is not None:
        return model.make_theta(cfg.theta0)
    low, high = _theta0_intervals(cfg, model)
    g = RngStream(cfg.seed, _repeat_stream_base(repeat)).generator()
    u = g.random(low.size)
    vals = high - u * (high - low)   # in (low, high], never exactly low
    return model.make_theta(vals)


def _identify_worker(payload: dict) -> dict:
    """Top-level so it pickles into worker processes; rebuilds the model
    from its name and returns either a trace or a failure record."""
    cfg_d = payload["cfg"]
    model = get_model(cfg_d["model"], T=cfg_d["T"])
    data = load_dataset(payload["data_path"])
    theta0 = model.make_theta(payload["theta0"])
    icfg = IdentifyConfig(
        K=cfg_d["K"], N=cfg_d["N"], seed=cfg_d["seed"],
        stream_base=payload["stream_base"],
        optimizer=OptimizerConfig(max_evals=cfg_d["max_evals"],
                                  x_tolerance=cfg_d["x_tol"],
                                  f_tolerance=cfg_d["f_tol"]),
    )
    try:
        trace = identify(model, data, theta0, icfg)
        return {"repeat": payload["repeat"], "ok": True, "trace": trace}
    except (ValueError, WeightDegeneracy, FloatingPointError) as e:
        return {"repeat": payload["repeat"], "ok": False, "error": str(e)}


def _sgd_worker(payload: dict) -> dict:
    cfg_d = payload["cfg"]
    model = get_model(cfg_d["model"], T=cfg_d["T"])
    data = load_dataset(payload["data_path"])
    theta0 = model.make_theta(payload["theta0"])
    trace = sgd_identify(
        model, data, theta0, steps=payload["steps"], N=cfg_d["N"],
        gamma0=cfg_d["gamma0"], alpha=cfg_d["alpha"],
        rng=RngStream(cfg_d["seed"], payload["stream_base"]),
    )
    return {"repeat": payload["repeat"], "ok": True, "trace": trace}


def _run_pool(worker, payloads: list[dict], workers: int) -> list[dict]:
    if workers <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, payloads))


def _run_identify_repeats(cfg: ExperimentConfig, model, data_path: Path) -> list[dict]:
    payloads = []
    for r in range(cfg.repeats):
        theta0 = _sample_theta0(cfg, model, r)
        payloads.append({
            "cfg": {k: (str(v) if isinstance(v, Path) else v)
                    for k, v in cfg.as_dict().items()},
            "data_path": str(data_path),
            "theta0": list(map(float, theta0.values)),
            "stream_base": _repeat_stream_base(r),
            "repeat": r,
        })
    return _run_pool(_identify_worker, payloads, cfg.effective_workers())


# Execution-location details are not part of the experiment definition and
# would break byte-identical reruns into different directories.
_NON_EXPERIMENT_KEYS = ("out", "data", "workers")


def _comment_block(cfg: ExperimentConfig, extra: Optional[dict] = None) -> dict:
    block = {k: v for k, v in cfg.as_dict().items()
             if v is not None and k not in _NON_EXPERIMENT_KEYS}
    if extra:
        block.update(extra)
    return block


def _write_manifest(cfg: ExperimentConfig, path: Path, command: str,
                    results: Optional[list[dict]] = None,
                    outputs: Optional[list[str]] = None,
                    extra: Optional[dict] = None) -> None:
    doc = {
        "command": command,
        "config": cfg.as_dict(),
        "data_stream": STREAM_DATA,
        "outputs": outputs or [],
    }
    if results is not None:
        doc["repeats"] = [
            {
                "repeat": r["repeat"],
                "ok": r["ok"],
                "stream_base": _repeat_stream_base(r["repeat"]),
                "theta0": (list(map(float, r["trace"].thetas[0]))
                           if r["ok"] else None),
                "error": r.get("error"),
            }
            for r in results
        ]
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _traces_csv(path: Path, results: list[dict], param_names: Sequence[str],
                comments: dict) -> None:
    """Pooled trace table: repeat, k, theta components, diagnostics."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        for k in sorted(comments):
            f.write(f"# {k} = {comments[k]}\n")
        w = csv.writer(f)
        w.writerow(["repeat", "k"] + list(param_names) + ["inner_value", "online_loglik"])
        for r in results:
            if not r["ok"]:
                continue
            tr = r["trace"]
            for k in range(tr.thetas.shape[0]):
                row = [str(r["repeat"]), str(k)]
                row += [fmt_float(v) for v in tr.thetas[k]]
                if k == 0:
                    row += ["", ""]
                else:
                    row += [fmt_float(tr.inner[k - 1]["value"]),
                            fmt_float(tr.online_logliks[k - 1])]
                w.writerow(row)


def _hist_csv(path: Path, summary, param_names: Sequence[str], comments: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for k in sorted(comments):
            f.write(f"# {k} = {comments[k]}\n")
        w = csv.writer(f)
        w.writerow(["param", "bin_index", "bin_lo", "bin_hi", "count"])
        for i, name in enumerate(param_names):
            edges, counts = summary.bin_edges[i], summary.counts[i]
            for j in range(len(counts)):
                w.writerow([name, str(j), fmt_float(edges[j]),
                            fmt_float(edges[j + 1]), str(int(counts[j]))])


def _parse_grid(spec: str, theta_ref: ParamVector) -> list[ParamVector]:
    """Grid spec: semicolon-separated 'index:start:stop:count' axes;
    unspecified components stay at theta_ref."""
    axes = []
    for part in spec.split(";"):
        fields = part.strip().split(":")
        if len(fields) != 4:
            raise ConfigError(f"bad grid axis {part!r}; expected index:start:stop:count")
        idx, start, stop, count = int(fields[0]), float(fields[1]), float(fields[2]), int(fields[3])
        if not (0 <= idx < theta_ref.d):
            raise ConfigError(f"grid axis index {idx} out of range")
        if count < 1:
            raise ConfigError("grid axis count must be >= 1")
        axes.append((idx, np.linspace(start, stop, count)))
    thetas = []
    mesh = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    flat = [m.reshape(-1) for m in mesh]
    for row in zip(*flat):
        vals = np.array(theta_ref.values)
        for (idx, _), v in zip(axes, row):
            vals[idx] = v
        thetas.append(theta_ref.replace_values(vals))
    return thetas


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig) -> int:
    cfg.validate()
    model = _model_for(cfg)
    theta = _theta_true(cfg, model)
    data = simulate(model, theta, cfg.T, RngStream(cfg.seed, STREAM_DATA))
    csv_path, json_path = save_dataset(data, cfg.out / "dataset")
    print(f"wrote {csv_path} and {json_path} (seed={cfg.seed}, stream={STREAM_DATA})")
    return EXIT_OK


def cmd_identify(cfg: ExperimentConfig) -> int:
    cfg.validate(need_data=True)
    model = _model_for(cfg)
    data_path = Path(cfg.data)
    results = _run_identify_repeats(cfg, model, data_path)

    comments = _comment_block(cfg)
    outputs = []
    for r in results:
        if not r["ok"]:
            print(f"repeat {r['repeat']}: aborted ({r['error']})", file=sys.stderr)
            continue
        p = cfg.out / f"trace_r{r['repeat']:03d}.csv"
        trace_to_csv(r["trace"], p, model.param_names,
                     comments={**comments, "repeat": r["repeat"],
                               "stream_base": _repeat_stream_base(r["repeat"])})
        trace_to_json(r["trace"], p.with_suffix(".json"))
        outputs += [p.name, p.with_suffix(".json").name]

    completed = [r["trace"] for r in results if r["ok"]]
    if completed:
        try:
            summary = extract_estimate(completed, cfg.burn_in, cfg.bins)
            sp = cfg.out / "estimate_summary.json"
            summary_to_json(summary, sp, model.param_names,
                            extra={"config": cfg.as_dict()})
            outputs.append(sp.name)
            vals = ", ".join(f"{n}={fmt_float(v)}" for n, v in
                             zip(model.param_names, summary.theta_hat.values))
            print(f"estimate: {vals} (pooled {summary.samples_used} samples)")
        except ValueError as e:
            print(f"estimate extraction skipped: {e}", file=sys.stderr)
    _write_manifest(cfg, cfg.out / "run_manifest.json", "identify",
                    results=results, outputs=outputs)
    if not completed:
        print("no repeat completed", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_grid(cfg: ExperimentConfig, grid_repeats: int = 1,
             out_name: str = "surfaces.csv") -> int:
    cfg.validate(need_data=True)
    if cfg.grid is None:
        raise ConfigError("a grid spec is required (--grid or config key grid)")
    model = _model_for(cfg)
    data = load_dataset(cfg.data)
    theta_ref = (model.make_theta(cfg.theta_ref) if cfg.theta_ref is not None
                 else _theta_true(cfg, model))
    thetas = _parse_grid(cfg.grid, theta_ref)

    all_thetas, all_values, rep_col = [], [], []
    for i in range(grid_repeats):
        stream = RngStream(cfg.seed, STREAM_GRID_BASE + i)
        try:
            system = run_frozen_bootstrap(model, theta_ref, cfg.N, data, stream)
        except WeightDegeneracy as e:
            print(f"theta_ref is degenerate: {e}", file=sys.stderr)
            return EXIT_DEGENERATE
        surface = build_surface(system, model, data)
        values = surface.evaluate_grid(thetas)
        all_thetas += thetas
        all_values += values
        rep_col += [i] * len(thetas)

    path = cfg.out / out_name
    comments = _comment_block(cfg, {"theta_ref": list(map(float, theta_ref.values)),
                                    "grid_stream_base": STREAM_GRID_BASE})
    surface_values_to_csv(path, all_thetas, all_values, model.param_names,
                          comments=comments, repeat=rep_col)
    if cfg.model == "lgss":
        _append_kalman_overlay(path, model, data, all_thetas)
    print(f"wrote {path} ({len(all_values)} evaluations)")
    return EXIT_OK


def _append_kalman_overlay(path: Path, model, data: Dataset,
                           thetas: list[ParamVector]) -> None:
    """Rewrite the grid CSV with an exact-likelihood column next to each row."""
    template = LgssModel()
    lines = path.read_text(encoding="utf-8").splitlines()
    out_lines, i = [], 0
    while lines[i].startswith("#"):
        out_lines.append(lines[i])
        i += 1
    out_lines.append(lines[i] + ",kalman_loglik")
    for j, theta in enumerate(thetas):
        exact = kalman_loglik(template.with_theta(theta), data)
        out_lines.append(lines[i + 1 + j] + "," + fmt_float(exact))
    path.write_text("\n".join(out_lines) + "\n", encoding="utf-8")


def cmd_compare_sgd(cfg: ExperimentConfig) -> int:
    cfg.validate(need_data=True)
    model = _model_for(cfg)
    data_path = Path(cfg.data)
    theta_true = _theta_true(cfg, model)

    results = _run_identify_repeats(cfg, model, data_path)
    completed = [r for r in results if r["ok"]]
    if not completed:
        print("no identify repeat completed", file=sys.stderr)
        return EXIT_DEGENERATE

    # Match the SGD evaluation budget to the proposed method's actual
    # density-evaluation count (units of N*T; one SGD step costs
    # 2 (filter) + 4d (central differences)).
    d = len(model.param_names)
    units = float(np.median([r["trace"].density_eval_units for r in completed]))
    steps = cfg.sgd_steps or max(1, int(round(units / (2.0 + 4.0 * d))))

    sgd_payloads = []
    for r in range(cfg.repeats):
        theta0 = _sample_theta0(cfg, model, r)
        sgd_payloads.append({
            "cfg": {k: (str(v) if isinstance(v, Path) else v)
                    for k, v in cfg.as_dict().items()},
            "data_path": str(data_path),
            "theta0": list(map(float, theta0.values)),
            "stream_base": _repeat_stream_base(r) + SGD_STREAM_OFFSET,
            "repeat": r,
            "steps": steps,
        })
    sgd_results = _run_pool(_sgd_worker, sgd_payloads, cfg.effective_workers())

    comments = _comment_block(cfg, {"sgd_steps": steps})
    for name, res in (("compare_proposed.csv", results), ("compare_sgd.csv", sgd_results)):
        path = cfg.out / name
        with open(path, "w", newline="", encoding="utf-8") as f:
            for k in sorted(comments):
                f.write(f"# {k} = {comments[k]}\n")
            w = csv.writer(f)
            w.writerow(["repeat", "k"] + list(model.param_names) + ["distance"])
            for r in res:
                if not r["ok"]:
                    continue
                tr = r["trace"]
                for k in range(tr.thetas.shape[0]):
                    dist = float(np.linalg.norm(tr.thetas[k] - theta_true.values))
                    w.writerow([str(r["repeat"]), str(k)]
                               + [fmt_float(v) for v in tr.thetas[k]]
                               + [fmt_float(dist)])

    def final_dists(res):
        return [float(np.linalg.norm(r["trace"].thetas[-1] - theta_true.values))
                for r in res if r["ok"]]

    summary = {
        "sgd_steps": steps,
        "median_final_distance_proposed": float(np.median(final_dists(results))),
        "median_final_distance_sgd": float(np.median(final_dists(sgd_results)))
        if any(r["ok"] for r in sgd_results) else None,
        "sgd_diverged": [r["repeat"] for r in sgd_results
                         if r["ok"] and r["trace"].diverged],
        "config": cfg.as_dict(),
    }
    with open(cfg.out / "comparison_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(cfg, cfg.out / "run_manifest.json", "compare-sgd",
                    results=results,
                    outputs=["compare_proposed.csv", "compare_sgd.csv",
                             "comparison_summary.json"],
                    extra={"sgd_steps": steps})
    print(f"proposed median final distance: {summary['median_final_distance_proposed']}")
    print(f"sgd median final distance:      {summary['median_final_distance_sgd']}")
    return EXIT_OK


def _replicate(cfg: ExperimentConfig, which: str) -> int:
    cfg.validate()
    model = _model_for(cfg)
    theta_true = _theta_true(cfg, model)
    data = simulate(model, theta_true, cfg.T, RngStream(cfg.seed, STREAM_DATA))
    data_csv, _ = save_dataset(data, cfg.out / "dataset")
    comments = _comment_block(cfg)
    outputs = ["dataset.csv", "dataset.json"]

    if which == "ex1":
        # Family of local surfaces over independent systems frozen at the
        # true parameter: the characteristic red-line figure.
        grid = _parse_grid("0:10:40:121", theta_true)
        thetas, values, reps = [], [], []
        for i in range(min(cfg.repeats, 10)):
            system = run_frozen_bootstrap(model, theta_true, cfg.N, data,
                                          RngStream(cfg.seed, STREAM_GRID_BASE + i))
            surface = build_surface(system, model, data)
            thetas += grid
            values += surface.evaluate_grid(grid)
            reps += [i] * len(grid)
        surface_values_to_csv(cfg.out / "fig1_surfaces.csv", thetas, values,
                              model.param_names, comments=comments, repeat=reps)
        outputs.append("fig1_surfaces.csv")
    else:
        # Independent-filter log-likelihood scatter over the denominator
        # parameter: shows the raw estimator's variance.
        a_grid = np.linspace(0.1, 1.2, 56)
        rows = []
        for j, a in enumerate(a_grid):
            for rep in range(3):
                theta = theta_true.replace_values([a, theta_true.values[1]])
                stream = RngStream(cfg.seed, STREAM_SCATTER_BASE + 3 * j + rep)
                try:
                    system = run_frozen_bootstrap(model, theta, cfg.N, data, stream)
                    ll = system.online_loglik
                except WeightDegeneracy:
                    ll = -np.inf
                rows.append((rep, a, ll))
        path = cfg.out / "fig4_scatter.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            for k in sorted(comments):
                f.write(f"# {k} = {comments[k]}\n")
            w = csv.writer(f)
            w.writerow(["repeat", "a", "loglik"])
            for rep, a, ll in rows:
                w.writerow([str(rep), fmt_float(a), fmt_float(ll)])
        outputs.append("fig4_scatter.csv")

    results = _run_identify_repeats(cfg, model, data_csv)
    completed = [r["trace"] for r in results if r["ok"]]
    traces_name = "fig2a_traces.csv" if which == "ex1" else "fig5_traces.csv"
    _traces_csv(cfg.out / traces_name, results, model.param_names, comments)
    outputs.append(traces_name)

    if completed:
        try:
            summary = extract_estimate(completed, cfg.burn_in, cfg.bins)
        except ValueError as e:
            print(f"estimate extraction skipped: {e}", file=sys.stderr)
        else:
            summary_to_json(summary, cfg.out / "estimate_summary.json",
                            model.param_names, extra={"config": cfg.as_dict()})
            outputs.append("estimate_summary.json")
            if which == "ex2":
                _hist_csv(cfg.out / "fig6_hist.csv", summary, model.param_names,
                          comments)
                outputs.append("fig6_hist.csv")
            vals = ", ".join(f"{n}={fmt_float(v)}" for n, v in
                             zip(model.param_names, summary.theta_hat.values))
            print(f"estimate: {vals} (pooled {summary.samples_used} samples, "
                  f"{len(completed)}/{cfg.repeats} repeats)")
    _write_manifest(cfg, cfg.out / "manifest.json", f"replicate-{which}",
                    results=results, outputs=outputs)
    if not completed:
        print("no repeat completed", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_replicate_ex1(cfg: ExperimentConfig) -> int:
    return _replicate(cfg, "ex1")


def cmd_replicate_ex2(cfg: ExperimentConfig) -> int:
    return _replicate(cfg, "ex2")


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

_REPLICATE_DEFAULTS = {
    "ex1": {"model": "example1", "T": 100, "N": 100, "K": 50, "repeats": 20,
            "burn_in": 25, "bins": 50},
    "ex2": {"model": "example2", "T": 1000, "N": 100, "K": 150, "repeats": 20,
            "burn_in": 50, "bins": 50},
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value experiment file")
    p.add_argument("--seed", type=int, help="master seed (fallback: PFML_SEED)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: cores)")
    p.add_argument("--N", type=int, dest="N", help="particle count")
    p.add_argument("--K", type=int, dest="K", help="outer iterations")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--bins", type=int)
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--T", type=int, dest="T", help="horizon (simulation only)")
    p.add_argument("--theta-true", dest="theta_true", help="comma-separated values")
    p.add_argument("--theta0", help="fixed starting point (comma-separated)")
    p.add_argument("--max-evals", type=int, dest="max_evals")
    p.add_argument("--gamma0", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sgd-steps", type=int, dest="sgd_steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfml",
        description="Particle-filter maximum-likelihood identification "
                    "of nonlinear state-space models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    _add_common(p)

    p = sub.add_parser("identify", help="repeated identification on a dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, help="dataset path (csv or basename)")

    p = sub.add_parser("grid", help="likelihood surfaces over a parameter grid")
    _add_common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--theta-ref", dest="theta_ref", help="comma-separated values")
    p.add_argument("--grid", help="axis spec index:start:stop:count[;...]")
    p.add_argument("--grid-repeats", type=int, default=1,
                   help="independent frozen systems to evaluate")

    p = sub.add_parser("compare-sgd", help="budget-matched SGD comparison")
    _add_common(p)
    p.add_argument("--data", type=Path)

    for which in ("ex1", "ex2"):
        p = sub.add_parser(f"replicate-{which}",
                           help=f"end-to-end benchmark experiment {which}")
        _add_common(p)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(resolve_config(args))
        if args.command == "identify":
            return cmd_identify(resolve_config(args))
        if args.command == "grid":
            return cmd_grid(resolve_config(args), grid_repeats=args.grid_repeats)
        if args.command == "compare-sgd":
            return cmd_compare_sgd(resolve_config(args))
        if args.command == "replicate-ex1":
            return cmd_replicate_ex1(resolve_config(args, _REPLICATE_DEFAULTS["ex1"]))
        if args.command == "replicate-ex2":
            return cmd_replicate_ex2(resolve_config(args, _REPLICATE_DEFAULTS["ex2"]))
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
