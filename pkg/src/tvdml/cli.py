"""Command-line entry point: simulate, fit, tune, benchmark and report.

Every command reads a TOML (or JSON) config given by ``--config``.
Relative paths inside the config resolve against the config file's
directory; outputs go to ``--out`` (default: the config's ``out`` key, else
the current directory).

Exit codes: 0 success, 2 config error, 3 data error, 4 estimation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dml import (
    EstimatorConfig,
    effects_frame,
    fit_sequential,
    fit_to_dict,
    smooth_effects,
    tune_gamma,
)
from .exceptions import ConfigError, DataError, EstimationError, SchemaError
from .learners import LearnerSpec
from .panel import ColumnSchema, load_panel_csv, write_panel_csv
from .simlab import MC_METHODS, ScenarioSpec, run_monte_carlo, simulate

log = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "tune", "benchmark", "report")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4
LEARNER_KEYS = ("g_learner", "pi_learner", "delta_learner", "h_learner")


@dataclass
class RunConfig:
    """Parsed command configuration."""

    command: str
    base_dir: Path
    out_dir: Path
    alpha: float = 0.05
    jobs: int = 1
    scenario: Optional[ScenarioSpec] = None
    schema: Optional[ColumnSchema] = None
    estimator: Optional[EstimatorConfig] = None
    data_path: Optional[Path] = None
    reps: int = 1
    methods: tuple = MC_METHODS
    gamma_grid: Optional[tuple] = None
    fit_path: Optional[Path] = None
    truth_path: Optional[Path] = None
    span: float = 0.75
    raw: dict = field(default_factory=dict)


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _section(raw, name, required=False):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config needs a [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def _build(cls, kwargs, what):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def _estimator_config(sec) -> EstimatorConfig:
    sec = dict(sec)
    for key in LEARNER_KEYS:
        if key in sec:
            val = sec[key]
            spec = {"kind": val} if isinstance(val, str) else dict(val)
            for k in ("penalty_grid",):
                if k in spec:
                    spec[k] = tuple(spec[k])
            sec[key] = _build(LearnerSpec, spec, key)
    if "gamma_grid" in sec:
        sec["gamma_grid"] = tuple(sec["gamma_grid"])
    return _build(EstimatorConfig, sec, "[estimator] section")


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def parse_run_config(command, raw, config_path, seed=None, jobs=None, out=None) -> RunConfig:
    """Validate the raw config for ``command`` and apply CLI overrides."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    base = Path(config_path).resolve().parent
    out_dir = Path(out) if out is not None else _resolve(base, raw.get("out", "."))
    alpha = raw.get("alpha", 0.05)
    if not isinstance(alpha, (int, float)) or not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    cfg = RunConfig(command=command, base_dir=base, out_dir=out_dir, alpha=float(alpha), raw=raw)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg.jobs = jobs

    if command in ("simulate", "benchmark"):
        sc = _section(raw, "scenario", required=True)
        if seed is not None:
            sc["seed"] = seed
        cfg.scenario = _build(ScenarioSpec, sc, "[scenario] section")

    if command in ("fit", "tune"):
        data = _section(raw, "data", required=True)
        if "path" not in data:
            raise ConfigError("[data] needs a 'path'")
        cfg.data_path = _resolve(base, data.pop("path"))
        if not cfg.data_path.exists():
            raise DataError(f"panel file not found: {cfg.data_path}")
        cfg.schema = _build(ColumnSchema, data, "[data] schema")
        cfg.estimator = _estimator_config(_section(raw, "estimator"))

    if command == "tune":
        grid = _section(raw, "tune").get("gamma_grid")
        if grid is not None:
            if not grid or any(not 0.0 <= g <= 1.0 for g in grid):
                raise ConfigError("gamma grid must be non-empty with values in [0, 1]")
            cfg.gamma_grid = tuple(float(g) for g in grid)
        if cfg.estimator.method == "direct-dml":
            raise ConfigError("direct-dml has no delay factor to tune")

    if command == "benchmark":
        bench = _section(raw, "benchmark")
        reps = bench.get("reps", 1)
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError("reps must be an integer >= 1")
        cfg.reps = reps
        methods = tuple(bench.get("methods", MC_METHODS))
        unknown = [m for m in methods if m not in MC_METHODS]
        if unknown or not methods:
            raise ConfigError(f"unknown benchmark method(s) {unknown}; choose from {MC_METHODS}")
        cfg.methods = methods
        if jobs is None and "jobs" in bench:
            cfg.jobs = int(bench["jobs"])

    if command == "report":
        rep = _section(raw, "report", required=True)
        if "fit" not in rep:
            raise ConfigError("[report] needs a 'fit' path")
        cfg.fit_path = _resolve(base, rep["fit"])
        if not cfg.fit_path.exists():
            raise DataError(f"fit file not found: {cfg.fit_path}")
        if "truth" in rep:
            cfg.truth_path = _resolve(base, rep["truth"])
            if not cfg.truth_path.exists():
                raise DataError(f"truth file not found: {cfg.truth_path}")
        span = rep.get("span", 0.75)
        if not isinstance(span, (int, float)) or not 0.0 < span <= 1.0:
            raise ConfigError("span must lie in (0, 1]")
        cfg.span = float(span)
    return cfg


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _write_csv(frame, path, **kwargs):
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", na_rep="NA", **kwargs)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig, echo=print):
    """Write ``panel.csv`` and ``truth.json``; return the summary dict."""
    spec = cfg.scenario
    data, truth = simulate(spec)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    schema = write_panel_csv(data, cfg.out_dir / "panel.csv")
    record = {"scenario": spec.to_dict(), "gamma": truth.gamma, "beta": truth.beta.tolist(),
              "coefficients": list(data.coef_names), "schema": {
                  "baseline": list(schema.baseline), "modifiers": list(schema.modifiers),
                  "prognostic": list(schema.prognostic)}}
    _write_json(record, cfg.out_dir / "truth.json")
    summary = {"n": data.n, "T": data.T, "treated_fraction": float(data.A.mean()),
               "observed_fraction": float(data.M.mean())}
    echo(f"simulated case {spec.case}: n={summary['n']} T={summary['T']} "
         f"treated={summary['treated_fraction']:.4f} observed={summary['observed_fraction']:.4f}")
    return summary


def _load(cfg):
    return load_panel_csv(cfg.data_path, cfg.schema)


def cmd_fit(cfg: RunConfig, echo=print):
    """Write ``fit.json`` and ``effects.csv``; return the fit dict."""
    data = _load(cfg)
    fit = fit_sequential(data, cfg.estimator)
    out = fit_to_dict(fit, cfg.alpha)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out, cfg.out_dir / "fit.json")
    _write_csv(effects_frame(fit, cfg.alpha), cfg.out_dir / "effects.csv", float_format="%.10g")
    h = out["hotelling"]
    gamma = "NA" if fit.gamma is None else f"{fit.gamma:g}"
    if h.get("stat") is None:
        echo(f"method={fit.method} gamma={gamma} hotelling unavailable: {h.get('error')}")
    else:
        echo(f"method={fit.method} gamma={gamma} hotelling stat={h['stat']:.4f} df={h['df']} p={h['p']:.4g}")
    for w in out["warnings"]:
        echo(f"warning: {w}")
    return out


def cmd_tune(cfg: RunConfig, echo=print):
    """Write ``tune.csv`` (gamma, criterion, failed); return the chosen gamma."""
    data = _load(cfg)
    res = tune_gamma(data, cfg.estimator, grid=cfg.gamma_grid, inference=False)
    crit = cfg.estimator.criterion
    frame = pd.DataFrame({"gamma": res.grid, crit: res.criterion, "failed": res.failed.astype(int)})
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(frame, cfg.out_dir / "tune.csv", float_format="%.10g")
    for err in res.errors:
        echo(f"warning: {err}")
    echo(f"chosen gamma={res.gamma:g}")
    return res.gamma


def cmd_benchmark(cfg: RunConfig, echo=print):
    """Write ``metrics.csv`` and ``raw.csv``; return the MonteCarloResult."""
    res = run_monte_carlo(cfg.scenario, cfg.reps, methods=cfg.methods, alpha=cfg.alpha, jobs=cfg.jobs)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res.metrics.to_csv(cfg.out_dir / "metrics.csv")
    _write_csv(res.raw, cfg.out_dir / "raw.csv", float_format="%.10g")
    echo(res.metrics.display().to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    counts = res.failure_counts()
    echo("failures: " + " ".join(f"{m}={counts.get(m, 0)}" for m in cfg.methods))
    for m, fails in res.failures.items():
        for r, msg in fails:
            echo(f"  {m} replicate {r}: {msg}")
    return res


def cmd_report(cfg: RunConfig, echo=print):
    """Write ``smoothed.csv`` (long format with band); return the frame."""
    try:
        fit = json.loads(cfg.fit_path.read_text(encoding="utf-8"))
        beta = np.asarray(fit["beta"], dtype=float)
        names = list(fit["coefficients"])
        times = np.asarray(fit["times"], dtype=float)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{cfg.fit_path} is not a fit file: {exc}") from exc
    if beta.ndim != 2 or beta.shape != (len(times), len(names)):
        raise DataError(f"{cfg.fit_path}: beta shape does not match times and coefficients")
    # an explicit config alpha wins over the one stored with the fit
    alpha = cfg.alpha if "alpha" in cfg.raw else float(fit.get("alpha", cfg.alpha))
    try:
        sm = smooth_effects(beta, span=cfg.span, alpha=alpha, times=times)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    T, d = beta.shape
    frame = pd.DataFrame({
        "t": np.repeat(times, d),
        "coefficient": np.tile(np.array(names, dtype=object), T),
        "estimate": beta.ravel(),
        "smoothed": sm.curve.ravel(),
        "se": sm.se.ravel(),
        "lo": sm.lower.ravel(),
        "hi": sm.upper.ravel(),
    })
    if cfg.truth_path is not None:
        truth = np.asarray(json.loads(cfg.truth_path.read_text(encoding="utf-8"))["beta"], dtype=float)
        if truth.shape != beta.shape:
            raise DataError("truth beta shape does not match the fit")
        frame["truth"] = truth.ravel()
    if frame["t"].map(float.is_integer).all():
        frame["t"] = frame["t"].astype(int)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(frame, cfg.out_dir / "smoothed.csv", float_format="%.10g")
    echo(f"smoothed {d} coefficient curve(s) over {T} time points (span={cfg.span:g})")
    return frame


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune,
            "benchmark": cmd_benchmark, "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="tvdml", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0])
        p.add_argument("--config", required=True, metavar="PATH", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
        p.add_argument("--out", default=None, metavar="DIR", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config_file(args.config)
        cfg = parse_run_config(args.command, raw, args.config, seed=args.seed, jobs=args.jobs, out=args.out)
        HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        hint = "" if exc.time is None else f" (time t={exc.time})"
        print(f"estimation error{hint}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
