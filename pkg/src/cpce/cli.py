"""Command-line entry points: ``simulate``, ``estimate``, ``bias-check`` and ``bench``.

Every command takes an optional JSON ``--config`` file whose keys mirror the
long flag names (dashes or underscores); flags given on the command line
override it.  A seed is mandatory: ``--seed``, the config file, or the
``CPCE_SEED`` environment variable.  Each output CSV is accompanied by a JSON
file carrying a ``meta`` block with the resolved configuration.

Exit codes: 0 success, 1 failed checks or estimation errors, 2 usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bias_lab import NuisancePerturbation, Regime, default_regimes, robustness_sweep, sweep_summary, sweep_table
from .core_data import PrincipalStratum, format_float, read_csv, write_csv
from .errors import ConfigError, CpceError, DataError, SchemaError
from .estimators import ESTIMATORS, EstimatorConfig, estimate, make_fold_plan
from .sim_bench import (DGP_NAMES, BenchConfig, DgpSpec, default_estimator_config, make_dgp,
                        results_summary, results_table, run_benchmark)

log = logging.getLogger("cpce")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Invalid command-line or configuration input."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _csv_list(text, cast=str):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v.strip()) for v in str(text).split(",") if v.strip()]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _resolve(args, defaults: dict) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    out = dict(defaults)
    out.update(_load_config(args.config))
    for k, v in vars(args).items():
        if k in ("config", "func", "command", "log_level") or v is None:
            continue
        out[k] = v
    seed = out.get("seed")
    if seed is None:
        env = os.environ.get("CPCE_SEED")
        if env is None:
            raise UsageError("a seed is required: pass --seed, set it in --config, or set CPCE_SEED")
        seed = env
    try:
        out["seed"] = int(seed)
    except (TypeError, ValueError):
        raise UsageError(f"seed must be an integer, got {seed!r}") from None
    return out


def _write_json(path, obj) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, PrincipalStratum):
            return str(o)
        raise TypeError(type(o).__name__)

    def clean(o):
        if isinstance(o, float) and not np.isfinite(o):
            return None
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    with open(path, "w") as fh:
        json.dump(clean(json.loads(json.dumps(obj, default=default))), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta(command: str, cfg: dict, **extra) -> dict:
    return {"meta": {"command": command, "version": __version__, "config": cfg, **extra}}


def _sidecar(path) -> Path:
    p = Path(path)
    return p.with_suffix(".json") if p.suffix.lower() == ".csv" else p.with_name(p.name + ".json")


def _check_out_dir(*paths) -> None:
    for p in paths:
        if p is None:
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise UsageError(f"output directory {parent} does not exist")


def _read_query(path, names) -> np.ndarray:
    """Covariate matrix from a header CSV holding at least ``names``."""
    if not Path(path).is_file():
        raise UsageError(f"query file {path} not found")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in names if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing covariate columns {missing}")
    idx = [header.index(c) for c in names]
    try:
        return np.array([[float(r[j]) for j in idx] for r in rows[1:]], dtype=float).reshape(-1, len(idx))
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed or non-numeric query row") from None


def _estimator_config(cfg: dict, base: EstimatorConfig) -> EstimatorConfig:
    est = dict(cfg.get("estimator_config") or {})
    merged = {**base.to_dict(), **est}
    for key in ("eps", "hajek", "one_sided", "level", "subset_source", "prelim"):
        if cfg.get(key) is not None:
            merged[key] = cfg[key]
    if cfg.get("k") is not None:
        merged["folds"] = int(cfg["k"])
    merged["seed"] = int(cfg["seed"])
    return EstimatorConfig.from_dict(merged)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    """Draw a dataset and its truth table from a DGP."""
    cfg = _resolve(args, {"dgp": "study1", "scenario": 1, "n": 1000, "noise_sd": 0.2,
                          "out": "dataset.csv", "truth_out": None})
    try:
        spec = DgpSpec(cfg["dgp"], int(cfg["scenario"]), int(cfg["n"]), cfg["seed"], float(cfg["noise_sd"]))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg["out"])
    truth_out = Path(cfg["truth_out"]) if cfg["truth_out"] else out.with_name(out.stem + "_truth.csv")
    cfg["truth_out"] = str(truth_out)
    _check_out_dir(out, truth_out)
    dgp = make_dgp(spec)
    data = dgp.draw(np.random.default_rng(spec.seed), spec.n)
    cols = {name: data.x[:, j] for j, name in enumerate(data.x_names)}
    cols.update({"y": data.y, "s": data.s.astype(np.int64), "z": data.z.astype(np.int64)})
    write_csv(out, cols)
    truth = dict(cols)
    for key in ("y", "s", "z"):
        truth.pop(key)
    nv = dgp.truth_at(data.x)
    truth.update({"pi": nv.pi, "p1": nv.p1, "p0": nv.p0})
    for u in PrincipalStratum:
        if dgp.one_sided and u is PrincipalStratum.ALWAYS_TAKER:
            continue
        truth[f"tau{u}"] = dgp.tau(u, data.x)
    write_csv(truth_out, truth)
    counts = {f"{z}{s}": int(k) for (z, s), k in data.cell_counts.items()}
    _write_json(_sidecar(out), _meta("simulate", cfg, n=data.n, cell_counts=counts,
                                     x_cols=list(data.x_names)))
    print(f"wrote {out} ({data.n} rows) and {truth_out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    """Estimate a CPCE on a CSV dataset."""
    cfg = _resolve(args, {"estimator": "subset", "stratum": "10", "y_col": "y", "s_col": "s", "z_col": "z",
                          "folds": None, "out": "estimates.csv"})
    if cfg.get("input") is None:
        raise UsageError("--input is required")
    if not Path(cfg["input"]).is_file():
        raise UsageError(f"input file {cfg['input']} not found")
    if cfg["estimator"] not in ESTIMATORS:
        raise UsageError(f"unknown estimator {cfg['estimator']!r}; choose from {ESTIMATORS}")
    _check_out_dir(cfg["out"])
    u = PrincipalStratum.parse(cfg["stratum"])
    ecfg = _estimator_config(cfg, EstimatorConfig())
    x_cols = _csv_list(cfg.get("x_cols"))
    data = read_csv(cfg["input"], x_cols, cfg["y_col"], cfg["s_col"], cfg["z_col"],
                    require_all_cells=not ecfg.one_sided)
    query = data.x
    if cfg.get("query"):
        query = _read_query(cfg["query"], data.x_names)
    kind = cfg["estimator"]
    kwargs = {}
    scheme = cfg.get("folds")
    if kind == "eif":
        scheme = scheme or "threeway"
        if scheme != "threeway":
            raise ConfigError("the EIF estimator requires the threeway fold scheme")
    elif kind in ("subset", "onestep"):
        scheme = scheme or "kfold"
        if scheme != "kfold":
            raise ConfigError(f"the {kind} estimator uses the kfold fold scheme")
    if kind != "tlearner":
        kwargs["plan"] = make_fold_plan(data.n, scheme, ecfg.folds, ecfg.seed)
    cfg["folds"] = scheme
    est = estimate(kind, data, ecfg, query, u, **kwargs)
    cols = {name: query[:, j] for j, name in enumerate(data.x_names)}
    cols.update({"tau_hat": est.tau_hat, "se": est.se, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi})
    write_csv(cfg["out"], cols)
    frac = est.significant_fraction()
    summary = {"n": data.n, "n_query": int(query.shape[0]), "x_cols": list(data.x_names),
               "cell_counts": {f"{z}{s}": int(k) for (z, s), k in data.cell_counts.items()},
               "mean_tau_hat": float(np.mean(est.tau_hat)),
               "fraction_negative": float(np.mean(est.tau_hat < 0)),
               "fraction_significant_negative": frac["negative"],
               "fraction_significant_positive": frac["positive"],
               "estimator_meta": est.meta}
    _write_json(_sidecar(cfg["out"]), _meta("estimate", cfg, **summary))
    print(f"wrote {cfg['out']} ({query.shape[0]} query points)")
    if est.has_ci:
        print(f"significant negative: {100 * frac['negative']:.2f}%  "
              f"significant positive: {100 * frac['positive']:.2f}%")
    return EXIT_OK


def _perturbation_from_dict(d: dict, name: str) -> NuisancePerturbation:
    allowed = {"pi", "p1", "p0", "mu", "pi_subset", "tau"}
    unknown = set(d) - allowed
    if unknown:
        raise UsageError(f"regime {name!r}: unknown perturbation keys {sorted(unknown)}")

    def num(v, what):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise UsageError(f"regime {name!r}: {what} must be a number")
        return float(v)

    mu = {}
    for key, v in (d.get("mu") or {}).items():
        cell = str(key)
        if len(cell) != 2 or any(c not in "01" for c in cell):
            raise UsageError(f"regime {name!r}: mu key {key!r} must be a cell such as '11'")
        mu[(int(cell[0]), int(cell[1]))] = num(v, f"mu[{key}]")
    ps = {}
    for key, v in (d.get("pi_subset") or {}).items():
        try:
            ps[PrincipalStratum.parse(key)] = num(v, f"pi_subset[{key}]")
        except CpceError as exc:
            raise UsageError(f"regime {name!r}: {exc}") from None
    return NuisancePerturbation(num(d.get("pi", 0.0), "pi"), num(d.get("p1", 0.0), "p1"),
                                num(d.get("p0", 0.0), "p0"), mu, ps,
                                None if d.get("tau") is None else num(d["tau"], "tau"), name)


def load_regimes(path) -> list:
    """Read a regimes file: a JSON list of ``{name, perturbation, protected}``."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read regimes file {path}: {exc}") from None
    if not isinstance(raw, list) or not raw:
        raise UsageError("regimes file must hold a non-empty JSON list")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "name" not in item:
            raise UsageError(f"regime #{i} must be an object with a 'name'")
        name = str(item["name"])
        pert = item.get("perturbation", {})
        if not isinstance(pert, dict):
            raise UsageError(f"regime {name!r}: 'perturbation' must be an object")
        protected = item.get("protected", [])
        if not isinstance(protected, list) or any(p not in ("subset", "eif", "onestep") for p in protected):
            raise UsageError(f"regime {name!r}: 'protected' must list families subset/eif/onestep")
        out.append(Regime(name, _perturbation_from_dict(pert, name), tuple(protected)))
    return out


def cmd_bias_check(args) -> int:
    """Closed-form versus Monte-Carlo plug-in bias over a regime suite."""
    cfg = _resolve(args, {"dgp": "study1", "scenario": 1, "strata": "00,10,11", "n_mc": 1_000_000,
                          "n_points": 5, "magnitude": 0.1, "tol": 3.0, "out": "bias_report.csv",
                          "regimes": None})
    try:
        dgp = make_dgp(DgpSpec(cfg["dgp"], int(cfg["scenario"]), 1, 0))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    regimes = load_regimes(cfg["regimes"]) if cfg["regimes"] else default_regimes(float(cfg["magnitude"]))
    strata = _csv_list(cfg["strata"])
    _check_out_dir(cfg["out"])
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = (-0.8, 0.8) if dgp.name == "toy" else (0.2, 0.8)
    grid = rng.uniform(lo, hi, (int(cfg["n_points"]), dgp.dim))
    rows = robustness_sweep(dgp, regimes, strata, grid, n_mc=int(cfg["n_mc"]), seed=cfg["seed"],
                            tol=float(cfg["tol"]))
    table = sweep_table(rows)
    write_csv(cfg["out"], {**table, "passed": table["passed"].astype(np.int64),
                           "point": table["point"].astype(np.int64)})
    n_fail = int(sum(not r.passed for r in rows))
    summary = sweep_summary(rows)
    _write_json(_sidecar(cfg["out"]), _meta("bias-check", cfg, grid=grid, n_checks=len(rows),
                                            n_failed=n_fail, regimes=[r.name for r in regimes],
                                            summary=summary.splitlines()))
    print(summary)
    print(f"{len(rows) - n_fail}/{len(rows)} checks pass; report in {cfg['out']}")
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def cmd_bench(args) -> int:
    """Run a replication grid and write tidy per-replication results."""
    cfg = _resolve(args, {"dgp": "study1", "scenario": 1, "estimators": ",".join(ESTIMATORS), "strata": "10",
                          "n_values": "1000,2000,4000", "reps": 100, "n_eval": 200, "noise_sd": 0.2,
                          "out": "bench.csv", "threads": None, "ci_points": []})
    _check_out_dir(cfg["out"])
    try:
        ecfg = _estimator_config(cfg, default_estimator_config(cfg["dgp"]))
        bc = BenchConfig(dgp=cfg["dgp"], scenario=int(cfg["scenario"]), estimators=tuple(_csv_list(cfg["estimators"])),
                         strata=tuple(_csv_list(cfg["strata"])), n_values=tuple(_csv_list(cfg["n_values"], int)),
                         reps=int(cfg["reps"]), seed=cfg["seed"], n_eval=int(cfg["n_eval"]),
                         ci_points=tuple(tuple(p) for p in cfg["ci_points"]), estimator=ecfg,
                         noise_sd=float(cfg["noise_sd"]),
                         threads=None if cfg["threads"] is None else int(cfg["threads"]))
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    results = run_benchmark(bc)
    table = results_table(results)
    write_csv(cfg["out"], table)
    summary = results_summary(results)
    bench_cfg = bc.to_dict()
    bench_cfg.pop("threads")  # worker count does not affect results
    _write_json(_sidecar(cfg["out"]), {"meta": {"command": "bench", "version": __version__, "config": bench_cfg},
                                       "summary": summary})
    for row in summary:
        print(f"{row['estimator']:<9} u={row['stratum']} n={row['n']:<6} mean RMSE {format_float(row['mean_rmse'])[:8]}"
              f"  errors {row['n_errors']}")
    return EXIT_OK if all(r["n_errors"] == 0 for r in summary) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpce", description="Conditional principal causal effect estimation.")
    p.add_argument("--version", action="version", version=f"cpce {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--seed", type=int, help="random seed (falls back to CPCE_SEED)")
        sp.add_argument("--out", help="output CSV path; a JSON sidecar is written next to it")

    s = sub.add_parser("simulate", help="draw a dataset from a DGP")
    common(s)
    s.add_argument("--dgp", choices=DGP_NAMES)
    s.add_argument("--scenario", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--noise-sd", type=float)
    s.add_argument("--truth-out", help="truth CSV path (default: <out>_truth.csv)")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate a CPCE from a CSV dataset")
    common(e)
    e.add_argument("--input", help="dataset CSV with a header row")
    e.add_argument("--query", help="CSV of query covariates (default: the sample)")
    e.add_argument("--x-cols", help="comma-separated covariate columns (default: all others)")
    e.add_argument("--y-col")
    e.add_argument("--s-col")
    e.add_argument("--z-col")
    e.add_argument("--estimator", choices=ESTIMATORS)
    e.add_argument("--stratum", choices=["00", "10", "11"])
    e.add_argument("--folds", choices=["kfold", "threeway"], help="fold scheme")
    e.add_argument("--k", type=int, help="number of folds for kfold")
    e.add_argument("--eps", type=float)
    e.add_argument("--level", type=float)
    e.add_argument("--hajek", action="store_true", default=None)
    e.add_argument("--one-sided", action="store_true", default=None,
                   help="controls cannot take up the intermediate (p0 = 0)")
    e.add_argument("--subset-source", choices=["composed", "direct"])
    e.add_argument("--prelim", choices=["tlearner", "zero"])
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bias-check", help="verify plug-in bias expansions against Monte-Carlo")
    common(b)
    b.add_argument("--dgp", choices=DGP_NAMES)
    b.add_argument("--scenario", type=int)
    b.add_argument("--regimes", help="JSON regimes file (default: built-in suite)")
    b.add_argument("--strata", help="comma-separated strata")
    b.add_argument("--n-mc", type=int)
    b.add_argument("--n-points", type=int)
    b.add_argument("--magnitude", type=float, help="size of the built-in perturbations")
    b.add_argument("--tol", type=float, help="tolerance in Monte-Carlo standard errors")
    b.set_defaults(func=cmd_bias_check)

    r = sub.add_parser("bench", help="run a Monte-Carlo benchmark grid")
    common(r)
    r.add_argument("--dgp", choices=DGP_NAMES)
    r.add_argument("--scenario", type=int)
    r.add_argument("--estimators", help="comma-separated estimators")
    r.add_argument("--strata", help="comma-separated strata")
    r.add_argument("--n-values", help="comma-separated sample sizes")
    r.add_argument("--reps", type=int)
    r.add_argument("--n-eval", type=int)
    r.add_argument("--noise-sd", type=float)
    r.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    r.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CpceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
