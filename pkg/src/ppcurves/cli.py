"""Command line: ``ppcurves {gen,fit,seriate,sweep,bench}``.

Exit codes: 0 success, 1 usage error, 2 solver did not converge, 3 I/O error.
Any flag can also come from a JSON file given with ``--config``; flags typed
on the command line take precedence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import datagen, io
from .experiment import (DEFAULT_KNOTS, DatasetSpec, ExperimentConfig,
                         MethodParams, ResultRecord, cell_means, content_hash,
                         distance_matrix_for, metric_for_dataset, run_cell)
from .ot import OTConvergenceWarning
from .ppc import fit
from .seriation import (kendall_tau_error, projection_pseudotime, spectral_seriation,
                        tsp_seriation)

log = logging.getLogger("ppcurves")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- argument parsing


def _common_solver(p):
    p.add_argument("--beta", type=float, help="length penalty (model default if omitted)")
    p.add_argument("--h", type=float, help="kernel bandwidth for the nonlocal objective")
    p.add_argument("--knots", type=int, help=f"number of knots K (default {DEFAULT_KNOTS})")
    p.add_argument("--kernel", choices=["epanechnikov"])
    p.add_argument("--mode", choices=["local", "nonlocal"])
    p.add_argument("--pin-ends", dest="pin_ends", action=argparse.BooleanOptionalAction, default=None,
                   help="fix the first/last knot at the earliest/latest batch")
    p.add_argument("--ot", choices=["exact", "sinkhorn"])
    p.add_argument("--reg", type=float, help="entropic regularization for --ot sinkhorn")
    p.add_argument("--max-iters", dest="max_outer_iters", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float, help="wall-clock cap per fit (s)")


def _common_data(p):
    p.add_argument("--dataset", help="model name (gen/sweep/bench) or dataset directory (fit/seriate)")
    p.add_argument("--model", help="alias of --dataset for generation")
    p.add_argument("--n", type=int, help="number of time points")
    p.add_argument("--atoms", type=int, help="total atom budget across all batches")
    p.add_argument("--sigma", type=float, help="noise level")
    p.add_argument("--reads", type=int, help="apply R multinomial reads per atom")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppcurves", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset directory")
    _common_data(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--grid", action="store_true", default=None, help="even time grid instead of uniform draws")
    g.add_argument("--no-truth", dest="no_truth", action="store_true", default=None)
    g.add_argument("--out", required=False)
    g.add_argument("--config")

    f = sub.add_parser("fit", help="fit a principal curve to a dataset directory")
    f.add_argument("--dataset")
    f.add_argument("--seed", type=int)
    _common_solver(f)
    f.add_argument("--svg", action="store_true", default=None, help="also write overlay.svg")
    f.add_argument("--out")
    f.add_argument("--config")

    s = sub.add_parser("seriate", help="order a dataset and score it")
    s.add_argument("--dataset")
    s.add_argument("--method", choices=["ppc", "tsp", "spectral"])
    s.add_argument("--fit", dest="fit_dir", help="directory written by `fit` (method ppc)")
    s.add_argument("--spectral-sigma", dest="spectral_sigma", type=float)
    s.add_argument("--spectral-scaling", dest="spectral_scaling", choices=["symmetric", "random_walk"])
    s.add_argument("--pin-ends", dest="pin_ends", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--ot", choices=["exact", "sinkhorn"])
    s.add_argument("--reg", type=float)
    s.add_argument("--no-refine", dest="no_refine", action="store_true", default=None)
    s.add_argument("--out")
    s.add_argument("--config")

    for name, helptext in (("sweep", "parameter grid over seeds"),
                           ("bench", "all methods on one dataset spec over seeds")):
        w = sub.add_parser(name, help=helptext)
        _common_data(w)
        _common_solver(w)
        w.add_argument("--seeds", type=int, nargs="+")
        w.add_argument("--repeats", type=int, help="use seeds 0..repeats-1")
        w.add_argument("--method", dest="methods", nargs="+", choices=["ppc", "tsp", "spectral"])
        w.add_argument("--spectral-sigma", dest="spectral_sigma", type=float)
        w.add_argument("--spectral-scaling", dest="spectral_scaling",
                       choices=["symmetric", "random_walk"])
        w.add_argument("--grid-json", dest="grid_json", help='e.g. \'{"beta": [0.01, 0.1]}\'')
        w.add_argument("--workers", type=int)
        w.add_argument("--out")
        w.add_argument("--config")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Merge a JSON config file under the explicitly given flags."""
    opts = {k: v for k, v in vars(args).items() if v is not None}
    cfg_path = opts.pop("config", None)
    if cfg_path:
        try:
            base = json.loads(Path(cfg_path).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {cfg_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {cfg_path} is not valid JSON: {exc}") from exc
        if not isinstance(base, dict):
            raise UsageError("config must be a JSON object")
        base = {k.replace("-", "_"): v for k, v in base.items()}
        opts = {**base, **opts}
    if "model" in opts and "dataset" not in opts:
        opts["dataset"] = opts["model"]
    return opts


def _method_params(o: dict) -> MethodParams:
    keys = {f for f in MethodParams.__dataclass_fields__}
    kw = {k: o[k] for k in keys if k in o}
    if "no_refine" in o:
        kw["refine"] = not o["no_refine"]
    return MethodParams(**kw)


def _need(o: dict, key: str, flag: str):
    if key not in o:
        raise UsageError(f"missing required option {flag}")
    return o[key]


def _load(dirpath, with_truth=True) -> datagen.Dataset:
    d = Path(dirpath)
    if not (d / "atoms.csv").exists():
        raise FileNotFoundError(f"{d / 'atoms.csv'} not found")
    return datagen.load_dataset(d, with_truth=with_truth)


# ---------------------------------------------------------------- commands


def cmd_gen(o: dict) -> int:
    model = _need(o, "dataset", "--dataset")
    spec = DatasetSpec(model=model, n=o.get("n", 250), atoms=o.get("atoms", 10000),
                       sigma=o.get("sigma", 0.0 if model == "euclidean_line" else 0.1),
                       reads=o.get("reads"), grid=o.get("grid", False))
    seed = o.get("seed", 0)
    ds = spec.generate(seed)
    out = Path(_need(o, "out", "--out"))
    datagen.save_dataset(ds, out, write_truth=not o.get("no_truth", False))
    log.info("wrote %d batches to %s", len(ds), out)
    return EXIT_OK


def _provenance(ds: datagen.Dataset, o: dict) -> dict:
    return {"dataset_hash": ds.content_hash(),
            "config_hash": content_hash({k: v for k, v in o.items() if k not in ("out", "verbose")})}


def cmd_fit(o: dict) -> int:
    ds = _load(_need(o, "dataset", "--dataset"))
    model = ds.provenance.get("model", "dataset1")
    params = _method_params(o).resolved(model)
    out = Path(_need(o, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    metric = metric_for_dataset(ds, params)
    pinned = {}
    if params.pin_ends:
        if not ds.has_truth():
            raise UsageError("--pin-ends needs truth.csv to identify the start and end batches")
        s, e = ds.endpoints()
        pinned = {0: ds.batches[s], params.knots - 1: ds.batches[e]}
    cfg = params.ppc_config(o.get("seed", 0), pinned)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OTConvergenceWarning)
        curve, trace = fit(ds.batches, cfg, metric=metric)
        tau = projection_pseudotime(ds.batches, curve, metric, refine=params.refine)
    io.save_knots(curve, out / "knots.csv")
    io.save_trace(trace, out / "trace.csv")
    io.save_plot_data(ds.batches, curve, tau, out / "plot_data.csv")
    if o.get("svg"):
        io.svg_overlay(ds.batches, curve, tau, out / "overlay.svg")
    summary = {"status": trace.status, "converged": trace.converged,
               "iterations": len(trace.objective) - 1, "objective_final": trace.objective[-1],
               "monotone": trace.is_monotone(), "params": asdict(params),
               **_provenance(ds, o)}
    (out / "fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"runtime_s": trace.runtime}) + "\n")
    log.info("fit %s after %d iterations, objective %.6g", trace.status,
             summary["iterations"], summary["objective_final"])
    return EXIT_OK if trace.status in ("converged", "descent_stall") else EXIT_NONCONVERGED


def cmd_seriate(o: dict) -> int:
    ds = _load(_need(o, "dataset", "--dataset"))
    method = _need(o, "method", "--method")
    model = ds.provenance.get("model", "dataset1")
    params = _method_params(o).resolved(model)
    out = Path(_need(o, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    flags: dict = {}
    objective = math.nan
    if method == "ppc":
        fit_dir = Path(_need(o, "fit_dir", "--fit"))
        if not (fit_dir / "knots.csv").exists():
            raise FileNotFoundError(f"{fit_dir / 'knots.csv'} not found; run `fit` first")
        curve = io.load_knots(fit_dir / "knots.csv")
        info = json.loads((fit_dir / "fit.json").read_text())
        objective = info.get("objective_final", math.nan)
        metric = metric_for_dataset(ds, params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OTConvergenceWarning)
            tau = projection_pseudotime(ds.batches, curve, metric, refine=params.refine)
        used = {"fit": str(fit_dir), "refine": params.refine}
        flags = {"fit_status": info.get("status")}
    else:
        W = distance_matrix_for(ds, params, cache_dir=out / "cache")
        ends = ds.endpoints() if (params.pin_ends and ds.has_truth()) else None
        if method == "tsp":
            res = tsp_seriation(W, fixed_ends=ends)
            used = {"pin_ends": ends is not None}
        else:
            res = spectral_seriation(W, params.spectral_sigma, scaling=params.spectral_scaling)
            used = {"spectral_sigma": params.spectral_sigma,
                    "spectral_scaling": params.spectral_scaling}
        used.update(ot=params.ot, reg=params.reg)
        tau, flags = res.pseudotimes, res.flags
    runtime = (time.perf_counter() - t0) * 1e3
    truth = ds.true_times() if ds.has_truth() else None
    io.save_pseudotimes(tau, out / "pseudotimes.csv", truth)
    metrics = {"method": method, "params": used, "seed": ds.provenance.get("seed"),
               "flags": {k: (bool(v) if isinstance(v, np.bool_) else v) for k, v in flags.items()},
               **_provenance(ds, o)}
    if truth is not None:
        e = kendall_tau_error(tau, truth)
        metrics.update(kendall_error_raw=e, kendall_error_up_to_reversal=min(e, 1.0 - e),
                       objective_final=objective)
        rec = ResultRecord(method, used, int(ds.provenance.get("seed") or 0), e, min(e, 1 - e),
                           runtime, float(objective))
        io.write_table(out / "results.csv", ResultRecord.COLUMNS, [rec.row()])
        log.info("%s: error %.4f (up to reversal %.4f)", method, e, min(e, 1 - e))
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True, default=float) + "\n")
    (out / "timing.json").write_text(json.dumps({"runtime_ms": runtime}) + "\n")
    return EXIT_OK


def _experiment_config(o: dict, default_methods) -> ExperimentConfig:
    model = o.get("dataset", "dataset1")
    spec = DatasetSpec(model=model, n=o.get("n", 250), atoms=o.get("atoms", 10000),
                       sigma=o.get("sigma", 0.0 if model == "euclidean_line" else 0.1),
                       reads=o.get("reads"))
    if "seeds" in o:
        seeds = list(o["seeds"])
    else:
        seeds = list(range(o.get("repeats", 6 if default_methods == ["ppc"] else 5)))
    grid = dict(o.get("grid", {}))
    if "grid_json" in o:
        try:
            grid.update(json.loads(o["grid_json"]))
        except json.JSONDecodeError as exc:
            raise UsageError(f"--grid-json is not valid JSON: {exc}") from exc
    return ExperimentConfig(dataset=spec, seeds=seeds, methods=list(o.get("methods", default_methods)),
                            params=_method_params(o), grid=grid)


def _run_tasks(config: ExperimentConfig, workers: int, cache_dir) -> list:
    tasks = config.tasks()
    if workers <= 1:
        return [run_cell(config, cell, m, s, cache_dir) for _, cell, m, s in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_cell, config, cell, m, s, cache_dir) for _, cell, m, s in tasks]
        return [f.result() for f in futs]


def cmd_sweep(o: dict, default_methods=("ppc",)) -> int:
    config = _experiment_config(o, list(default_methods))
    out = Path(_need(o, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    records = _run_tasks(config, int(o.get("workers", 1)), out / "cache")
    # one writer, fixed task order, whatever order the workers finished in
    io.write_table(out / "results.csv", ResultRecord.COLUMNS, [r.row() for r in records])
    cols, rows = cell_means(config, records)
    io.write_table(out / "cells.csv", cols, rows)
    failed = sum(r.status.startswith("failed") for r in records)
    for r in rows:
        log.info("%s", dict(zip(cols, r)))
    if failed:
        log.warning("%d of %d runs failed; see results.csv", failed, len(records))
    stalled = sum(r.status == "max_iter" for r in records)
    return EXIT_NONCONVERGED if stalled else EXIT_OK


def cmd_bench(o: dict) -> int:
    return cmd_sweep(o, default_methods=("ppc", "tsp", "spectral"))


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "seriate": cmd_seriate, "sweep": cmd_sweep,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        opts = resolve(args)
        command = opts.pop("command")
        return COMMANDS[command](opts)
    except (UsageError, ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
