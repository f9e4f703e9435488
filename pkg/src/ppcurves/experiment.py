"""Experiment plumbing shared by the command line and the scripts.

A run is (dataset spec, seed, method, parameters) -> :class:`ResultRecord`.
Defaults for the two branching models are the tuned values reported for
them (bandwidth, length penalty and spectral kernel width).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import datagen
from .metric import EuclideanMetric, WassersteinMetric
from .ot import OTConvergenceWarning
from .ppc import PPCConfig, fit
from .seriation import (kendall_tau_error, pairwise_w2_matrix, projection_pseudotime,
                        spectral_seriation, tsp_seriation)

MODEL_DEFAULTS = {
    "dataset1": {"h": 0.037, "beta": 0.17, "spectral_sigma": 0.5},
    "dataset2": {"h": 0.01, "beta": 0.037, "spectral_sigma": 0.315},
    "euclidean_line": {"h": 0.037, "beta": 1e-3, "spectral_sigma": 0.5},
}
DEFAULT_KNOTS = 30
METHODS = ("ppc", "tsp", "spectral")


@dataclass
class DatasetSpec:
    model: str = "dataset1"
    n: int = 250
    atoms: int = 10000
    sigma: float = 0.1
    reads: int | None = None
    grid: bool = False

    def __post_init__(self):
        if self.model not in datagen.CurveModel.DOMAINS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.n < 2:
            raise ValueError("need at least two time points")
        if self.model != "euclidean_line" and self.atoms < self.n:
            raise ValueError(f"atoms={self.atoms} is smaller than n={self.n}")

    def generate(self, seed: int) -> datagen.Dataset:
        if self.model == "euclidean_line":
            return datagen.gen_euclidean_line(self.n, self.sigma, seed)
        ds = datagen.sample_curve(self.model, self.n, self.atoms, self.sigma, seed, self.grid)
        if self.reads is not None:
            ds = datagen.apply_reads(ds, self.reads, seed, embed=True)
        return ds


@dataclass
class MethodParams:
    """Everything a single seriation run needs besides the data."""

    beta: float | None = None
    h: float | None = None
    knots: int = DEFAULT_KNOTS
    mode: str = "nonlocal"
    kernel: str = "epanechnikov"
    pin_ends: bool = True
    ot: str = "sinkhorn"
    reg: float = 1e-2
    spectral_sigma: float | None = None
    spectral_scaling: str = "symmetric"
    refine: bool = True
    max_outer_iters: int = 100
    epsilon: float = 1e-6
    time_limit: float | None = None

    def resolved(self, model: str) -> "MethodParams":
        d = MODEL_DEFAULTS.get(model, MODEL_DEFAULTS["dataset1"])
        out = MethodParams(**asdict(self))
        for k in ("beta", "h", "spectral_sigma"):
            if getattr(out, k) is None:
                setattr(out, k, d[k])
        return out

    def ppc_config(self, seed: int, pinned: dict | None = None, K: int | None = None) -> PPCConfig:
        return PPCConfig(beta=self.beta, K=K or self.knots, h=self.h, mode=self.mode,
                         kernel=self.kernel, seed=seed, pinned=pinned or {},
                         max_outer_iters=self.max_outer_iters, epsilon=self.epsilon,
                         time_limit=self.time_limit)


@dataclass
class ResultRecord:
    method: str
    params: dict
    seed: int
    kendall_error_raw: float
    kendall_error_up_to_reversal: float
    runtime_ms: float
    objective_final: float = math.nan
    status: str = "ok"

    def __post_init__(self):
        for v in (self.kendall_error_raw, self.kendall_error_up_to_reversal):
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"error {v} outside [0, 1]")

    COLUMNS = ("method", "params", "seed", "kendall_error_raw", "kendall_error_up_to_reversal",
               "runtime_ms", "objective_final", "status")

    def row(self) -> list:
        return [self.method, json.dumps(self.params, sort_keys=True), self.seed,
                self.kendall_error_raw, self.kendall_error_up_to_reversal, self.runtime_ms,
                self.objective_final, self.status]

    @classmethod
    def from_row(cls, row) -> "ResultRecord":
        m, p, s, e, er, rt, of, st = row
        return cls(m, json.loads(p), int(s), float(e), float(er), float(rt),
                   math.nan if of is None else float(of), st)


def content_hash(obj) -> str:
    return hashlib.blake2b(json.dumps(obj, sort_keys=True, default=str).encode(),
                           digest_size=12).hexdigest()


def metric_for_dataset(ds: datagen.Dataset, params: MethodParams):
    if ds.backend == "euclidean":
        return EuclideanMetric()
    return WassersteinMetric(solver=params.ot, reg=params.reg)


@dataclass
class RunOutput:
    record: ResultRecord
    pseudotimes: np.ndarray
    curve: object = None
    trace: object = None
    flags: dict = field(default_factory=dict)


def run_method(ds: datagen.Dataset, method: str, params: MethodParams, seed: int,
               model: str = "dataset1", W=None, cache_dir=None) -> RunOutput:
    """Order ``ds`` with one method and score it against the hidden times."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    p = params.resolved(model)
    metric = metric_for_dataset(ds, p)
    t0 = time.perf_counter()
    curve = trace = None
    flags: dict = {}
    obj = math.nan
    ends = ds.endpoints() if p.pin_ends and ds.has_truth() else None
    if method == "ppc":
        # a budget sweep can go below the default knot count; the curve cannot have more knots than data
        p.knots = min(p.knots, len(ds))
        pinned = {}
        if ends is not None:
            pinned = {0: ds.batches[ends[0]], p.knots - 1: ds.batches[ends[1]]}
        cfg = p.ppc_config(seed, pinned)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OTConvergenceWarning)
            curve, trace = fit(ds.batches, cfg, metric=metric)
            tau = projection_pseudotime(ds.batches, curve, metric, refine=p.refine)
        obj = trace.objective[-1]
        flags = {"status": trace.status, "iterations": len(trace.objective) - 1,
                 "monotone": trace.is_monotone()}
        used = {k: getattr(p, k) for k in ("beta", "h", "knots", "mode", "ot", "reg", "pin_ends")}
    else:
        if W is None:
            W = distance_matrix_for(ds, p, cache_dir)
        if method == "tsp":
            res = tsp_seriation(W, fixed_ends=ends)
            used = {"pin_ends": p.pin_ends, "ot": p.ot, "reg": p.reg}
        else:
            res = spectral_seriation(W, p.spectral_sigma, scaling=p.spectral_scaling)
            used = {"spectral_sigma": p.spectral_sigma, "spectral_scaling": p.spectral_scaling,
                    "ot": p.ot, "reg": p.reg}
        tau, flags = res.pseudotimes, res.flags
    runtime = (time.perf_counter() - t0) * 1e3
    e = kendall_tau_error(tau, ds.true_times())
    rec = ResultRecord(method, used, seed, e, min(e, 1.0 - e), runtime, float(obj),
                       flags.get("status", "ok") if method == "ppc" else "ok")
    return RunOutput(rec, tau, curve, trace, flags)


def distance_matrix_for(ds: datagen.Dataset, params: MethodParams, cache_dir=None):
    if ds.backend == "euclidean":
        X = np.asarray(ds.batches, dtype=float)
        return EuclideanMetric().symmetric(list(X))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OTConvergenceWarning)
        return pairwise_w2_matrix(ds.batches, params.ot, params.reg, cache_dir)


# ---------------------------------------------------------------- sweeps


@dataclass
class ExperimentConfig:
    """A dataset spec, a seed list, the methods to run and a parameter grid.

    ``grid`` maps field names of :class:`MethodParams` (or ``"n"`` for a
    fixed-budget sweep over time-point counts) to lists of values; every
    combination is one cell.
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    seeds: list = field(default_factory=lambda: list(range(6)))
    methods: list = field(default_factory=lambda: ["ppc"])
    params: MethodParams = field(default_factory=MethodParams)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec(**self.dataset)
        if isinstance(self.params, dict):
            self.params = MethodParams(**self.params)
        if not self.seeds:
            raise ValueError("seed list must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        allowed = {f.name for f in fields(MethodParams)} | {"n", "atoms", "sigma", "reads"}
        for k, v in self.grid.items():
            if k not in allowed:
                raise ValueError(f"cannot sweep over {k!r}")
            if not isinstance(v, (list, tuple)) or not v:
                raise ValueError(f"grid values for {k!r} must be a nonempty list")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list:
        keys = sorted(self.grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.grid[k] for k in keys))]

    def tasks(self) -> list:
        """(cell index, cell, method, seed) for every run, in a fixed order."""
        return [(ci, cell, m, s) for ci, cell in enumerate(self.cells())
                for m in self.methods for s in self.seeds]


def run_cell(config: ExperimentConfig, cell: dict, method: str, seed: int, cache_dir=None) -> ResultRecord:
    """One sweep task; failures come back as a record with NaN errors."""
    ds_fields = {k: v for k, v in cell.items() if k in ("n", "atoms", "sigma", "reads")}
    p_fields = {k: v for k, v in cell.items() if k not in ds_fields}
    spec = DatasetSpec(**{**asdict(config.dataset), **ds_fields})
    params = MethodParams(**{**asdict(config.params), **p_fields})
    try:
        ds = spec.generate(seed)
        rec = run_method(ds, method, params, seed, spec.model, cache_dir=cache_dir).record
        rec.params = {**rec.params, **cell}
        return rec
    except Exception as exc:  # recorded per cell so the sweep keeps going
        return ResultRecord(method, dict(cell), seed, math.nan, math.nan, 0.0, math.nan,
                            f"failed: {type(exc).__name__}: {exc}")


def cell_means(config: ExperimentConfig, records: list) -> tuple:
    """Per (cell, method) mean errors; returns (columns, rows)."""
    keys = sorted(config.grid)
    rows = []
    for cell in config.cells():
        for m in config.methods:
            rs = [r for r in records if r.method == m and all(r.params.get(k) == cell[k] for k in keys)]
            ok = [r for r in rs if not math.isnan(r.kendall_error_raw)]
            raw = float(np.mean([r.kendall_error_raw for r in ok])) if ok else math.nan
            rev = float(np.mean([r.kendall_error_up_to_reversal for r in ok])) if ok else math.nan
            rows.append([*(cell[k] for k in keys), m, len(ok), len(rs) - len(ok), raw, rev])
    return [*keys, "method", "n_ok", "n_failed", "mean_error_raw", "mean_error_up_to_reversal"], rows
