"""Acceptance criteria, one test each; every test reports a PASS/FAIL line.

The two dataset-scale runs (dataset1 headline, dataset2 ranking) are marked
``slow``; deselect them with ``-m "not slow"``.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import ACCEPTANCE_LINES
from ppcurves import datagen, ot, tsp
from ppcurves.experiment import DatasetSpec, MethodParams, run_method
from ppcurves.metric import EuclideanMetric, KnotCurve, segment_lengths
from ppcurves.ot import DiscreteMeasure
from ppcurves.ppc import PPCConfig, fit
from ppcurves.seriation import kendall_tau_error

# every fit trace produced by this module, checked by the descent criterion
TRACES: list = []

HEADLINE_BUDGET_S = 1800.0
SEEDS = range(5)


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def headline_runs(n, atoms):
    errs, t0 = [], time.perf_counter()
    for seed in SEEDS:
        ds = DatasetSpec("dataset1", n, atoms, 0.1).generate(seed)
        out = run_method(ds, "ppc", MethodParams(ot="sinkhorn", reg=1e-2), seed, "dataset1")
        TRACES.append(out.trace)
        errs.append(out.record.kendall_error_raw)
    return errs, time.perf_counter() - t0


@pytest.mark.slow
def test_headline_dataset1():
    errs, elapsed = headline_runs(250, 10000)
    detail = (f"N=250, 10000 atoms, mean raw error {np.mean(errs):.4f} over 5 seeds "
              f"{np.round(errs, 4).tolist()} in {elapsed / 60:.1f} min")
    if elapsed <= HEADLINE_BUDGET_S:
        report("headline dataset1", np.mean(errs) <= 0.05, detail + " (threshold 0.05)")
    else:
        small, el2 = headline_runs(100, 4000)
        report("headline dataset1", np.mean(small) <= 0.08,
               detail + f", over budget; N=100, 4000 atoms mean {np.mean(small):.4f} "
               f"in {el2 / 60:.1f} min (threshold 0.08)")


@pytest.mark.slow
def test_dataset2_ranking_against_spectral():
    ppc_err, spec_err, spec_rev = [], [], []
    for seed in SEEDS:
        ds = DatasetSpec("dataset2", 250, 10000, 0.1).generate(seed)
        p = MethodParams(ot="sinkhorn", reg=1e-2)
        out = run_method(ds, "ppc", p, seed, "dataset2")
        TRACES.append(out.trace)
        ppc_err.append(out.record.kendall_error_raw)
        sp = run_method(ds, "spectral", p, seed, "dataset2").record
        spec_err.append(sp.kendall_error_raw)
        spec_rev.append(sp.kendall_error_up_to_reversal)
    # spectral has no orientation, so it is scored up to reversal (its best case)
    ok = np.mean(ppc_err) < np.mean(spec_rev)
    report("dataset2 ranking", ok,
           f"principal curve mean raw error {np.mean(ppc_err):.4f} vs spectral (sigma 0.315) "
           f"{np.mean(spec_rev):.4f} up to reversal ({np.mean(spec_err):.4f} raw)")


def brute_w2(mu, nu):
    n = mu.size
    C = cdist(mu.support, nu.support, "sqeuclidean")
    return math.sqrt(min(sum(C[i, p] for i, p in enumerate(perm)) / n
                         for perm in itertools.permutations(range(n))))


def test_ot_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        mu = DiscreteMeasure.uniform(rng.normal(size=(n, 2)))
        nu = DiscreteMeasure.uniform(rng.normal(size=(n, 2)))
        worst = max(worst, abs(ot.w2_exact(mu, nu)[0] - brute_w2(mu, nu)))
    elapsed = time.perf_counter() - t0
    report("OT oracle equivalence", worst <= 1e-9 and elapsed <= 10.0,
           f"max |w2_exact - enumeration| = {worst:.2e} on 100 pairs in {elapsed:.2f} s")


def test_sinkhorn_fidelity():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        mu = DiscreteMeasure.uniform(rng.normal(size=(10, 2)))
        nu = DiscreteMeasure.uniform(rng.normal(size=(10, 2)))
        ex = ot.w2_exact(mu, nu)[0]
        worst = max(worst, abs(ot.w2_sinkhorn(mu, nu, reg=1e-3) - ex) / (1 + ex))
    report("Sinkhorn fidelity", worst <= 1e-2,
           f"max |sinkhorn - exact| / (1 + exact) = {worst:.2e} on 20 pairs (threshold 1e-2)")


def test_consistency_on_the_line():
    betas = (1e-1, 1e-2, 1e-3)
    means = []
    for beta in betas:
        errs = []
        for seed in SEEDS:
            ds = datagen.gen_euclidean_line(200, 0.0, seed)
            p = MethodParams(beta=beta, knots=30, mode="local", pin_ends=False, refine=True,
                             epsilon=1e-12, max_outer_iters=300)
            out = run_method(ds, "ppc", p, seed, "euclidean_line")
            TRACES.append(out.trace)
            errs.append(out.record.kendall_error_up_to_reversal)
        means.append(float(np.mean(errs)))
    ok = all(b <= a for a, b in zip(means, means[1:])) and means[-1] == 0.0
    report("consistency on the line", ok,
           "mean error up to reversal for beta 1e-1, 1e-2, 1e-3: " + ", ".join(f"{m:.4g}" for m in means))


def test_tsp_relaxation():
    ds = datagen.gen_euclidean_line(30, 0.0, seed=0)
    X = ds.batches
    s, e = ds.endpoints()
    cfg = PPCConfig(beta=1e-3, K=30, seed=0, pinned={0: X[s], 29: X[e]}, epsilon=1e-14,
                    max_outer_iters=200)
    curve, trace = fit(X, cfg, metric=EuclideanMetric())
    TRACES.append(trace)
    L = float(segment_lengths(curve).sum())
    D = cdist(np.array(curve.knots), np.array(curve.knots))
    order = list(range(30))
    # the final order must admit no improving segment reversal between the fixed ends
    two_opt_ok = tsp.two_opt(D, order, fix_start=True, fix_end=True) == order
    span = float(np.ptp(ds.true_times()))
    fit_term = trace.fit_term[-1]
    free_curve, free_trace = fit(X, PPCConfig(beta=1e-3, K=30, seed=0, epsilon=1e-14,
                                              max_outer_iters=200), metric=EuclideanMetric())
    TRACES.append(free_trace)
    ok = fit_term < 1e-9 and two_opt_ok and abs(L - span) <= 1e-9
    report("TSP relaxation", ok,
           f"K=N=30, beta=1e-3, pinned ends: fit term {fit_term:.2e}, tour {L:.12f} vs optimum "
           f"{span:.12f}, 2-opt stable {two_opt_ok} (free ends fit term {free_trace.fit_term[-1]:.2e})")


def test_kendall_exhaustive():
    t = np.arange(5.0)
    mismatches = 0
    for perm in itertools.permutations(range(5)):
        p = np.array(perm, dtype=float)
        brute = sum(p[i] > p[j] for i in range(5) for j in range(i + 1, 5)) / 10.0
        mismatches += kendall_tau_error(p, t) != brute
    report("Kendall exhaustive", mismatches == 0, f"{120 - mismatches}/120 permutations exact")


def test_glivenko_cantelli_trend():
    meds = []
    for n in (10, 20, 40):
        vals = []
        for seed in range(10):
            a = datagen.gen_dataset1(n, n * n, seed=seed).batches
            b = datagen.gen_dataset1(4 * n, 16 * n * n, seed=1000 + seed).batches
            vals.append(ot.nested_w1(a, b, base="mmd", bandwidth=1.0))
        meds.append(float(np.median(vals)))
    ok = meds[0] > meds[1] > meds[2]
    report("Glivenko-Cantelli trend", ok,
           "median nested W1 (Gaussian MMD base) for (N,M)=(10,10),(20,20),(40,40): "
           + ", ".join(f"{m:.4f}" for m in meds))


def test_finite_reads_trend():
    meds = []
    for R in (10, 100, 1000):
        vals = []
        for seed in range(10):
            clean = datagen.embed_simplex(datagen.gen_dataset1(20, 400, seed=seed))
            noisy = datagen.apply_reads(clean, R, seed=100 + seed)
            vals.append(ot.nested_w1(clean.batches, noisy.batches, base="w1"))
        meds.append(float(np.median(vals)))
    ok = meds[0] > meds[1] > meds[2]
    report("finite reads trend", ok,
           "median nested W1 (W1 base) for R=10, 100, 1000: " + ", ".join(f"{m:.4f}" for m in meds))


def test_descent_invariant():
    # runs last in this module so it sees every acceptance trace; when the
    # module is filtered, a small local and nonlocal pair stands in
    if not TRACES:
        rng = np.random.default_rng(0)
        X = [rng.normal(size=2) for _ in range(40)]
        for mode in ("local", "nonlocal"):
            TRACES.append(fit(X, PPCConfig(beta=0.1, K=8, mode=mode, h=0.2))[1])
    bad = 0
    steps = 0
    for tr in TRACES:
        o = tr.objective
        steps += len(o) - 1
        bad += sum(b > a + 1e-9 * (1 + abs(a)) for a, b in zip(o, o[1:]))
    report("descent invariant", bad == 0,
           f"{bad} violations over {steps} iterations in {len(TRACES)} fits")
