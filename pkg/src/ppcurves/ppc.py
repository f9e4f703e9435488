"""Penalized principal curves on K knots.

The solver is a coupled Lloyd iteration: reorder the knots along a short
path, assign every data element to its nearest knot, then move the free
knots. The knot move is block-coordinate descent where each unsquared
neighbour distance is majorized by a squared one, turning every knot step
into a weighted barycenter of data elements and neighbouring knots.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tsp
from .metric import (EuclideanMetric, KnotCurve, Metric, arcwise_matrix, metric_for,
                     segment_lengths)

NEIGHBOR_FLOOR = 1e-8
DESCENT_RTOL = 1e-9
# knots closer than this are updated together
MERGE_TOL = 1e-9


@dataclass
class PPCConfig:
    beta: float = 0.17
    K: int = 30
    epsilon: float = 1e-6
    max_outer_iters: int = 100
    mode: str = "local"
    h: float | Sequence[float] = 0.037
    adaptive_h: bool = False
    kernel: str | Callable = "epanechnikov"
    kernel_p: float = 2.0
    kernel_q: float = 2.0
    pinned: dict = field(default_factory=dict)
    seed: int = 0
    mm_iters: int = 5
    mm_tol: float = 1e-10
    move_tol: float = 1e-7
    min_step: float = 0.125
    time_limit: float | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.mode not in ("local", "nonlocal"):
            raise ValueError(f"mode must be 'local' or 'nonlocal', got {self.mode!r}")
        self.pinned = {int(k): v for k, v in dict(self.pinned).items()}
        if self.pinned and self.K < 2:
            raise ValueError("pinned knots require K >= 2")
        for k in self.pinned:
            if not 0 <= k < self.K:
                raise ValueError(f"pinned index {k} out of range for K={self.K}")
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if np.any(h <= 0) or np.any(h > 1):
            raise ValueError("bandwidths must lie in (0, 1]")
        if h.size not in (1, self.K):
            raise ValueError("h must be a scalar or one value per knot")
        if not callable(self.kernel) and self.kernel != "epanechnikov":
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def bandwidths(self, counts: np.ndarray | None = None, K: int | None = None) -> np.ndarray:
        """Per-knot bandwidths, optionally scaled by cell occupancy."""
        K = K if K is not None else (len(counts) if counts is not None else self.K)
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if h.size == 1:
            h = np.full(K, h[0])
        elif h.size != K:
            raise ValueError(f"{h.size} bandwidths for {K} knots")
        else:
            h = h.copy()
        if self.adaptive_h and counts is not None and np.any(counts > 0):
            med = np.median(counts[counts > 0])
            h = h * np.sqrt(med / np.maximum(counts, 1))
        return np.clip(h, 1e-12, 1.0)

    def kernel_fn(self) -> Callable:
        if callable(self.kernel):
            return self.kernel
        return epanechnikov(self.kernel_p, self.kernel_q)


def epanechnikov(p: float = 2.0, q: float = 2.0) -> Callable:
    def w(t):
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t < 1.0, np.clip(1.0 - t ** p, 0.0, None) ** q, 0.0)
    return w


@dataclass
class VoronoiPartition:
    cells: list
    assignment: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.cells])


@dataclass
class FitTrace:
    objective: list = field(default_factory=list)
    fit_term: list = field(default_factory=list)
    length_term: list = field(default_factory=list)
    movement: list = field(default_factory=list)
    converged: bool = False
    status: str = "running"
    descent_violations: int = 0
    runtime: float = 0.0

    def record(self, obj, fit, length, move):
        self.objective.append(float(obj))
        self.fit_term.append(float(fit))
        self.length_term.append(float(length))
        self.movement.append(float(move))

    def is_monotone(self, rtol: float = DESCENT_RTOL) -> bool:
        o = self.objective
        return all(b <= a + rtol * (1 + abs(a)) for a, b in zip(o, o[1:]))


# ---------------------------------------------------------------- geometry


def _as_metric(data, metric):
    return metric if metric is not None else metric_for(data[0])


def distance_matrix(data, curve: KnotCurve, metric: Metric | None = None) -> np.ndarray:
    """N x K distances from data elements to knots."""
    metric = _as_metric(data, metric)
    return metric.pairwise(data, curve.knots)


def voronoi_cells(data, curve: KnotCurve, metric: Metric | None = None,
                  D: np.ndarray | None = None) -> VoronoiPartition:
    """Nearest-knot cells; ties go to the lowest knot index."""
    if D is None:
        D = distance_matrix(data, curve, metric)
    assign = np.argmin(D, axis=1)
    cells = [np.nonzero(assign == k)[0].tolist() for k in range(D.shape[1])]
    return VoronoiPartition(cells, assign)


def kernel_weights(seg: np.ndarray, h: np.ndarray, kernel: Callable) -> np.ndarray | None:
    """Row-normalized K x K smoothing weights from arcwise distances.

    Returns None for a zero-length curve.
    """
    total = float(np.sum(seg))
    K = len(seg) + 1
    if total <= 0.0:
        return None
    A = arcwise_matrix(seg) / total
    h = np.broadcast_to(np.asarray(h, dtype=float), (K,))
    W = kernel(A / h[:, None]) / h[:, None]
    W = W / W.sum(axis=1, keepdims=True)
    return W


# ---------------------------------------------------------------- objectives


def objective_ppc_k(data, curve: KnotCurve, beta: float, metric: Metric | None = None,
                    D: np.ndarray | None = None):
    """Mean squared distance to the nearest knot plus beta times polyline length."""
    if len(data) == 0:
        raise ValueError("objective needs data")
    metric = _as_metric(data, metric)
    if D is None:
        D = distance_matrix(data, curve, metric)
    fit = float(np.mean(np.min(D, axis=1) ** 2))
    length = float(np.sum(segment_lengths(curve, metric)))
    return fit + beta * length, {"fit": fit, "length": length, "fallback": False}


def objective_ppc_kw(data, curve: KnotCurve, config: PPCConfig, metric: Metric | None = None,
                     D: np.ndarray | None = None):
    """Kernel-smoothed objective: each cell's data is charged to nearby knots along the curve."""
    if len(data) == 0:
        raise ValueError("objective needs data")
    metric = _as_metric(data, metric)
    if D is None:
        D = distance_matrix(data, curve, metric)
    seg = segment_lengths(curve, metric)
    part = voronoi_cells(data, curve, metric, D=D)
    h = config.bandwidths(part.counts)
    W = kernel_weights(seg, h, config.kernel_fn())
    length = float(seg.sum())
    if W is None:
        val, br = objective_ppc_k(data, curve, config.beta, metric, D=D)
        br["fallback"] = True
        return val, br
    fit = float(np.sum(W[part.assignment] * D ** 2) / D.shape[0])
    return fit + config.beta * length, {"fit": fit, "length": length, "fallback": False}


def objective(data, curve, config: PPCConfig, metric=None, D=None):
    if config.mode == "nonlocal":
        return objective_ppc_kw(data, curve, config, metric, D)
    return objective_ppc_k(data, curve, config.beta, metric, D)


# ---------------------------------------------------------------- initialization


def init_kmeanspp(data, K: int, seed=None, metric: Metric | None = None,
                  pinned: dict | None = None) -> KnotCurve:
    """K distinct data elements by D^2 sampling; pins then replace their nearest pick."""
    N = len(data)
    if K > N:
        raise ValueError(f"K={K} exceeds the number of data elements N={N}")
    metric = _as_metric(data, metric)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(N))]
    d2 = metric.pairwise(data, [data[chosen[0]]])[:, 0] ** 2
    d2[chosen[0]] = 0.0
    taken = np.zeros(N, dtype=bool)
    taken[chosen[0]] = True
    while len(chosen) < K:
        p = np.where(taken, 0.0, d2)
        if p.sum() <= 0.0:
            p = (~taken).astype(float)
        nxt = int(rng.choice(N, p=p / p.sum()))
        chosen.append(nxt)
        taken[nxt] = True
        d2 = np.minimum(d2, metric.pairwise(data, [data[nxt]])[:, 0] ** 2)
    knots = [data[i] for i in chosen]
    pinned = pinned or {}
    if not pinned:
        return KnotCurve(knots)
    pool = list(range(K))
    for idx in sorted(pinned):
        d = metric.pairwise([pinned[idx]], [knots[i] for i in pool])[0]
        pool.pop(int(np.argmin(d)))
    rest = iter(knots[i] for i in pool)
    out = [pinned[k] if k in pinned else next(rest) for k in range(K)]
    return KnotCurve(out, tuple(sorted(pinned)))


# ---------------------------------------------------------------- ordering


def tsp_permutation(D: np.ndarray, anchors: Sequence[int] = ()) -> list:
    """Order of K knots minimizing path length, with ``anchors`` kept in place.

    Knots between consecutive anchors are reordered among themselves as a
    fixed-endpoint path problem.
    """
    K = D.shape[0]
    anchors = sorted(set(int(a) for a in anchors))
    if not anchors:
        return tsp.solve_path(D)
    bounds = sorted(set([0, K - 1] + anchors))
    if len(bounds) == 1:
        return [0]
    order: list = []
    for lo, hi in zip(bounds, bounds[1:]):
        idx = list(range(lo, hi + 1))
        path = tsp.solve_path(D[np.ix_(idx, idx)],
                              start=0 if lo in anchors else None,
                              end=len(idx) - 1 if hi in anchors else None)
        seg = [idx[p] for p in path]
        # internal bounds are anchors, so consecutive pieces share exactly that knot
        order.extend(seg[1:] if order else seg)
    return order


def tsp_order(curve: KnotCurve, metric: Metric | None = None, fixed_ends: bool = False) -> KnotCurve:
    """Reorder knots to shorten the polyline; pinned indices (and ends, if asked) stay put."""
    if len(curve) < 2:
        return curve
    metric = metric if metric is not None else metric_for(curve[0])
    D = metric.pairwise(curve.knots, curve.knots)
    anchors = set(curve.pinned)
    if fixed_ends:
        anchors |= {0, len(curve) - 1}
    order = tsp_permutation(D, sorted(anchors))
    if tsp.path_length(D, order) > tsp.path_length(D, range(len(curve))):
        order = list(range(len(curve)))
    return curve.reordered(order)


# ---------------------------------------------------------------- knot update


def _knot_data_weights(N, K, part: VoronoiPartition, W):
    """N x K weights on squared data distances, per knot."""
    if W is None:
        A = np.zeros((N, K))
        A[np.arange(N), part.assignment] = 1.0 / N
        return A
    return W[part.assignment] / N


def _free_blocks(knots, pinned, metric) -> list:
    """Runs of consecutive free knots that sit on one point.

    A run of coincident knots is moved as a single variable: moving any one of
    them alone cannot shorten the curve, so knot-by-knot descent would stall.
    """
    pinned = set(pinned)
    blocks: list = []
    for k in range(len(knots)):
        if k in pinned:
            continue
        if blocks and blocks[-1][-1] == k - 1 and metric.dist(knots[k - 1], knots[k]) <= MERGE_TOL:
            blocks[-1].append(k)
        else:
            blocks.append([k])
    return blocks


def update_knots(data, curve: KnotCurve, partition: VoronoiPartition, config: PPCConfig,
                 metric: Metric | None = None) -> KnotCurve:
    """Block-coordinate majorize-minimize step over the free knots.

    Knot k minimizes sum_n a_nk d^2(x_n, g) + beta * (d(g, g_prev) + d(g, g_next)).
    Each neighbour term d(g, y) is replaced by d^2(g, y) / (2c) + c / 2 with c
    the current distance, and the resulting weighted barycenter problem is
    solved warm-started at the current knot. Sweeps run forward then back.
    Runs of coincident free knots move together (see :func:`_free_blocks`).
    """
    metric = _as_metric(data, metric)
    K = len(curve)
    N = len(data)
    knots = list(curve.knots)
    W = None
    if config.mode == "nonlocal" and K > 1:
        seg = segment_lengths(curve, metric)
        W = kernel_weights(seg, config.bandwidths(partition.counts), config.kernel_fn())
    A = _knot_data_weights(N, K, partition, W)
    euclid = isinstance(metric, EuclideanMetric)
    X = np.asarray(data, dtype=float) if euclid else None
    # the bound d <= d^2/(2c) + c/2 holds for any c > 0, so the weights may
    # come from exact distances even when the objective uses entropic ones
    inner = metric.exact_variant()
    blocks = _free_blocks(knots, curve.pinned, inner)
    order = blocks + blocks[::-1][1:]
    for blk in order:
        lo, hi = blk[0], blk[-1]
        a = A[:, lo:hi + 1].sum(axis=1)
        nz = np.nonzero(a > 0)[0]
        nbrs = [knots[j] for j in (lo - 1, hi + 1) if 0 <= j < K]
        if nz.size == 0 and not nbrs:
            continue
        g = knots[lo]
        for _ in range(config.mm_iters):
            c = [max(inner.dist(g, y), NEIGHBOR_FLOOR) for y in nbrs]
            wn = [config.beta / (2.0 * ci) for ci in c]
            if euclid:
                tot = a[nz].sum() + sum(wn)
                new = (a[nz] @ X[nz] + sum(w * y for w, y in zip(wn, nbrs))) / tot
            else:
                elems = [data[i] for i in nz] + nbrs
                new = metric.barycenter(elems, np.concatenate([a[nz], wn]), init=g)
            moved = inner.dist(g, new)
            g = new
            if moved < config.mm_tol:
                break
        for k in blk:
            knots[k] = g
    return curve.with_knots(knots)


# ---------------------------------------------------------------- driver


def _movement(metric, old, new):
    inner = metric.exact_variant()
    return max(inner.dist(a, b) for a, b in zip(old.knots, new.knots))


def fit(data, config: PPCConfig, metric: Metric | None = None, init: KnotCurve | None = None):
    """Coupled Lloyd iteration; returns the final curve and its trace.

    Each outer step reorders, reassigns and updates. A step whose objective
    rises is retried without the reorder, then shortened along the geodesics
    from the old knots (halving down to ``min_step``); if every candidate
    raises the objective the step is rejected and the run stops with status
    ``"descent_stall"``.
    """
    t_start = time.perf_counter()
    data = list(data)
    metric = _as_metric(data, metric)
    data = [metric.check(x) for x in data]
    pins = {k: metric.check(v) for k, v in config.pinned.items()}
    if init is None:
        curve = init_kmeanspp(data, config.K, config.seed, metric.exact_variant(), pins)
    else:
        curve = KnotCurve(init.knots, tuple(sorted(pins)))
    anchors = sorted(pins)
    trace = FitTrace()
    D = distance_matrix(data, curve, metric)
    obj, br = objective(data, curve, config, metric, D)
    trace.record(obj, br["fit"], br["length"], math.nan)

    def step(cur, Dcur, reorder):
        if reorder and len(cur) > 1:
            Dk = metric.pairwise(cur.knots, cur.knots)
            perm = tsp_permutation(Dk, anchors)
            if tsp.path_length(Dk, perm) > tsp.path_length(Dk, range(len(cur))):
                perm = list(range(len(cur)))
            cur = cur.reordered(perm)
            Dcur = Dcur[:, perm]
        part = voronoi_cells(data, cur, metric, D=Dcur)
        new = update_knots(data, cur, part, config, metric)
        Dn = distance_matrix(data, new, metric)
        val, b = objective(data, new, config, metric, Dn)
        return cur, new, Dn, val, b

    def damped(base, new, t):
        # partial step along the geodesic from each old knot to its update
        knots = [b if k in pins else metric.geodesic(b, n, t)
                 for k, (b, n) in enumerate(zip(base.knots, new.knots))]
        cand = new.with_knots(knots)
        Dc = distance_matrix(data, cand, metric)
        val, br = objective(data, cand, config, metric, Dc)
        return cand, Dc, val, br

    for _ in range(config.max_outer_iters):
        if config.time_limit is not None and time.perf_counter() - t_start > config.time_limit:
            trace.status = "time_limit"
            break
        tol = DESCENT_RTOL * (1 + abs(obj))
        base, new, Dn, val, b = step(curve, D, reorder=True)
        if val > obj + tol:
            base, new, Dn, val, b = step(curve, D, reorder=False)
        full, t = new, 0.5
        while val > obj + tol and t >= config.min_step:
            new, Dn, val, b = damped(base, full, t)
            t *= 0.5
        if val > obj + tol:
            trace.descent_violations += 1
            trace.status = "descent_stall"
            break
        move = _movement(metric, base, new)
        drop = obj - val
        curve, D, obj = new, Dn, val
        trace.record(val, b["fit"], b["length"], move)
        if drop < config.epsilon or move < config.move_tol:
            trace.converged = True
            trace.status = "converged"
            break
    else:
        trace.status = "max_iter"
    trace.runtime = time.perf_counter() - t_start
    return curve, trace
