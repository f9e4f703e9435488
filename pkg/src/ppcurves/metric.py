"""Metric backends and discrete-curve geometry.

A backend provides distances, geodesic interpolation and weighted
barycenters for one kind of element:

* :class:`EuclideanMetric` -- 1-d numpy vectors.
* :class:`WassersteinMetric` -- :class:`~ppcurves.ot.DiscreteMeasure` under W2.

Everything in :mod:`ppcurves.ppc` and :mod:`ppcurves.seriation` is written
against this interface only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import ot
from .ot import DiscreteMeasure

EQUAL_TOL = 1e-9


class BackendMismatch(TypeError):
    pass


class DegenerateCurveWarning(UserWarning):
    pass


class Metric:
    name = "abstract"

    def check(self, x):
        """Validate one element; return it in canonical form."""
        raise NotImplementedError

    def dist(self, a, b) -> float:
        raise NotImplementedError

    def pairwise(self, xs: Sequence, ys: Sequence) -> np.ndarray:
        xs, ys = list(xs), list(ys)
        D = np.empty((len(xs), len(ys)))
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                D[i, j] = self.dist(x, y)
        return D

    def symmetric(self, xs: Sequence) -> np.ndarray:
        """Pairwise matrix of one list against itself, evaluating each pair once."""
        xs = list(xs)
        n = len(xs)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                D[i, j] = D[j, i] = self.dist(xs[i], xs[j])
        return D

    def geodesic(self, a, b, t: float):
        raise NotImplementedError

    def barycenter(self, elements: Sequence, weights, init=None):
        raise NotImplementedError

    def equal(self, a, b, tol: float = EQUAL_TOL) -> bool:
        raise NotImplementedError

    def exact_variant(self) -> "Metric":
        """The same metric with exact distance evaluation (used for inner solver weights)."""
        return self


class EuclideanMetric(Metric):
    name = "euclidean"

    def check(self, x):
        if isinstance(x, DiscreteMeasure):
            raise BackendMismatch("expected a Euclidean point, got a DiscreteMeasure")
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError(f"Euclidean points are 1-d arrays, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite coordinates")
        return x

    def _pair(self, a, b):
        a, b = self.check(a), self.check(b)
        if a.shape != b.shape:
            raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
        return a, b

    def dist(self, a, b) -> float:
        a, b = self._pair(a, b)
        return float(math.sqrt(np.sum((a - b) ** 2)))

    def pairwise(self, xs, ys) -> np.ndarray:
        X = np.atleast_2d(np.asarray(xs, dtype=float))
        Y = np.atleast_2d(np.asarray(ys, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        return cdist(X, Y)

    def geodesic(self, a, b, t: float):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        a, b = self._pair(a, b)
        if t == 0.0:
            return a.copy()
        if t == 1.0:
            return b.copy()
        return (1.0 - t) * a + t * b

    def barycenter(self, elements, weights, init=None):
        X = np.asarray(elements, dtype=float)
        w = np.asarray(weights, dtype=float)
        return (w @ X) / w.sum()

    def equal(self, a, b, tol=EQUAL_TOL) -> bool:
        a, b = self._pair(a, b)
        return bool(np.all(np.abs(a - b) <= tol))


class DistanceCache:
    """Symmetric distance memo keyed by element content hashes.

    Plain dict writes; concurrent inserts of the same key store the same
    value, so the last writer winning is harmless.
    """

    def __init__(self, maxsize: int = 2_000_000):
        self.maxsize = maxsize
        self._store: dict = {}

    def get(self, ka, kb):
        return self._store.get((ka, kb) if ka <= kb else (kb, ka))

    def put(self, ka, kb, value):
        if len(self._store) >= self.maxsize:
            self._store.clear()
        self._store[(ka, kb) if ka <= kb else (kb, ka)] = value

    def clear(self):
        self._store.clear()

    def __len__(self):
        return len(self._store)


@dataclass
class WassersteinMetric(Metric):
    """W2 between discrete measures.

    ``solver`` selects how distances are evaluated: ``"exact"`` (transport LP /
    assignment) or ``"sinkhorn"`` (entropic plan cost at ``reg``). Geodesics
    and barycenters always use exact plans.
    """

    solver: str = "exact"
    reg: float = 1e-2
    cap: int = ot.DEFAULT_CAP
    barycenter_iters: int = 3
    sinkhorn_max_iter: int = 10000
    sinkhorn_tol: float = 1e-3
    cache: DistanceCache = field(default_factory=DistanceCache, repr=False)

    name = "wasserstein"

    def __post_init__(self):
        if self.solver not in ("exact", "sinkhorn"):
            raise ValueError(f"unknown OT solver {self.solver!r}")
        if self.reg <= 0:
            raise ValueError("reg must be positive")

    def check(self, x):
        if not isinstance(x, DiscreteMeasure):
            raise BackendMismatch(f"expected a DiscreteMeasure, got {type(x).__name__}")
        return x

    def _pair(self, a, b):
        a, b = self.check(a), self.check(b)
        if a.dim != b.dim:
            raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
        return a, b

    def _raw(self, a, b) -> float:
        if self.solver == "exact":
            return ot.w2_exact(a, b, cap=self.cap)[0]
        return ot.w2_sinkhorn(a, b, self.reg, self.sinkhorn_max_iter, self.sinkhorn_tol)

    def dist(self, a, b) -> float:
        a, b = self._pair(a, b)
        if a.key == b.key:
            return 0.0
        hit = self.cache.get(a.key, b.key)
        if hit is None:
            hit = self._raw(a, b)
            self.cache.put(a.key, b.key, hit)
        return hit

    def pairwise(self, xs, ys) -> np.ndarray:
        xs, ys = list(xs), list(ys)
        D = np.zeros((len(xs), len(ys)))
        todo = []
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                self._pair(x, y)
                if x.key == y.key:
                    continue
                hit = self.cache.get(x.key, y.key)
                if hit is None:
                    todo.append((i, j))
                else:
                    D[i, j] = hit
        if self.solver == "sinkhorn" and todo:
            vals = ot.w2_sinkhorn_batch([xs[i] for i, _ in todo], [ys[j] for _, j in todo],
                                        self.reg, self.sinkhorn_max_iter, self.sinkhorn_tol)
        else:
            vals = [ot.w2_exact(xs[i], ys[j], cap=self.cap)[0] for i, j in todo]
        for (i, j), v in zip(todo, vals):
            D[i, j] = v
            self.cache.put(xs[i].key, ys[j].key, float(v))
        return D

    def symmetric(self, xs) -> np.ndarray:
        xs = list(xs)
        n = len(xs)
        iu, ju = np.triu_indices(n, k=1)
        D = np.zeros((n, n))
        if self.solver == "sinkhorn":
            vals = ot.w2_sinkhorn_batch([xs[i] for i in iu], [xs[j] for j in ju], self.reg,
                                        self.sinkhorn_max_iter, self.sinkhorn_tol)
        else:
            vals = [self.dist(xs[i], xs[j]) for i, j in zip(iu, ju)]
        D[iu, ju] = vals
        D[ju, iu] = vals
        return D

    def geodesic(self, a, b, t: float):
        a, b = self._pair(a, b)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if t == 0.0:
            return a
        if t == 1.0:
            return b
        return ot.displacement_interpolate(a, b, t, cap=self.cap)

    def barycenter(self, elements, weights, init=None):
        w = np.asarray(weights, dtype=float)
        res = ot.barycenter_fixed_point(list(elements), w / w.sum(), init=init,
                                        max_iter=self.barycenter_iters, cap=self.cap)
        return res.measure

    def exact_variant(self) -> "WassersteinMetric":
        if self.solver == "exact":
            return self
        return WassersteinMetric("exact", self.reg, self.cap, self.barycenter_iters,
                                 self.sinkhorn_max_iter, self.sinkhorn_tol)

    def equal(self, a, b, tol=EQUAL_TOL) -> bool:
        a, b = self._pair(a, b)
        if a.size != b.size:
            return False
        return bool(np.all(np.abs(a.support - b.support) <= tol)
                    and np.all(np.abs(a.weights - b.weights) <= tol))


def metric_for(element) -> Metric:
    """Default backend for an element."""
    if isinstance(element, DiscreteMeasure):
        return WassersteinMetric()
    return EuclideanMetric()


@dataclass
class KnotCurve:
    """Ordered knots of a discrete curve; ``pinned`` holds 0-based frozen indices."""

    knots: list
    pinned: tuple = ()

    def __post_init__(self):
        self.knots = list(self.knots)
        if not self.knots:
            raise ValueError("a curve needs at least one knot")
        kinds = {isinstance(k, DiscreteMeasure) for k in self.knots}
        if len(kinds) > 1:
            raise BackendMismatch("all knots must share one backend")
        pinned = tuple(int(i) for i in self.pinned)
        if list(pinned) != sorted(set(pinned)):
            raise ValueError("pinned indices must be sorted and unique")
        if pinned and (pinned[0] < 0 or pinned[-1] >= len(self.knots)):
            raise ValueError("pinned index out of range")
        self.pinned = pinned

    def __len__(self):
        return len(self.knots)

    def __getitem__(self, i):
        return self.knots[i]

    def reordered(self, order) -> "KnotCurve":
        return KnotCurve([self.knots[i] for i in order], self.pinned)

    def with_knots(self, knots) -> "KnotCurve":
        return KnotCurve(knots, self.pinned)


@dataclass
class ProjectionResult:
    knot_index: int
    distance: float


def _metric(curve_or_x, metric):
    if metric is not None:
        return metric
    x = curve_or_x.knots[0] if isinstance(curve_or_x, KnotCurve) else curve_or_x
    return metric_for(x)


def segment_lengths(curve: KnotCurve, metric: Metric | None = None) -> np.ndarray:
    metric = _metric(curve, metric)
    k = curve.knots
    return np.array([metric.dist(k[i], k[i + 1]) for i in range(len(k) - 1)])


def discrete_length(curve: KnotCurve, metric: Metric | None = None) -> float:
    return float(segment_lengths(curve, metric).sum())


def arc_positions(curve: KnotCurve, metric: Metric | None = None) -> np.ndarray:
    """Cumulative arc length at each knot (0 at the first)."""
    return np.concatenate([[0.0], np.cumsum(segment_lengths(curve, metric))])


def arcwise_dist(curve: KnotCurve, j: int, k: int, metric: Metric | None = None) -> float:
    """Length along the curve between knots ``j`` and ``k`` (0-based)."""
    K = len(curve)
    if not (0 <= j < K and 0 <= k < K):
        raise IndexError(f"knot indices ({j}, {k}) out of range for K={K}")
    lo, hi = min(j, k), max(j, k)
    metric = _metric(curve, metric)
    return float(sum(metric.dist(curve[i], curve[i + 1]) for i in range(lo, hi)))


def arcwise_matrix(seg: np.ndarray) -> np.ndarray:
    """All pairwise arcwise distances from segment lengths."""
    pos = np.concatenate([[0.0], np.cumsum(seg)])
    return np.abs(pos[:, None] - pos[None, :])


def project(x, curve: KnotCurve, metric: Metric | None = None) -> ProjectionResult:
    """Nearest knot, lowest index on ties."""
    metric = _metric(curve, metric)
    d = metric.pairwise([x], curve.knots)[0]
    k = int(np.argmin(d))
    return ProjectionResult(k, float(d[k]))


def constant_speed_resample(curve: KnotCurve, m: int, metric: Metric | None = None) -> KnotCurve:
    """Place ``m`` knots at equal arc-length fractions of the piecewise geodesic."""
    if len(curve) < 2:
        raise ValueError("resampling needs at least two knots")
    if m < 2:
        raise ValueError("m must be at least 2")
    metric = _metric(curve, metric)
    seg = segment_lengths(curve, metric)
    total = seg.sum()
    if total <= 0.0:
        warnings.warn("zero-length curve resampled to copies of one point", DegenerateCurveWarning)
        return KnotCurve([curve[0]] * m)
    pos = np.concatenate([[0.0], np.cumsum(seg)])
    out = [curve[0]]
    for frac in np.arange(1, m - 1) / (m - 1):
        s = frac * total
        i = int(np.searchsorted(pos, s, side="right") - 1)
        i = min(max(i, 0), len(seg) - 1)
        while seg[i] == 0.0 and i < len(seg) - 1:
            i += 1
        t = 0.0 if seg[i] == 0.0 else min(max((s - pos[i]) / seg[i], 0.0), 1.0)
        out.append(metric.geodesic(curve[i], curve[i + 1], t))
    out.append(curve[len(curve) - 1])
    return KnotCurve(out)
