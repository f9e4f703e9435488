"""Orderings from curves and from distance matrices, and their evaluation."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ot, tsp
from .ot import DiscreteMeasure
from .metric import (DegenerateCurveWarning, EuclideanMetric, KnotCurve, Metric,
                     WassersteinMetric, metric_for, segment_lengths)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class DistanceMatrix:
    values: np.ndarray
    metric: str = "w2"

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(V, V.T, atol=1e-9, rtol=0):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.abs(np.diag(V)) > 1e-9) or np.any(V < 0):
            raise ValueError("distance matrix needs a zero diagonal and nonnegative entries")
        self.values = V

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self) -> str:
        lines = [f"n={self.n},metric={self.metric}"]
        lines += [",".join(repr(float(v)) for v in row) for row in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "DistanceMatrix":
        head, *rows = text.strip("\n").split("\n")
        meta = dict(kv.split("=", 1) for kv in head.split(","))
        V = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)
        if V.shape != (int(meta["n"]), int(meta["n"])):
            raise ValueError("header size does not match the matrix")
        return cls(V.reshape(int(meta["n"]), -1), meta["metric"])

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        return cls.from_csv(Path(path).read_text())


@dataclass
class SeriationResult:
    pseudotimes: np.ndarray
    method: str
    error: float | None = None
    error_up_to_reversal: float | None = None
    flags: dict = field(default_factory=dict)

    @property
    def permutation(self) -> np.ndarray:
        """Batch indices sorted by pseudotime (stable)."""
        return np.argsort(self.pseudotimes, kind="stable")

    def evaluate(self, true_times) -> "SeriationResult":
        self.error = kendall_tau_error(self.pseudotimes, true_times)
        self.error_up_to_reversal = min(self.error, 1.0 - self.error)
        return self


# ---------------------------------------------------------------- evaluation


def kendall_tau_error(pseudotimes, true_times) -> float:
    """Fraction of pairs ordered against the truth; pseudotime ties count 1/2."""
    p = np.asarray(pseudotimes, dtype=float)
    t = np.asarray(true_times, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("pseudotimes and true times must be 1-d of equal length")
    T = p.size
    if T < 2:
        return 0.0
    order = np.argsort(t, kind="stable")
    ts = t[order]
    if np.any(np.diff(ts) == 0):
        raise ValueError("true times must be distinct")
    ps = p[order]
    iu = np.triu_indices(T, k=1)
    diff = ps[iu[0]] - ps[iu[1]]
    bad = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(2.0 * bad / (T * (T - 1)))


def ranks01(values) -> np.ndarray:
    """Stable ranks rescaled to [0, 1]."""
    v = np.asarray(values, dtype=float)
    r = np.empty(v.size)
    r[np.argsort(v, kind="stable")] = np.arange(v.size)
    return r / max(v.size - 1, 1)


# ---------------------------------------------------------------- curve projection


def _segment_projection_euclid(x, p, q, lo=0.0, hi=1.0):
    d = q - p
    L2 = float(d @ d)
    t = 0.0 if L2 == 0.0 else float(np.clip((x - p) @ d / L2, lo, hi))
    return t, float(np.linalg.norm(x - (p + t * d)))


def _segment_path(p, q):
    """Map t -> point on the line from p to q; outside [0, 1] the exact plan is extrapolated."""
    if isinstance(p, DiscreteMeasure):
        _, plan = ot.w2_exact(p, q)
        i, j = np.nonzero(plan.coupling > 1e-15)
        w = plan.coupling[i, j]
        w = w / w.sum()
        x, y = p.support[i], q.support[j]
        return lambda t: DiscreteMeasure((1.0 - t) * x + t * y, w)
    return lambda t: (1.0 - t) * p + t * q


def _segment_projection_golden(metric, x, path, lo=0.0, hi=1.0, iters=40):
    f = lambda t: metric.dist(x, path(t))
    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    cands = [(f(0.0), 0.0), (fc, c), (fd, d), (f(1.0), 1.0)]
    best = min(cands, key=lambda z: (z[0], z[1]))
    return best[1], best[0]


def projection_pseudotime(data, curve: KnotCurve, metric: Metric | None = None,
                          refine: bool = False, D: np.ndarray | None = None,
                          extend_ends: bool = True) -> np.ndarray:
    """Normalized arc-length position of each element's projection onto the curve.

    Without ``refine`` the position is that of the nearest knot (lowest index
    on ties). With ``refine`` the element is projected onto the two geodesic
    segments touching that knot and the closer foot point is used; with
    ``extend_ends`` the first and last segments are prolonged past the end
    knots (by up to the curve length for measures) so data beyond the ends do not all
    collapse onto them, and positions are rescaled back into [0, 1].
    """
    data = list(data)
    metric = metric if metric is not None else metric_for(data[0])
    seg = segment_lengths(curve, metric)
    total = float(seg.sum())
    if total <= 0.0:
        warnings.warn("zero-length curve: all pseudotimes set to 0", DegenerateCurveWarning)
        return np.zeros(len(data))
    pos = np.concatenate([[0.0], np.cumsum(seg)])
    if D is None:
        D = metric.pairwise(data, curve.knots)
    nearest = np.argmin(D, axis=1)
    if not refine:
        return pos[nearest] / total
    K = len(curve)
    euclid = isinstance(metric, EuclideanMetric)
    inner = metric.exact_variant()
    paths = {}
    out = np.empty(len(data))
    for n, k in enumerate(nearest):
        best = (D[n, k] if euclid else inner.dist(data[n], curve[k]), pos[k])
        for a, b in ((k - 1, k), (k, k + 1)):
            if a < 0 or b >= K or seg[a] == 0.0:
                continue
            # prolong by up to the whole curve length (unbounded in R^d)
            reach = np.inf if euclid else total / seg[a]
            lo = -reach if extend_ends and a == 0 else 0.0
            hi = 1.0 + reach if extend_ends and b == K - 1 else 1.0
            if euclid:
                t, dist = _segment_projection_euclid(np.asarray(data[n], float),
                                                     np.asarray(curve[a], float),
                                                     np.asarray(curve[b], float), lo, hi)
            else:
                if a not in paths:
                    paths[a] = _segment_path(curve[a], curve[b])
                t, dist = _segment_projection_golden(inner, data[n], paths[a], lo, hi)
            if dist < best[0] - 1e-15:
                best = (dist, pos[a] + t * seg[a])
        out[n] = best[1]
    lo, hi = min(0.0, out.min()), max(total, out.max())
    return np.clip((out - lo) / (hi - lo), 0.0, 1.0)


def ppc_seriation(data, curve: KnotCurve, metric: Metric | None = None,
                  refine: bool = False) -> SeriationResult:
    tau = projection_pseudotime(data, curve, metric, refine=refine)
    return SeriationResult(tau, "ppc", flags={"refine": refine})


# ---------------------------------------------------------------- baselines


def _values(W) -> np.ndarray:
    return W.values if isinstance(W, DistanceMatrix) else DistanceMatrix(W).values


def tsp_seriation(W, fixed_ends: tuple | None = None) -> SeriationResult:
    """Order along a short Hamiltonian path through the distance matrix."""
    V = _values(W)
    N = V.shape[0]
    if N < 2:
        raise ValueError("need at least two items")
    start, end = fixed_ends if fixed_ends is not None else (None, None)
    order = tsp.solve_path(V, start=start, end=end)
    tau = np.empty(N)
    tau[np.asarray(order)] = np.arange(N) / (N - 1)
    return SeriationResult(tau, "tsp", flags={"path_length": tsp.path_length(V, order)})


def _second_eigvec(S, u1, tol, max_iter, rng):
    # power iteration on S + I (spectrum in [0, 2]) with u1 projected out;
    # stops on the eigen-residual, since small steps alone can mean a small gap
    v = rng.standard_normal(S.shape[0])
    v -= (u1 @ v) * u1
    v /= np.linalg.norm(v)
    for it in range(max_iter):
        w = S @ v + v
        w -= (u1 @ w) * u1
        lam = v @ w
        if np.linalg.norm(w - lam * v) < tol:
            return v, True, it + 1
        v = w / np.linalg.norm(w)
    return v, False, max_iter


def spectral_seriation(W, sigma: float, tol: float = 1e-10, max_iter: int = 20000,
                       seed: int = 0, scaling: str = "symmetric") -> SeriationResult:
    """Order by the second eigenvector of D^-1/2 A D^-1/2 with A = exp(-W^2 / sigma^2).

    ``scaling="symmetric"`` ranks the eigenvector u itself. ``"random_walk"``
    ranks D^-1/2 u instead, the matching eigenvector of D^-1 A; it avoids the
    bend u shows near the two ends of a chain, where the degrees drop.
    """
    if scaling not in ("symmetric", "random_walk"):
        raise ValueError(f"unknown scaling {scaling!r}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    V = _values(W)
    N = V.shape[0]
    if N < 2:
        raise ValueError("need at least two items")
    A = np.exp(-(V ** 2) / sigma ** 2)
    off = A.sum(axis=1) - np.diag(A)
    flags = {"disconnected": bool(np.any(off < 1e-12))}
    if N == 2:
        return SeriationResult(np.array([0.0, 1.0]), "spectral", flags=flags)
    d = A.sum(axis=1)
    isq = 1.0 / np.sqrt(d)
    S = isq[:, None] * A * isq[None, :]
    u1 = np.sqrt(d) / np.linalg.norm(np.sqrt(d))
    v, ok, its = _second_eigvec(S, u1, tol, max_iter, np.random.default_rng(seed))
    flags.update(power_iterations=its, power_converged=ok)
    if not ok:
        vals, vecs = np.linalg.eigh(S)
        v = vecs[:, -2]
        flags["eigh_fallback"] = True
    if scaling == "random_walk":
        v = v * isq
    # sign fixed by the largest-magnitude entry, which commutes with relabeling
    k = int(np.argmax(np.abs(v)))
    v = v * np.sign(v[k]) if v[k] != 0 else v
    return SeriationResult(ranks01(v), "spectral", flags=flags)


# ---------------------------------------------------------------- W2 matrix


def _dataset_key(measures, solver, reg) -> str:
    h = hashlib.blake2b(digest_size=12)
    for m in measures:
        h.update(m.key.encode())
    h.update(f"{solver}:{reg}".encode())
    return h.hexdigest()


def pairwise_w2_matrix(measures, solver: str = "exact", reg: float = 1e-2,
                       cache_dir=None, metric: WassersteinMetric | None = None) -> DistanceMatrix:
    """Pairwise W2 between batches, optionally cached as CSV under ``cache_dir``."""
    measures = list(measures)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"w2_{solver}_{_dataset_key(measures, solver, reg)}.csv"
        if path.exists():
            return DistanceMatrix.load(path)
    metric = metric or WassersteinMetric(solver=solver, reg=reg)
    V = metric.symmetric(measures)
    out = DistanceMatrix(V, f"w2-{solver}")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        out.save(path)
    return out
