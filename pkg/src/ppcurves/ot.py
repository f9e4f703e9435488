"""Discrete optimal transport on weighted point clouds.

Exact solvers go through an assignment problem whenever both marginals are
uniform (replicating atoms up to the lcm of the two sizes) and fall back to
the HiGHS transportation LP otherwise. The entropic solver uses stabilized
scaling iterations with a decreasing regularization schedule.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from . import _sinkhorn as _sk

WEIGHT_TOL = 1e-9
MARGINAL_TOL = 1e-7
DEFAULT_CAP = 512
# largest replicated assignment we accept before switching to the LP
_REPLICATE_CAP = 2048


class SolverCapExceeded(ValueError):
    """Raised when an exact solve is requested above the configured size cap."""


class OTConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d."""

    support: np.ndarray
    weights: np.ndarray
    _key: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        support = np.array(self.support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if support.ndim != 2 or support.shape[0] == 0:
            raise ValueError("support must be a non-empty (n, d) array")
        if support.shape[0] != weights.shape[0]:
            raise ValueError(
                f"support has {support.shape[0]} points but {weights.shape[0]} weights"
            )
        if not np.all(np.isfinite(support)) or not np.all(np.isfinite(weights)):
            raise ValueError("support and weights must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        support.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)
        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(support.shape, dtype=np.int64).tobytes())
        h.update(support.tobytes())
        h.update(weights.tobytes())
        object.__setattr__(self, "_key", h.hexdigest())

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x[None, :], np.ones(1))

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def key(self) -> str:
        """Content hash, stable across processes."""
        return self._key

    def mean(self) -> np.ndarray:
        return self.weights @ self.support

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= 1e-12))

    def compact(self) -> "DiscreteMeasure":
        """Drop zero-weight atoms."""
        keep = self.weights > 0
        if keep.all():
            return self
        w = self.weights[keep]
        return DiscreteMeasure(self.support[keep], w / w.sum())

    def __repr__(self):
        return f"DiscreteMeasure(size={self.size}, dim={self.dim})"


@dataclass
class TransportPlan:
    coupling: np.ndarray
    cost: float


@dataclass
class NestedDataset:
    """Uniform measure over a finite list of measures."""

    measures: list

    def __post_init__(self):
        self.measures = list(self.measures)
        if not self.measures:
            raise ValueError("NestedDataset needs at least one measure")

    @property
    def weights(self) -> np.ndarray:
        n = len(self.measures)
        return np.full(n, 1.0 / n)

    def __len__(self):
        return len(self.measures)


def _check_dims(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(np.abs(w - 1.0 / w.size) <= 1e-12))


def transport_lp(a: np.ndarray, b: np.ndarray, C: np.ndarray, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Optimal coupling of the transportation problem min <P, C>.

    ``a`` and ``b`` must be positive and sum to one.
    """
    n, m = C.shape
    if max(n, m) > cap:
        raise SolverCapExceeded(f"exact OT on {n}x{m} exceeds cap {cap}; use sinkhorn")
    if n == 1 or m == 1:
        return np.outer(a, b)
    if _is_uniform(a) and _is_uniform(b):
        lcm = n * m // math.gcd(n, m)
        if lcm <= _REPLICATE_CAP:
            rn, rm = lcm // n, lcm // m
            Cr = C if rn == rm == 1 else np.repeat(np.repeat(C, rn, axis=0), rm, axis=1)
            rows, cols = linear_sum_assignment(Cr)
            P = np.zeros((n, m))
            np.add.at(P, (rows // rn, cols // rm), 1.0 / lcm)
            return P
    return _transport_highs(a, b, C)


def _transport_highs(a, b, C):
    n, m = C.shape
    # row-sum constraints then column-sum constraints over vec(P) in C order
    rows = sparse.kron(sparse.identity(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.identity(m))
    A_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([a, b])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


def _exact(mu: DiscreteMeasure, nu: DiscreteMeasure, power: int, cap: int):
    _check_dims(mu, nu)
    mu_c, nu_c = mu.compact(), nu.compact()
    metric = "sqeuclidean" if power == 2 else "euclidean"
    C = cdist(mu_c.support, nu_c.support, metric)
    P = transport_lp(mu_c.weights, nu_c.weights, C, cap=cap)
    cost = float(max(np.sum(P * C), 0.0))
    if mu_c is not mu or nu_c is not nu:
        full = np.zeros((mu.size, nu.size))
        full[np.ix_(mu.weights > 0, nu.weights > 0)] = P
        P = full
    return cost, P


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = DEFAULT_CAP):
    """Exact 2-Wasserstein distance and an optimal plan (squared Euclidean cost)."""
    cost, P = _exact(mu, nu, 2, cap)
    return math.sqrt(cost), TransportPlan(P, cost)


def w1_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = DEFAULT_CAP) -> float:
    cost, _ = _exact(mu, nu, 1, cap)
    return cost


def sinkhorn_plan(a, b, C, reg, max_iter=10000, tol=1e-6, scaling=4.0):
    """Entropic plan via stabilized scaling with epsilon scaling.

    The regularization starts at max(C) and is divided by ``scaling`` until it
    reaches ``reg``. Returns the plan rounded onto the exact marginals, a
    convergence flag and the iteration count.
    """
    if reg <= 0:
        raise ValueError("reg must be positive")
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    f, g, ok, it, eps = _sk.sinkhorn_potentials(a, b, C, float(reg), int(max_iter), float(tol),
                                                float(scaling))
    # an early stop leaves potentials of a coarser stage; the plan must use that stage's eps
    P = _sk.round_plan(_sk.plan_from_potentials(a, b, C, f, g, eps), a, b)
    return P, bool(ok), int(it)


def w2_sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, reg: float = 1e-2,
                max_iter: int = 10000, tol: float = 1e-6) -> float:
    """Square root of the transport cost of the entropic plan.

    The plan is rounded onto the exact marginals before the cost is taken, so
    the value never undercuts the exact W2. Warns with
    :class:`OTConvergenceWarning` (and returns the last iterate) when the
    marginal error does not reach ``tol`` within ``max_iter``.
    """
    _check_dims(mu, nu)
    if reg <= 0:
        raise ValueError("reg must be positive")
    if mu.key == nu.key:
        return 0.0
    if mu.key > nu.key:
        # solve in a canonical order so the value is exactly symmetric
        mu, nu = nu, mu
    mu_c, nu_c = mu.compact(), nu.compact()
    C = cdist(mu_c.support, nu_c.support, "sqeuclidean")
    cost, ok = _sk.sinkhorn_cost(mu_c.weights, nu_c.weights, C, float(reg), int(max_iter),
                                 float(tol), 4.0)
    if not ok:
        warnings.warn(f"sinkhorn did not converge in {max_iter} iterations", OTConvergenceWarning)
    return math.sqrt(cost)


def w2_sinkhorn_batch(mus: Sequence[DiscreteMeasure], nus: Sequence[DiscreteMeasure],
                      reg: float = 1e-2, max_iter: int = 10000, tol: float = 1e-6) -> np.ndarray:
    """:func:`w2_sinkhorn` over many pairs; pairs sharing support sizes run in one compiled loop."""
    if len(mus) != len(nus):
        raise ValueError("need the same number of measures on both sides")
    out = np.zeros(len(mus))
    groups: dict = {}
    for p, (m, n) in enumerate(zip(mus, nus)):
        _check_dims(m, n)
        if m.key == n.key:
            continue
        if m.key > n.key:
            m, n = n, m
        m, n = m.compact(), n.compact()
        groups.setdefault((m.size, n.size, m.dim), []).append((p, m, n))
    all_ok = True
    for items in groups.values():
        idx = np.array([p for p, _, _ in items])
        X = np.stack([m.support for _, m, _ in items])
        Y = np.stack([n.support for _, _, n in items])
        A = np.stack([m.weights for _, m, _ in items])
        B = np.stack([n.weights for _, _, n in items])
        cost, ok = _sk.sinkhorn_cost_many(X, Y, A, B, float(reg), int(max_iter), float(tol), 4.0)
        out[idx] = np.sqrt(cost)
        all_ok &= bool(ok.all())
    if not all_ok:
        warnings.warn(f"sinkhorn did not converge in {max_iter} iterations for some pairs",
                      OTConvergenceWarning)
    return out


def displacement_interpolate(mu: DiscreteMeasure, nu: DiscreteMeasure, t: float,
                             cap: int = DEFAULT_CAP) -> DiscreteMeasure:
    """Point on the W2 geodesic from ``mu`` (t=0) to ``nu`` (t=1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    _, plan = w2_exact(mu, nu, cap=cap)
    i, j = np.nonzero(plan.coupling > 1e-15)
    w = plan.coupling[i, j]
    pts = (1.0 - t) * mu.support[i] + t * nu.support[j]
    return DiscreteMeasure(pts, w / w.sum())


@dataclass
class BarycenterResult:
    measure: DiscreteMeasure
    objective: list
    converged: bool
    n_iter: int

    @property
    def monotone(self) -> bool:
        obj = self.objective
        return all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(obj, obj[1:]))


def barycenter_fixed_point(measures: Sequence[DiscreteMeasure], weights=None, init=None,
                           max_iter: int = 100, tol: float = 1e-9,
                           cap: int = DEFAULT_CAP) -> BarycenterResult:
    """Free-support W2 barycenter by map averaging.

    Support weights stay fixed at those of the initial measure (by default
    the input with the largest weight). Each step transports the current
    support onto every input and moves each atom to the weighted mean of its
    barycentric targets, so the objective sum_k lambda_k W2^2(mu_k, .) never
    increases.
    """
    measures = list(measures)
    if not measures:
        raise ValueError("barycenter of an empty list")
    lam = np.full(len(measures), 1.0 / len(measures)) if weights is None else np.asarray(weights, float)
    if lam.shape != (len(measures),) or np.any(lam < 0) or lam.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    if abs(lam.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {lam.sum()!r}, expected 1")
    dim = measures[0].dim
    for m in measures:
        if m.dim != dim:
            raise ValueError("all measures must share one dimension")
    active = [(l, m.compact()) for l, m in zip(lam, measures) if l > 0]
    if init is None:
        init = measures[int(np.argmax(lam))]
    init = init.compact()
    Y = np.array(init.support)
    bw = init.weights
    trace = []
    converged = False
    it = 0
    for it in range(max_iter + 1):
        target = np.zeros_like(Y)
        obj = 0.0
        for l, m in active:
            C = cdist(Y, m.support, "sqeuclidean")
            P = transport_lp(bw, m.weights, C, cap=cap)
            obj += l * float(np.sum(P * C))
            target += l * (P @ m.support)
        trace.append(obj)
        if it == max_iter or converged:
            break
        target /= bw[:, None]
        move = float(np.max(np.abs(target - Y)))
        Y = target
        if move < tol:
            converged = True
    result = BarycenterResult(DiscreteMeasure(Y, bw), trace, converged, it)
    if not result.monotone:
        warnings.warn("barycenter objective increased; exact solver tolerance issue",
                      OTConvergenceWarning)
    return result


def barycenter(measures: Sequence[DiscreteMeasure], weights=None, init=None,
               max_iter: int = 100, tol: float = 1e-9) -> DiscreteMeasure:
    res = barycenter_fixed_point(measures, weights, init=init, max_iter=max_iter, tol=tol)
    if not res.converged:
        warnings.warn(f"barycenter stopped at max_iter={max_iter}", OTConvergenceWarning)
    return res.measure


def mmd_gaussian(mu: DiscreteMeasure, nu: DiscreteMeasure, bandwidth: float = 1.0) -> float:
    """Biased MMD with kernel exp(-|x-y|^2 / (2 bandwidth^2))."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    _check_dims(mu, nu)
    s = 2.0 * bandwidth ** 2

    def kbar(p, q):
        return p.weights @ np.exp(-cdist(p.support, q.support, "sqeuclidean") / s) @ q.weights

    val = kbar(mu, mu) + kbar(nu, nu) - 2.0 * kbar(mu, nu)
    return math.sqrt(max(val, 0.0))


def base_distance_matrix(A: Sequence[DiscreteMeasure], B: Sequence[DiscreteMeasure],
                         base: str = "w1", bandwidth: float = 1.0,
                         cap: int = DEFAULT_CAP) -> np.ndarray:
    if base == "w1":
        fn = lambda p, q: w1_exact(p, q, cap)
    elif base == "w2":
        fn = lambda p, q: w2_exact(p, q, cap)[0]
    elif base == "mmd":
        fn = lambda p, q: mmd_gaussian(p, q, bandwidth)
    else:
        raise ValueError(f"unknown base metric {base!r}")
    D = np.empty((len(A), len(B)))
    for i, p in enumerate(A):
        for j, q in enumerate(B):
            D[i, j] = 0.0 if p.key == q.key else fn(p, q)
    return D


def nested_w1(A, B, base: str = "w1", bandwidth: float = 1.0, cap: int = DEFAULT_CAP) -> float:
    """W1 between two uniform measures over measures, for a chosen base metric."""
    A = A if isinstance(A, NestedDataset) else NestedDataset(A)
    B = B if isinstance(B, NestedDataset) else NestedDataset(B)
    D = base_distance_matrix(A.measures, B.measures, base, bandwidth, cap)
    P = transport_lp(A.weights, B.weights, D, cap=max(cap, len(A), len(B)))
    return float(max(np.sum(P * D), 0.0))


def multinomial_reads(mu: DiscreteMeasure, R: int, rng=None) -> DiscreteMeasure:
    """Replace each support point v by the frequencies of R draws from Multinomial(v)."""
    if R < 1:
        raise ValueError("R must be at least 1")
    rng = np.random.default_rng(rng)
    V = mu.support
    if np.any(V < -WEIGHT_TOL) or np.any(np.abs(V.sum(axis=1) - 1.0) > WEIGHT_TOL):
        raise ValueError("support points must lie on the probability simplex")
    P = np.clip(V, 0.0, None)
    P = P / P.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(R, p) for p in P])
    return DiscreteMeasure(counts / R, mu.weights)
