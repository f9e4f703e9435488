"""Synthetic curves of measures and their doubly empirical samples."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ot
from .ot import DiscreteMeasure

SQRT2 = math.sqrt(2.0)


def dataset1_skeleton(t: float) -> np.ndarray:
    """Two branch locations (rows) of the branching skeleton at time t in [0, 1+sqrt2]."""
    if t <= 1.0:
        p = np.array([0.0, 1.0 - t])
        return np.stack([p, p])
    s = (t - 1.0) / SQRT2
    return np.array([[-s, -s], [s, -s]])


def dataset2_skeleton(t: float) -> np.ndarray:
    """Branch locations of the bent skeleton at time t in [0, 2.1]."""
    if t <= 1.0:
        p = np.array([0.0, 1.0 - t])
        return np.stack([p, p])
    if t <= 1.1:
        p = (t - 1.0) / 0.1 * np.array([1.5, 0.0])
        return np.stack([p, p])
    s = t - 1.1
    return np.array([[1.5 - s, s], [1.5 + s, s]])


@dataclass
class CurveModel:
    model: str
    sigma: float = 0.1

    DOMAINS = {
        "dataset1": (0.0, 1.0 + SQRT2),
        "dataset2": (0.0, 2.1),
        "euclidean_line": (0.0, 1.0),
    }

    def __post_init__(self):
        if self.model not in self.DOMAINS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def domain(self) -> tuple:
        return self.DOMAINS[self.model]

    def skeleton(self, t: float) -> np.ndarray:
        if self.model == "dataset1":
            return dataset1_skeleton(t)
        if self.model == "dataset2":
            return dataset2_skeleton(t)
        return np.array([[t, 0.0], [t, 0.0]])


@dataclass
class Dataset:
    """Batches with hidden true times.

    ``batches`` holds DiscreteMeasures (backend ``"wasserstein"``) or 1-d
    arrays (backend ``"euclidean"``). True times are kept off the public
    attributes; read them through :meth:`true_times`.
    """

    batches: list
    provenance: dict
    _true_times: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.batches:
            raise ValueError("a dataset needs at least one batch")
        if self._true_times is not None:
            self._true_times = np.asarray(self._true_times, dtype=float)
            if self._true_times.shape != (len(self.batches),):
                raise ValueError("one true time per batch required")

    @property
    def backend(self) -> str:
        return "wasserstein" if isinstance(self.batches[0], DiscreteMeasure) else "euclidean"

    def __len__(self):
        return len(self.batches)

    def has_truth(self) -> bool:
        return self._true_times is not None

    def true_times(self) -> np.ndarray:
        if self._true_times is None:
            raise LookupError("this dataset carries no ground-truth times")
        return self._true_times.copy()

    def endpoints(self) -> tuple:
        """Indices of the earliest and latest batch (the oracle-supplied start and end)."""
        t = self.true_times()
        return int(np.argmin(t)), int(np.argmax(t))

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for b in self.batches:
            if isinstance(b, DiscreteMeasure):
                h.update(b.key.encode())
            else:
                h.update(np.asarray(b, dtype=float).tobytes())
        return h.hexdigest()


def _check_sizes(N, atoms_total):
    if N < 2:
        raise ValueError("need at least two time points")
    if atoms_total < N:
        raise ValueError(f"atoms_total={atoms_total} is smaller than N={N}")


def sample_curve(model: str, N: int, atoms_total: int, sigma: float = 0.1, seed=None,
                 grid: bool = False) -> Dataset:
    """N empirical measures of floor(atoms_total / N) atoms each along a model curve.

    Times are i.i.d. uniform on the model domain (or an even grid), each atom
    picks a branch with probability 1/2 and gets isotropic Gaussian noise.
    Batches come out in shuffled order.
    """
    _check_sizes(N, atoms_total)
    cm = CurveModel(model, sigma)
    M = atoms_total // N
    rng = np.random.default_rng(seed)
    lo, hi = cm.domain
    times = np.linspace(lo, hi, N) if grid else rng.uniform(lo, hi, N)
    batches = []
    for t in times:
        skel = cm.skeleton(float(t))
        branch = rng.integers(2, size=M)
        pts = skel[branch] + sigma * rng.standard_normal((M, 2))
        batches.append(DiscreteMeasure.uniform(pts))
    perm = rng.permutation(N)
    prov = {"model": model, "seed": seed, "N": N, "M": M, "sigma": sigma,
            "atoms_total": atoms_total, "grid": grid, "R": None}
    return Dataset([batches[i] for i in perm], prov, times[perm])


def gen_dataset1(N: int, atoms_total: int, sigma: float = 0.1, seed=None, grid: bool = False) -> Dataset:
    return sample_curve("dataset1", N, atoms_total, sigma, seed, grid)


def gen_dataset2(N: int, atoms_total: int, sigma: float = 0.1, seed=None, grid: bool = False) -> Dataset:
    return sample_curve("dataset2", N, atoms_total, sigma, seed, grid)


def gen_euclidean_line(N: int, noise: float = 0.0, seed=None) -> Dataset:
    """Points (t, 0) at uniform times t in [0, 1], plus optional isotropic noise."""
    if N < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, N)
    pts = np.stack([t, np.zeros(N)], axis=1)
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    prov = {"model": "euclidean_line", "seed": seed, "N": N, "M": 1, "sigma": noise, "R": None}
    return Dataset([p for p in pts], prov, t)


def on_simplex(mu: DiscreteMeasure, tol: float = ot.WEIGHT_TOL) -> bool:
    V = mu.support
    return bool(np.all(V >= -tol) and np.all(np.abs(V.sum(axis=1) - 1.0) <= tol))


def embed_simplex(dataset: Dataset, offset=None) -> Dataset:
    """Map atoms x in R^d to (x - offset, 1) / (sum(x - offset) + 1) on the d-simplex.

    ``offset`` defaults to the coordinatewise minimum over all atoms, so every
    shifted coordinate is nonnegative; the map is injective.
    """
    if dataset.backend != "wasserstein":
        raise ValueError("simplex embedding applies to measure-valued datasets")
    if offset is None:
        offset = np.min(np.concatenate([b.support for b in dataset.batches]), axis=0)
    offset = np.asarray(offset, dtype=float)
    out = []
    for b in dataset.batches:
        Z = b.support - offset
        if np.any(Z < -1e-12):
            raise ValueError("offset leaves negative coordinates")
        Z = np.clip(Z, 0.0, None)
        V = np.concatenate([Z, np.ones((Z.shape[0], 1))], axis=1)
        out.append(DiscreteMeasure(V / V.sum(axis=1, keepdims=True), b.weights))
    prov = dict(dataset.provenance, simplex_offset=offset.tolist())
    return Dataset(out, prov, dataset._true_times)


def apply_reads(dataset: Dataset, R: int, seed=None, embed: bool = False) -> Dataset:
    """Corrupt every atom by R multinomial reads."""
    if R < 1:
        raise ValueError("R must be at least 1")
    if embed:
        dataset = embed_simplex(dataset)
    if not all(on_simplex(b) for b in dataset.batches):
        raise ValueError("batches are not supported on the simplex; pass embed=True")
    rng = np.random.default_rng(seed)
    out = [ot.multinomial_reads(b, R, rng) for b in dataset.batches]
    prov = dict(dataset.provenance, R=R, reads_seed=seed)
    return Dataset(out, prov, dataset._true_times)


# ---------------------------------------------------------------- files


def _fmt(x) -> str:
    return repr(float(x))


def save_dataset(dataset: Dataset, directory, write_truth: bool = True) -> Path:
    """Write atoms.csv, truth.csv and provenance.json into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, b in enumerate(dataset.batches):
        if isinstance(b, DiscreteMeasure):
            for x, w in zip(b.support, b.weights):
                rows.append([str(i)] + [_fmt(v) for v in x] + [_fmt(w)])
        else:
            rows.append([str(i)] + [_fmt(v) for v in np.atleast_1d(b)] + [_fmt(1.0)])
    dim = len(rows[0]) - 2
    header = ",".join(["batch_id"] + [f"x{j + 1}" for j in range(dim)] + ["weight"])
    (d / "atoms.csv").write_text(header + "\n" + "".join(",".join(r) + "\n" for r in rows))
    if write_truth and dataset.has_truth():
        t = dataset.true_times()
        (d / "truth.csv").write_text(
            "batch_id,true_time\n" + "".join(f"{i},{_fmt(v)}\n" for i, v in enumerate(t)))
    prov = dict(dataset.provenance, backend=dataset.backend)
    (d / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return d


def load_dataset(directory, with_truth: bool = True) -> Dataset:
    d = Path(directory)
    prov = json.loads((d / "provenance.json").read_text())
    arr = np.loadtxt(d / "atoms.csv", delimiter=",", skiprows=1, ndmin=2)
    ids = arr[:, 0].astype(int)
    n = int(ids.max()) + 1
    batches = []
    for i in range(n):
        rows = arr[ids == i]
        if prov.get("backend") == "euclidean":
            batches.append(rows[0, 1:-1].copy())
        else:
            batches.append(DiscreteMeasure(rows[:, 1:-1], rows[:, -1]))
    truth = None
    tpath = d / "truth.csv"
    if with_truth and tpath.exists():
        t = np.loadtxt(tpath, delimiter=",", skiprows=1, ndmin=2)
        truth = np.empty(n)
        truth[t[:, 0].astype(int)] = t[:, 1]
    return Dataset(batches, prov, truth)
