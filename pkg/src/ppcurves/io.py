"""Plain-text persistence for curves, traces, pseudotimes and result tables.

Every table is written with the ``csv`` module, floats as ``repr`` and a
``"\\n"`` line terminator, so parsing a file and writing it back reproduces
it byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .metric import KnotCurve
from .ot import DiscreteMeasure
from .seriation import ranks01


def _cell_out(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _cell_in(s: str):
    if s in ("true", "false"):
        return s == "true"
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def table_to_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell_out(v) for v in r])
    return buf.getvalue()


def text_to_table(text: str):
    rd = csv.reader(io.StringIO(text))
    columns = next(rd)
    return columns, [[_cell_in(c) for c in r] for r in rd]


def write_table(path, columns, rows) -> Path:
    p = Path(path)
    p.write_text(table_to_text(columns, rows))
    return p


def read_table(path):
    return text_to_table(Path(path).read_text())


def roundtrip_text(text: str) -> str:
    """Parse a table and emit it again (identity on files written here)."""
    return table_to_text(*text_to_table(text))


# ---------------------------------------------------------------- curves


def save_knots(curve: KnotCurve, path) -> Path:
    """knots.csv: the atoms.csv layout with ``knot_index`` in place of ``batch_id``."""
    rows = []
    for k, g in enumerate(curve.knots):
        if isinstance(g, DiscreteMeasure):
            rows += [[k, *map(float, x), float(w)] for x, w in zip(g.support, g.weights)]
        else:
            rows.append([k, *map(float, np.atleast_1d(g)), 1.0])
    dim = len(rows[0]) - 2
    cols = ["knot_index"] + [f"x{j + 1}" for j in range(dim)] + ["weight"]
    p = write_table(path, cols, rows)
    meta = {"pinned": list(curve.pinned),
            "backend": "wasserstein" if isinstance(curve.knots[0], DiscreteMeasure) else "euclidean"}
    p.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return p


def load_knots(path) -> KnotCurve:
    p = Path(path)
    meta = json.loads(p.with_suffix(".json").read_text())
    arr = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    ids = arr[:, 0].astype(int)
    knots = []
    for k in range(int(ids.max()) + 1):
        rows = arr[ids == k]
        if meta["backend"] == "euclidean":
            knots.append(rows[0, 1:-1].copy())
        else:
            knots.append(DiscreteMeasure(rows[:, 1:-1], rows[:, -1]))
    return KnotCurve(knots, tuple(meta["pinned"]))


def save_trace(trace, path) -> Path:
    rows = [[i, o, f, l, m] for i, (o, f, l, m) in enumerate(
        zip(trace.objective, trace.fit_term, trace.length_term, trace.movement))]
    return write_table(path, ["iteration", "objective", "fit_term", "length_term", "movement"], rows)


def save_pseudotimes(tau, path, true_times=None) -> Path:
    """One row per batch: pseudotime, the evenly spaced label of its rank, and the truth if known."""
    cols = ["batch_id", "pseudotime", "time_label"]
    rows = [[i, float(t), float(r)] for i, (t, r) in enumerate(zip(tau, ranks01(tau)))]
    if true_times is not None:
        cols.append("true_time")
        for r, t in zip(rows, true_times):
            r.append(float(t))
    return write_table(path, cols, rows)


def load_pseudotimes(path) -> np.ndarray:
    _, rows = read_table(path)
    return np.array([r[1] for r in sorted(rows, key=lambda r: r[0])], dtype=float)


def element_mean(x) -> np.ndarray:
    return x.mean() if isinstance(x, DiscreteMeasure) else np.atleast_1d(np.asarray(x, float))


def save_plot_data(data, curve: KnotCurve, tau, path) -> Path:
    """Knot and batch centres with pseudotimes, for overlay plots."""
    rows = []
    for k, g in enumerate(curve.knots):
        m = element_mean(g)
        rows.append(["knot", k, float(m[0]), float(m[1]) if m.size > 1 else 0.0, math.nan])
    for i, x in enumerate(data):
        m = element_mean(x)
        rows.append(["batch", i, float(m[0]), float(m[1]) if m.size > 1 else 0.0, float(tau[i])])
    return write_table(path, ["kind", "index", "x1", "x2", "pseudotime"], rows)


def svg_overlay(data, curve: KnotCurve, tau, path, size: int = 480) -> Path:
    """Static scatter of batch centres coloured by pseudotime with the knot polyline."""
    B = np.array([element_mean(x)[:2] for x in data])
    G = np.array([element_mean(g)[:2] for g in curve.knots])
    if B.shape[1] == 1:
        B = np.column_stack([B, np.zeros(len(B))])
        G = np.column_stack([G, np.zeros(len(G))])
    allp = np.vstack([B, G])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pad = 20

    def xy(p):
        s = (p - lo) / span
        return pad + s[0] * (size - 2 * pad), size - pad - s[1] * (size - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             '<rect width="100%" height="100%" fill="white"/>']
    for p, t in zip(B, tau):
        x, y = xy(p)
        r, b = int(255 * t), int(255 * (1 - t))
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="rgb({r},60,{b})"/>')
    pts = " ".join("{:.2f},{:.2f}".format(*xy(p)) for p in G)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>')
    for p in G:
        x, y = xy(p)
        parts.append(f'<rect x="{x - 2.5:.2f}" y="{y - 2.5:.2f}" width="5" height="5" fill="black"/>')
    parts.append("</svg>")
    p = Path(path)
    p.write_text("\n".join(parts) + "\n")
    return p
