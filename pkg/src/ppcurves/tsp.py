"""Shortest Hamiltonian paths on a distance matrix.

Open paths (no return edge), optionally with a fixed first and/or last node.
"""
from __future__ import annotations

import numpy as np

EXACT_MAX = 12


def path_length(D: np.ndarray, order) -> float:
    order = np.asarray(order)
    if order.size < 2:
        return 0.0
    return float(D[order[:-1], order[1:]].sum())


def held_karp_path(D: np.ndarray, start: int | None = None, end: int | None = None) -> list:
    """Exact minimum-length Hamiltonian path by subset dynamic programming."""
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if n == 0:
        return []
    if n == 1:
        return [0]
    if start is not None and start == end:
        raise ValueError("start and end must differ")
    full = (1 << n) - 1
    dp = np.full((1 << n, n), np.inf)
    parent = np.full((1 << n, n), -1, dtype=np.int64)
    firsts = [start] if start is not None else [i for i in range(n) if i != end]
    for i in firsts:
        dp[1 << i, i] = 0.0
    bits = 1 << np.arange(n)
    for mask in range(1, full + 1):
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        # extend every finite (mask, i) by an unvisited j
        free = (mask & bits) == 0
        if end is not None and mask | (1 << end) != full:
            free[end] = False
        js = np.nonzero(free)[0]
        if js.size == 0:
            continue
        cand = row[:, None] + D[:, js]
        best_i = np.argmin(cand, axis=0)
        best = cand[best_i, np.arange(js.size)]
        for j, c, i in zip(js, best, best_i):
            nm = mask | (1 << int(j))
            if c < dp[nm, j]:
                dp[nm, j] = c
                parent[nm, j] = i
    last = end if end is not None else int(np.argmin(dp[full]))
    order = [last]
    mask = full
    while True:
        p = int(parent[mask, order[-1]])
        if p < 0:
            break
        mask ^= 1 << order[-1]
        order.append(p)
    return order[::-1]


def nearest_neighbor_path(D: np.ndarray, start: int = 0, end: int | None = None) -> list:
    n = D.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    if end is not None:
        visited[end] = True
    order = [start]
    for _ in range(n - 1 - (end is not None and end != start)):
        d = np.where(visited, np.inf, D[order[-1]])
        nxt = int(np.argmin(d))
        order.append(nxt)
        visited[nxt] = True
    if end is not None and end != start:
        order.append(end)
    return order


def two_opt(D: np.ndarray, order, fix_start: bool = False, fix_end: bool = False,
            max_passes: int = 1000) -> list:
    """Segment reversals until no reversal shortens the open path."""
    order = np.array(order, dtype=np.int64)
    n = order.size
    if n < 3:
        return order.tolist()
    lo = 1 if fix_start else 0
    hi = n - 2 if fix_end else n - 1
    for _ in range(max_passes):
        improved = False
        for i in range(lo, hi):
            # reverse order[i..j] for j in (i, hi]
            js = np.arange(i + 1, hi + 1)
            a = order[i - 1] if i > 0 else -1
            left_old = D[a, order[i]] if a >= 0 else 0.0
            left_new = D[a, order[js]] if a >= 0 else np.zeros(js.size)
            has_right = js + 1 < n
            right_idx = order[np.minimum(js + 1, n - 1)]
            right_old = np.where(has_right, D[order[js], right_idx], 0.0)
            right_new = np.where(has_right, D[order[i], right_idx], 0.0)
            delta = left_new + right_new - left_old - right_old
            k = int(np.argmin(delta))
            if delta[k] < -1e-12:
                j = js[k]
                order[i:j + 1] = order[i:j + 1][::-1].copy()
                improved = True
        if not improved:
            break
    return order.tolist()


def solve_path(D: np.ndarray, start: int | None = None, end: int | None = None,
               init=None, exact_max: int = EXACT_MAX) -> list:
    """Short Hamiltonian path through all nodes of ``D``.

    Exact for ``n <= exact_max``; otherwise the better of 2-opt runs started
    from a nearest-neighbour tour and from ``init`` (identity by default),
    so the result is never longer than ``init``.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if n <= 2:
        order = list(range(n))
        if n == 2 and (start == 1 or end == 0):
            order = [1, 0]
        return order
    if n <= exact_max:
        return held_karp_path(D, start, end)
    init = list(range(n)) if init is None else list(init)
    if start is not None or end is not None:
        rest = [i for i in init if i not in (start, end)]
        init = ([start] if start is not None else []) + rest + ([end] if end is not None else [])
    candidates = [init]
    if start is not None:
        candidates.append(nearest_neighbor_path(D, start, end))
    elif end is not None:
        candidates.append(nearest_neighbor_path(D, end)[::-1])
    else:
        # start from the node farthest from everything else
        candidates.append(nearest_neighbor_path(D, int(np.argmax(D.sum(axis=1)))))
    best, best_len = None, np.inf
    for cand in candidates:
        out = two_opt(D, cand, fix_start=start is not None, fix_end=end is not None)
        L = path_length(D, out)
        if L < best_len - 1e-12:
            best, best_len = out, L
    return best
