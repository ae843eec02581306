"""Square linear assignment with an O(m^3) Hungarian solver.

The solver keeps the dual potentials so callers can recover *every* optimal
assignment: an edge can appear in an optimal solution only if its reduced
cost is zero. ``max_weight_assignment`` uses that to return the
lexicographically smallest optimal permutation, which is what makes
tie-breaking deterministic.
"""

from __future__ import annotations

import numpy as np

_INF = float("inf")


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-cost perfect matching on a square cost matrix.

    Returns:
        (perm, u, v): ``perm[i]`` is the column assigned to row ``i``; ``u``
        and ``v`` are optimal dual potentials with ``cost[i, j] - u[i] - v[j]
        >= 0`` and equality on the matched edges.
    """
    a = np.asarray(cost, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix must be finite")
    # 1-indexed potentials; index 0 is the virtual column of the e-maxx scheme
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, _INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], _INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm, u[1:].copy(), v[1:].copy()


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols: set[int]) -> bool:
    match: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for c in adj[r]:
            if c in cols and c not in seen:
                seen.add(c)
                if c not in match or augment(match[c], seen):
                    match[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def max_weight_assignment(weights: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Maximum-weight permutation, ties broken toward the lexicographically
    smallest permutation (equivalently the smallest Lehmer code)."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    cost = -w
    perm, u, v = hungarian(cost)
    scale = 1.0 + float(np.max(np.abs(w))) if w.size else 1.0
    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= tol * scale
    adj = [sorted(np.flatnonzero(tight[i]).tolist()) for i in range(n)]
    if all(len(row) == 1 for row in adj):
        return perm
    # lexicographically smallest perfect matching inside the tight subgraph
    out = np.empty(n, dtype=int)
    free_cols = set(range(n))
    for i in range(n):
        rest = list(range(i + 1, n))
        for c in adj[i]:
            if c not in free_cols:
                continue
            trial = free_cols - {c}
            if _has_perfect_matching(adj, rest, trial):
                out[i] = c
                free_cols = trial
                break
        else:  # pragma: no cover - tight graph always contains perm
            return perm
    return out
