"""Optimal linear assignment for association cost matrices.

The solver is the shortest-augmenting-path form of the Hungarian method with
dual potentials. Among all optimal matchings it returns the one whose row ->
column assignment is lexicographically smallest, so equal-cost ties resolve
the same way every run.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Assignment:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    def total_cost(self, cost) -> float:
        cost = np.asarray(cost, dtype=np.float64)
        return float(sum(cost[r, c] for r, c in self.matches))


def _hungarian(a):
    """Min-cost assignment of every row of ``a`` (n <= m). Returns (col_of_row, u, v)."""
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # 1-based row owning column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    padded = np.zeros((n + 1, m + 1))
    padded[1:, 1:] = a
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lexicographic(a, col_of_row, u, v, tol):
    """Rotate an optimal matching into the lexicographically smallest optimal one.

    Works on the equality subgraph of the optimal duals; unmatched columns are
    held by interchangeable zero-cost dummy rows, which may sit on any column
    whose potential is zero.
    """
    n, m = a.shape
    reduced = a - u[:, None] - v[None, :]
    tight = reduced <= tol
    dummy_ok = np.abs(v) <= tol
    owner = np.full(m, -1, dtype=np.int64)  # -1 = dummy
    owner[col_of_row] = np.arange(n)
    fixed_col = np.zeros(m, dtype=bool)

    for i in range(n):
        current = col_of_row[i]
        for j in np.flatnonzero(tight[i, :current]):
            if fixed_col[j]:
                continue
            # can the holder of j move elsewhere so that `current` is released?
            parent = {j: -2}
            queue = deque([j])
            found = False
            while queue and not found:
                c = queue.popleft()
                o = owner[c]
                reach = dummy_ok if o < 0 else tight[o]
                for nxt in np.flatnonzero(reach):
                    if nxt in parent or fixed_col[nxt]:
                        continue
                    parent[nxt] = c
                    if nxt == current:
                        found = True
                        break
                    queue.append(nxt)
            if not found:
                continue
            path = [current]
            while parent[path[-1]] != -2:
                path.append(parent[path[-1]])
            path.reverse()  # j ... current
            old = [owner[c] for c in path]
            for k in range(len(path) - 1):
                owner[path[k + 1]] = old[k]
                if old[k] >= 0:
                    col_of_row[old[k]] = path[k + 1]
            owner[j] = i
            col_of_row[i] = j
            break
        fixed_col[col_of_row[i]] = True
    return col_of_row


def solve(cost, gate: float | None = None) -> Assignment:
    """Minimum-cost matching between rows and columns of ``cost``.

    ``+inf`` entries are forbidden pairs. Rectangular inputs match
    ``min(rows, cols)`` pairs at most. Matched pairs whose cost exceeds
    ``gate`` are demoted to unmatched after solving.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if gate is not None and not math.isfinite(gate):
        raise ValueError("gate must be finite")
    n_rows, n_cols = cost.shape
    if np.any(np.isnan(cost)) or np.any(cost == -np.inf):
        raise ValueError("cost matrix entries must be numbers or +inf")

    allowed = np.isfinite(cost)
    rows = np.flatnonzero(allowed.any(axis=1))
    cols = np.flatnonzero(allowed.any(axis=0))
    matches: list[tuple[int, int]] = []
    if len(rows) and len(cols):
        sub = cost[np.ix_(rows, cols)]
        finite = sub[np.isfinite(sub)]
        low = float(finite.min())
        span = float(finite.max() - low)
        # shift to >= 0 (argmin invariant); forbidden pairs get a cost no
        # feasible matching of finite pairs can reach
        work = sub - low
        big = (span + 1.0) * (min(sub.shape) + 1)
        work[~np.isfinite(sub)] = big
        n_sub, m_sub = work.shape
        if n_sub > m_sub:
            # surplus rows land on zero-cost dummy columns ranked after real ones
            work = np.hstack([work, np.zeros((n_sub, n_sub - m_sub))])
        col_of_row, u, v = _hungarian(work)
        tol = 1e-9 * max(1.0, big)
        col_of_row = _lexicographic(work, col_of_row, u, v, tol)
        for r, c in enumerate(col_of_row):
            if c >= m_sub:
                continue
            rr, cc = int(rows[r]), int(cols[c])
            if allowed[rr, cc]:
                matches.append((rr, cc))

    if gate is not None:
        matches = [(r, c) for r, c in matches if cost[r, c] <= gate]
    matches.sort()
    mr = {r for r, _ in matches}
    mc = {c for _, c in matches}
    return Assignment(
        matches=matches,
        unmatched_rows=[r for r in range(n_rows) if r not in mr],
        unmatched_cols=[c for c in range(n_cols) if c not in mc],
    )
