"""Lazy enumeration of bridge vectors in increasing distance to a query.

Works on the sorted rows of a :class:`DistanceTables`. A position tuple
(p_1, ..., p_m) (0-based ranks into the sorted rows) has key
``sorted_rows[0][p_1] + ... + sorted_rows[m-1][p_m]`` summed left to right.
Tuples are emitted by a min-heap ordered on (key, positions); position tuples
are packed row-major, which orders them lexicographically, so equal keys
resolve to the lexicographically smaller tuple.

A successor ``p + e_i`` is pushed when the popped tuple is one of its
predecessors and every other predecessor ``p + e_i - e_j`` has already been
pushed.
"""

from __future__ import annotations

import heapq
from typing import Iterator, Optional

import numpy as np

from .quantizer import DistanceTables
from .vecstore import DistanceCounter


class MultiSeqState:
    """Single-query enumeration state. Not thread-safe; one per query."""

    __slots__ = (
        "m", "n", "rows", "perms", "heap", "seen", "t", "counter",
        "last_positions", "_pow",
    )

    def __init__(self, sorted_rows, perms, counter: Optional[DistanceCounter] = None):
        self.rows = np.asarray(sorted_rows, dtype=np.float64).tolist()
        self.perms = np.asarray(perms, dtype=np.int64).tolist()
        self.m = len(self.rows)
        if self.m == 0:
            raise ValueError("no rows")
        self.n = len(self.rows[0])
        if self.n == 0 or any(len(r) != self.n for r in self.rows):
            raise ValueError("rows must be non-empty and of equal length")
        self._pow = [self.n ** (self.m - 1 - i) for i in range(self.m)]
        self.counter = counter
        key = 0.0
        for r in self.rows:
            key += r[0]
        # entries are (key, packed positions, positions); packed ids are
        # unique, so the tuple never takes part in comparisons
        self.heap = [(key, 0, (0,) * self.m)]
        self.seen = {0}
        self.t = 0
        self.last_positions: Optional[tuple[int, ...]] = None
        if counter is not None:
            counter.heap_ops += 1

    def positions(self, pid: int) -> tuple[int, ...]:
        out = []
        for p in self._pow:
            q, pid = divmod(pid, p)
            out.append(q)
        return tuple(out)

    def __len__(self) -> int:
        return len(self.heap)


def ms_init(tables: DistanceTables, counter: Optional[DistanceCounter] = None) -> MultiSeqState:
    if tables.n == 0:
        raise ValueError("empty distance row")
    return MultiSeqState(tables.sorted_rows, tables.perms, counter)


def ms_next(state: MultiSeqState) -> Optional[tuple[int, float]]:
    """Next (bridge id, squared distance), or None once all n**m are emitted."""
    heap = state.heap
    if not heap:
        return None
    key, pid, pos = heapq.heappop(heap)
    ops = 1
    rows, seen, pw, n, m = state.rows, state.seen, state._pow, state.n, state.m
    for i in range(m):
        if pos[i] + 1 >= n:
            continue
        succ = pid + pw[i]
        if succ in seen:
            continue
        ready = True
        for j in range(m):
            # predecessor succ - e_j exists when coordinate j of succ is > 0
            if j != i and pos[j] > 0 and (succ - pw[j]) not in seen:
                ready = False
                break
        if not ready:
            continue
        nxt = pos[:i] + (pos[i] + 1,) + pos[i + 1 :]
        s = 0.0
        for j in range(m):
            s += rows[j][nxt[j]]
        seen.add(succ)
        heapq.heappush(heap, (s, succ, nxt))
        ops += 1
    if state.counter is not None:
        state.counter.heap_ops += ops
    state.t += 1
    state.last_positions = pos
    bridge = 0
    perms = state.perms
    for j in range(m):
        bridge = bridge * n + perms[j][pos[j]]
    return bridge, key


def iter_bridges(tables: DistanceTables, limit: Optional[int] = None,
                 counter: Optional[DistanceCounter] = None) -> Iterator[tuple[int, float]]:
    state = ms_init(tables, counter)
    emitted = 0
    while limit is None or emitted < limit:
        hit = ms_next(state)
        if hit is None:
            return
        yield hit
        emitted += 1


def nearest_bridges(sorted_rows: np.ndarray, perms: np.ndarray, t: int) -> tuple[list[int], list[float]]:
    """First ``t`` multi-sequence hits for one query given presorted rows."""
    state = MultiSeqState(sorted_rows, perms)
    ids, keys = [], []
    for _ in range(t):
        hit = ms_next(state)
        if hit is None:
            break
        ids.append(hit[0])
        keys.append(hit[1])
    return ids, keys
