"""Best-first search over the augmented graph and over the plain R-NN graph.

Both engines share one loop. The main queue is a min-heap of
``(key, kind, id)`` with ``kind`` 0 for a bridge vector and 1 for a
reference vector, so equal keys pop the bridge first and then the smaller
id. A reference vector is distance-evaluated, marked, pushed and offered to
the result set exactly once, when first discovered. The loop runs while the
queue is non-empty and the discovered count ``t`` is at most ``T``; it also
stops once every reference has been discovered, since nothing can change
after that.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import AugmentedGraph, NeighborhoodGraph
from .multiseq import MultiSeqState, ms_init, ms_next
from .quantizer import build_tables
from .vecstore import Dataset, DistanceCounter, brute_force_knn, sq_dists

BRIDGE = 0
REFERENCE = 1


@dataclass(frozen=True)
class SearchParams:
    k: int = 1
    T: int = 1000

    def __post_init__(self):
        if self.k < 1 or self.T < 1:
            raise ValueError("k and T must be at least 1")


class VisitedMarks:
    """Per-thread epoch-stamped visited array; one O(N) allocation per thread."""

    def __init__(self, size: int):
        self.size = size
        self._local = threading.local()

    def next_epoch(self) -> tuple[np.ndarray, int]:
        loc = self._local
        if not hasattr(loc, "marks"):
            loc.marks = np.zeros(self.size, dtype=np.int64)
            loc.epoch = 0
        loc.epoch += 1
        return loc.marks, loc.epoch


class ResultSet:
    """Bounded max-heap keeping the k best (dist, id) pairs."""

    __slots__ = ("k", "heap")

    def __init__(self, k: int):
        self.k = k
        self.heap: list[tuple[float, int]] = []

    def offer(self, dist: float, idx: int) -> None:
        item = (-dist, -idx)
        if len(self.heap) < self.k:
            heapq.heappush(self.heap, item)
        elif item > self.heap[0]:
            heapq.heapreplace(self.heap, item)

    def sorted(self) -> list[tuple[int, float]]:
        return sorted(((-i, -d) for d, i in self.heap), key=lambda p: (p[1], p[0]))


@dataclass
class SearchState:
    queue: list = field(default_factory=list)
    result: Optional[ResultSet] = None
    t: int = 0
    stream: Optional[MultiSeqState] = None
    counter: DistanceCounter = field(default_factory=DistanceCounter)
    # ids in discovery order; kept for invariant checks
    discovered: list = field(default_factory=list)
    bridges_in_queue: int = 0
    stream_exhausted: bool = False


# called as trace(phase, state, entry) with phase "pop" (after the pop,
# before expansion) or "expand" (after expansion and any bridge refill)
Trace = Callable[[str, SearchState, tuple], None]


def _marks_for(owner, size: int) -> VisitedMarks:
    marks = getattr(owner, "_marks", None)
    if marks is None or marks.size != size:
        marks = VisitedMarks(size)
        owner._marks = marks
    return marks


def _discover(state: SearchState, X: np.ndarray, q: np.ndarray, cand: np.ndarray,
              marks: np.ndarray, epoch: int) -> None:
    fresh = cand[marks[cand] != epoch]
    if len(fresh) == 0:
        return
    marks[fresh] = epoch
    dists = sq_dists(X[fresh], q, state.counter)
    queue, result, disc = state.queue, state.result, state.discovered
    push = heapq.heappush
    for i, d in zip(fresh.tolist(), dists.tolist()):
        push(queue, (d, REFERENCE, i))
        result.offer(d, i)
        disc.append(i)
    state.t += len(fresh)
    state.counter.heap_ops += len(fresh)


def _push_next_bridge(state: SearchState) -> None:
    hit = ms_next(state.stream)
    if hit is None:
        state.stream_exhausted = True
        return
    heapq.heappush(state.queue, (hit[1], BRIDGE, hit[0]))
    state.bridges_in_queue += 1
    state.counter.heap_ops += 1


def _run(state: SearchState, X, q, adjacency: np.ndarray, bgraph, T: int,
         marks: np.ndarray, epoch: int, trace: Optional[Trace]) -> None:
    queue = state.queue
    # once every reference is discovered no later pop can change the result
    N = len(adjacency)
    while queue and state.t <= T and state.t < N:
        entry = heapq.heappop(queue)
        state.counter.heap_ops += 1
        if entry[1] == BRIDGE:
            state.bridges_in_queue -= 1
        if trace is not None:
            trace("pop", state, entry)
        if entry[1] == REFERENCE:
            _discover(state, X, q, adjacency[entry[2]], marks, epoch)
        else:
            j = bgraph.slot(entry[2])
            if j is not None:
                _discover(state, X, q, bgraph.ref_ids[bgraph.offsets[j] : bgraph.offsets[j + 1]], marks, epoch)
            _push_next_bridge(state)
        if trace is not None:
            trace("expand", state, entry)


def _as_query(q, d: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != d:
        raise ValueError(f"dimension mismatch: query has shape {q.shape}, index dimension is {d}")
    return q


def search_augmented(
    g: AugmentedGraph,
    q,
    params: SearchParams,
    counter: Optional[DistanceCounter] = None,
    trace: Optional[Trace] = None,
    state: Optional[SearchState] = None,
) -> list[tuple[int, float]]:
    """k approximate nearest neighbours of ``q`` as ascending (id, sq_dist).

    Bridge vectors are pulled from the multi-sequence stream one at a time:
    the next one is extracted only when the current one is popped, so the
    queue holds at most one bridge entry.
    """
    if g.data is None:
        raise ValueError("index has no reference vectors attached")
    if g.count == 0:
        raise ValueError("empty index")
    q = _as_query(q, g.pq.d)
    state = state if state is not None else SearchState()
    if counter is not None:
        state.counter = counter
    state.result = ResultSet(params.k)
    marks, epoch = _marks_for(g, g.count).next_epoch()
    state.stream = ms_init(build_tables(g.pq, q, state.counter), state.counter)
    _push_next_bridge(state)
    _run(state, g.data.data, q, g.ngraph.ids, g.bgraph, params.T, marks, epoch, trace)
    return state.result.sorted()


def search_plain(
    g: NeighborhoodGraph,
    dataset: Dataset,
    q,
    seeds,
    params: SearchParams,
    counter: Optional[DistanceCounter] = None,
    trace: Optional[Trace] = None,
    state: Optional[SearchState] = None,
) -> list[tuple[int, float]]:
    """Best-first search from the given seed ids over the R-NN graph only."""
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("at least one seed is required")
    if seeds[0] < 0 or seeds[-1] >= len(g):
        raise ValueError("seed id out of range")
    if dataset.count != len(g):
        raise ValueError("dataset and graph sizes differ")
    q = _as_query(q, dataset.dim)
    state = state if state is not None else SearchState()
    if counter is not None:
        state.counter = counter
    state.result = ResultSet(params.k)
    state.stream_exhausted = True
    marks, epoch = _marks_for(g, len(g)).next_epoch()
    _discover(state, dataset.data, q, seeds, marks, epoch)
    _run(state, dataset.data, q, g.ids, None, params.T, marks, epoch, trace)
    return state.result.sorted()


def search_exact(dataset: Dataset, q, params: SearchParams,
                 counter: Optional[DistanceCounter] = None) -> list[tuple[int, float]]:
    return brute_force_knn(dataset, q, params.k, counter)


def accuracy(result, truth, k: int) -> float:
    """Fraction of the true k nearest ids found among the first k results."""
    if len(truth) < k:
        raise ValueError(f"ground truth has {len(truth)} ids, need {k}")
    got = {int(r[0]) if isinstance(r, tuple) else int(r) for r in list(result)[:k]}
    return len(got & {int(x) for x in list(truth)[:k]}) / k
