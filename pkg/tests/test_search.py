import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from bridgegraph.graph import AugmentedGraph, BridgeGraph, NeighborhoodGraph, build_index, build_ngraph
from bridgegraph.quantizer import ProductQuantizer, SubspaceLayout
from bridgegraph.search import (
    BRIDGE,
    REFERENCE,
    ResultSet,
    SearchParams,
    SearchState,
    accuracy,
    search_augmented,
    search_exact,
    search_plain,
)
from bridgegraph.vecstore import Dataset, DistanceCounter, brute_force_knn

from conftest import random_dataset


def toy_graph() -> AugmentedGraph:
    """Six references in the plane, four bridges at the corners (0|10)^2.

    Each bridge lists one reference; the R=1 adjacency is a -> b -> f -> b
    with c, d, e also pointing at f.
    """
    pts = np.array([[1, 1], [2, 2], [9, 1], [1, 9], [9, 9], [5, 5]], dtype=np.float32)
    pq = ProductQuantizer(SubspaceLayout((1, 1)), [np.array([[0.0], [10.0]])] * 2)
    adj = np.array([[1], [5], [5], [5], [5], [1]], dtype=np.int32)
    dists = np.array([[((pts[i] - pts[j]) ** 2).sum()] for i, (j,) in enumerate(adj)], dtype=np.float32)
    # bridge ids: (0,0)=0 (0,10)=1 (10,0)=2 (10,10)=3
    bg = BridgeGraph(np.arange(4), np.arange(5), np.array([0, 3, 2, 4], dtype=np.int32), np.zeros(4, np.float32))
    return AugmentedGraph(pq, NeighborhoodGraph(adj, dists), bg, dict(m=2, n=2, R=1, t=1, b=1, seed=0), Dataset(pts))


class Recorder:
    """Checks the per-iteration invariants and keeps queue snapshots."""

    def __init__(self):
        self.pops, self.snapshots = [], []

    def __call__(self, phase, state: SearchState, entry):
        q = state.queue
        if phase == "pop":
            # the popped entry was minimal: nothing left is smaller
            assert not q or entry <= min(q)
            self.pops.append(entry)
        else:
            bridges = sum(1 for e in q if e[1] == BRIDGE)
            assert bridges == state.bridges_in_queue <= 1
            if not state.stream_exhausted and state.stream is not None:
                assert bridges == 1
            assert len(q) <= state.t + 1
            assert len(state.discovered) == len(set(state.discovered)) == state.t
            self.snapshots.append(sorted(q))


class TestTrace:
    def test_toy_trace(self):
        g = toy_graph()
        rec, st = Recorder(), SearchState()
        res = search_augmented(g, [0.0, 0.4], SearchParams(k=1, T=100), trace=rec, state=st)
        d = lambda i: float(((g.data.data[i] - np.array([0.0, 0.4])) ** 2).sum())
        a, b, c, dd, e, f = range(6)
        key = lambda *ks: sum(ks)
        # bridge keys: rows [0, 100] and [0.16, 92.16]
        B1, B2, B3 = (BRIDGE, 1), (BRIDGE, 2), (BRIDGE, 3)
        expected = [
            # pop bridge (0,0): its list brings in a, then the next bridge enters
            [(d(a), REFERENCE, a), (key(0, 92.16), *B1)],
            # pop a: its neighbour b enters
            [(d(b), REFERENCE, b), (key(0, 92.16), *B1)],
            # pop b: f enters
            [(d(f), REFERENCE, f), (key(0, 92.16), *B1)],
            # pop f: its only neighbour b is already discovered
            [(key(0, 92.16), *B1)],
            # pop bridge (0,10): d enters, then bridge (10,0)
            [(d(dd), REFERENCE, dd), (key(100, 0.16), *B2)],
        ]
        for got, want in zip(rec.snapshots[:5], expected, strict=True):
            assert [e[1:] for e in got] == [e[1:] for e in want]
            assert [e[0] for e in got] == pytest.approx([e[0] for e in want])
        assert [p[1:] for p in rec.pops[:5]] == [(BRIDGE, 0), (REFERENCE, a), (REFERENCE, b), (REFERENCE, f), B1]
        assert res == [(a, pytest.approx(d(a)))]
        # every reference is reachable; the search stops once all six are found,
        # which happens when the last bridge (10,10) hands over e
        assert sorted(st.discovered) == list(range(6))
        assert st.discovered[-1] == e
        assert rec.pops[-1][1:] == B3

    def test_equal_keys_pop_bridge_first(self):
        # reference a sits exactly on bridge (0,0); after a is discovered via
        # bridge 0, ties between a reference and a bridge go to the bridge
        g = toy_graph()
        pts = g.data.data.copy()
        pts[3] = [0.0, 10.0]  # d coincides with bridge (0,10)
        g = AugmentedGraph(g.pq, g.ngraph, g.bgraph, g.params, Dataset(pts))
        rec = Recorder()
        search_augmented(g, [0.0, 10.0], SearchParams(k=1, T=100), trace=rec)
        # bridge (0,10) has key 0 and is popped first, d joins with key 0
        assert rec.pops[0][1:] == (BRIDGE, 1)
        assert rec.pops[1] == (0.0, REFERENCE, 3)


def reachable(g: AugmentedGraph) -> set:
    """References reachable from any bridge list through adjacency."""
    reach = set(g.bgraph.ref_ids.tolist())
    todo = deque(reach)
    while todo:
        for j in g.ngraph.ids[todo.popleft()].tolist():
            if j not in reach:
                reach.add(j)
                todo.append(j)
    return reach


def connected_instance():
    """500-step random walk in R^8: consecutive points are mutual near
    neighbours, so the R-NN graph contains the chain in both directions."""
    rng = np.random.default_rng(21)
    steps = rng.normal(size=(500, 8))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    ds = Dataset(np.cumsum(steps, axis=0).astype(np.float32))
    g = build_index(ds, m=2, n=8, R=10, t=16, b=4, seed=1)
    assert len(reachable(g)) == ds.count
    return ds, g


@pytest.fixture(scope="module")
def connected():
    return connected_instance()


class TestExactLimits:
    def test_T_equals_N_is_exact(self, connected):
        ds, g = connected
        rng = np.random.default_rng(0)
        for q in ds.data[rng.choice(ds.count, 50)] + rng.normal(size=(50, 8)):
            assert search_augmented(g, q, SearchParams(k=10, T=ds.count)) == brute_force_knn(ds, q, 10)

    def test_plain_exact_when_seeded_everywhere_reachable(self, connected):
        ds, g = connected
        q = ds.data[123] + np.random.default_rng(1).normal(size=8)
        seeds = g.bgraph.ref_ids
        assert search_plain(g.ngraph, ds, q, seeds, SearchParams(k=5, T=ds.count)) == brute_force_knn(ds, q, 5)

    def test_self_queries_10k(self, sift10k):
        base, _, g = sift10k
        ids = np.random.default_rng(2).choice(base.count, 200, replace=False)
        hits = sum(search_augmented(g, base.data[i], SearchParams(k=1, T=base.count // 10))[0] == (i, 0.0) for i in ids)
        assert hits >= 0.95 * len(ids)


class TestInvariants:
    def test_counters_and_queue_bounds(self, sift10k):
        base, queries, g = sift10k
        for q in queries.data[:40]:
            for T in (50, 300):
                c = DistanceCounter()
                st = SearchState()
                rec = Recorder()
                search_augmented(g, q, SearchParams(k=10, T=T), counter=c, trace=rec, state=st)
                assert c.full_dist_evals == st.t == len(st.discovered)
                assert c.sub_dist_evals == g.pq.m * g.pq.n
                # the loop stops right after t first exceeds T
                assert st.t <= T + g.ngraph.degree + g.params["b"]

    def test_accuracy_monotone_in_T(self, sift10k):
        base, queries, g = sift10k
        for q in queries.data[:30]:
            truth = [i for i, _ in brute_force_knn(base, q, 10)]
            accs = [accuracy(search_augmented(g, q, SearchParams(10, T)), truth, 10) for T in (10, 50, 200, 1000)]
            assert accs == sorted(accs)

    def test_heap_ops_t_log_t(self):
        # bridge count comparable to N keeps empty-bridge pops rare
        from bridgegraph.datasets import sift_like

        base, queries = sift_like(5000, 40, seed=3)
        g = build_index(base, m=2, n=70, R=20, t=100, b=5)
        for q in queries.data:
            for T in (100, 1000):
                c = DistanceCounter()
                search_augmented(g, q, SearchParams(1, T), counter=c)
                assert c.heap_ops <= 8 * T * math.log(T)

    def test_threads_share_index(self, sift10k):
        base, queries, g = sift10k
        run = lambda q: search_augmented(g, q, SearchParams(10, 200))
        serial = [run(q) for q in queries.data[:40]]
        with ThreadPoolExecutor(4) as pool:
            assert list(pool.map(run, queries.data[:40])) == serial


class TestPlain:
    def test_seed_is_true_nn(self):
        ds = random_dataset(300, 5, seed=4)
        g = build_ngraph(ds, 6)
        q = np.random.default_rng(5).normal(size=5)
        nn = brute_force_knn(ds, q, 1)[0]
        assert search_plain(g, ds, q, [nn[0]], SearchParams(1, 1))[0] == nn

    def test_unreachable_component_never_returned(self):
        rng = np.random.default_rng(6)
        pts = np.r_[rng.normal(size=(50, 3)), rng.normal(size=(50, 3)) + 1000].astype(np.float32)
        ds = Dataset(pts)
        g = build_ngraph(ds, 5)
        res = search_plain(g, ds, pts[75], [0, 1, 2], SearchParams(k=10, T=100))
        assert all(i < 50 for i, _ in res)

    def test_seeds_counted_and_deduplicated(self):
        ds = random_dataset(100, 4, seed=7)
        g = build_ngraph(ds, 3)
        st, c = SearchState(), DistanceCounter()
        search_plain(g, ds, np.zeros(4), [5, 5, 9], SearchParams(3, 2), counter=c, state=st)
        assert st.discovered[:2] == [5, 9]
        assert c.full_dist_evals == st.t

    def test_bad_seeds(self):
        ds = random_dataset(10, 2)
        g = build_ngraph(ds, 2)
        with pytest.raises(ValueError):
            search_plain(g, ds, [0, 0], [], SearchParams())
        with pytest.raises(ValueError):
            search_plain(g, ds, [0, 0], [10], SearchParams())


class TestMisc:
    def test_accuracy_definition(self):
        truth = list(range(10))
        assert accuracy(truth, truth, 10) == 1.0
        assert accuracy(list(range(10, 20)), truth, 10) == 0.0
        assert accuracy([0, 1, 2, 3, 4, 5, 6, 97, 98, 99], truth, 10) == pytest.approx(0.7)
        assert accuracy([(3, 0.5), (1, 0.7)], [1, 3], 2) == 1.0
        with pytest.raises(ValueError):
            accuracy([1], [1], 2)

    def test_result_set_keeps_k_best(self):
        rs = ResultSet(3)
        for d, i in [(5.0, 1), (1.0, 2), (3.0, 3), (1.0, 0), (9.0, 4)]:
            rs.offer(d, i)
        assert rs.sorted() == [(0, 1.0), (2, 1.0), (3, 3.0)]

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SearchParams(k=0)
        with pytest.raises(ValueError):
            SearchParams(T=0)

    def test_errors(self):
        g = toy_graph()
        with pytest.raises(ValueError, match="dimension"):
            search_augmented(g, [0.0, 0.0, 0.0], SearchParams())
        bare = AugmentedGraph(g.pq, g.ngraph, g.bgraph, g.params)
        with pytest.raises(ValueError):
            search_augmented(bare, [0.0, 0.0], SearchParams())

    def test_exact_engine(self):
        ds = random_dataset(50, 3, seed=8)
        q = np.ones(3)
        assert search_exact(ds, q, SearchParams(k=4)) == brute_force_knn(ds, q, 4)
