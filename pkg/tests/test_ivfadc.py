import numpy as np
import pytest

from bridgegraph.datasets import sift_like
from bridgegraph.graph import IndexFormatError
from bridgegraph.ivfadc import (
    RerankParams,
    adc_candidates,
    assign_to_centers,
    build_ivf,
    load_ivf,
    probe_lists,
    recall_at,
    save_ivf,
    search_ivf,
)
from bridgegraph.vecstore import brute_force_knn, sq_dists

from conftest import random_dataset


@pytest.fixture(scope="module")
def small():
    base, queries = sift_like(2000, 40, seed=5)
    return base, queries, build_ivf(base, K=64, residual_m=8, residual_n=32, seed=1)


def nearest_center(C: np.ndarray, x) -> int:
    d = sq_dists(C, x)
    return int(np.lexsort((np.arange(len(d)), d))[0])


class TestBuild:
    def test_partition_property(self, small):
        base, _, ix = small
        allids = np.concatenate(ix.list_ids)
        assert sorted(allids.tolist()) == list(range(base.count))
        assert ix.count == base.count

    def test_assignment_matches_brute_force(self, small):
        base, _, ix = small
        lab = ix.assignment()
        C = ix.centers.data
        agree = np.mean([lab[i] == nearest_center(C, base.data[i]) for i in range(base.count)])
        assert agree >= 0.99
        assert ix.stats["fallback_rate"] == ix.fallbacks / base.count

    def test_residual_codes(self, small):
        base, _, ix = small
        lab = ix.assignment()
        pq = ix.residual_pq
        for c in (0, 7, 33):
            ids = ix.list_ids[c]
            resid = base.data[ids].astype(np.float64) - ix.centers.data[c]
            np.testing.assert_array_equal(ix.list_codes[c], pq.encode_batch(resid))
            assert np.all(lab[ids] == c)
        assert ix.code_bytes == 8

    def test_K_equals_N(self):
        ds = random_dataset(40, 6, seed=2)
        ix = build_ivf(ds, K=40, residual_m=2, residual_n=4, seed=0)
        assert [ids.tolist() for ids in ix.list_ids] == [[i] for i in range(40)]
        np.testing.assert_array_equal(ix.centers.data, ds.data)
        # centers equal the data, so every residual is zero
        for codes in ix.list_codes:
            assert np.all(ix.residual_pq.decode_batch(codes) == 0.0)
        assert ix.fallbacks == 0

    def test_graph_answer_without_certificate(self, small):
        base, _, ix = small
        lab, fb, hits = assign_to_centers(ix.center_graph, base.data[:200], 64)
        np.testing.assert_array_equal(lab, ix.assignment()[:200])
        assert 0 <= hits <= 200 and 0 <= fb <= 200

    def test_bad_K(self):
        ds = random_dataset(10, 4)
        with pytest.raises(ValueError):
            build_ivf(ds, K=11)
        with pytest.raises(ValueError):
            build_ivf(ds, K=1)

    def test_deterministic(self, small, tmp_path):
        base, _, ix = small
        save_ivf(ix, tmp_path / "a.annv")
        save_ivf(build_ivf(base, K=64, residual_m=8, residual_n=32, seed=1), tmp_path / "b.annv")
        assert (tmp_path / "a.annv").read_bytes() == (tmp_path / "b.annv").read_bytes()


class TestSearch:
    def test_exhaustive_limit_is_exact(self, small):
        base, queries, ix = small
        rr = RerankParams(probes=ix.K, list_len=None)
        for q in queries.data:
            assert search_ivf(ix, q, rr, 10) == [i for i, _ in brute_force_knn(base, q, 10)]

    def test_stored_vector_ranks_first(self, small):
        base, _, ix = small
        for i in (3, 500, 1999):
            c = int(ix.assignment()[i])
            res = search_ivf(ix, base.data[i], RerankParams(probes=ix.K), 5)
            assert res[0] == brute_force_knn(base, base.data[i], 1)[0][0]
            assert c in probe_lists(ix, base.data[i], RerankParams(probes=ix.K))

    def test_adc_matches_decoded_residuals(self, small):
        base, queries, ix = small
        q = queries.data[0].astype(np.float64)
        ids, adc = adc_candidates(ix, q, [5, 9])
        lab = ix.assignment()
        for i, a in zip(ids[:30], adc[:30]):
            c = lab[i]
            k = int(np.flatnonzero(ix.list_ids[c] == i)[0])
            approx = ix.centers.data[c].astype(np.float64) + ix.residual_pq.decode(ix.list_codes[c][k])
            assert a == pytest.approx(float(((q - approx) ** 2).sum()), rel=1e-5)

    def test_recall_monotone(self, small):
        base, queries, ix = small
        truth = [brute_force_knn(base, q, 1)[0][0] for q in queries.data]

        def mean_recall(probes, L, T):
            rr = RerankParams(probes=probes, list_len=L)
            return np.mean([recall_at(search_ivf(ix, q, rr, 100), t, T) for q, t in zip(queries.data, truth)])

        for probes in (1, 4, 16):
            rs = [mean_recall(probes, L, 100) for L in (10, 50, 200, 1000)]
            assert rs == sorted(rs)
        assert [mean_recall(p, 100, 10) for p in (1, 4, 16, 64)] == sorted(mean_recall(p, 100, 10) for p in (1, 4, 16, 64))
        ts = [mean_recall(4, 50, T) for T in (1, 10, 100)]
        assert ts == sorted(ts)

    def test_recall_at(self):
        assert recall_at([4, 2, 9], 4, 1) == 1
        assert recall_at([4, 2, 9], 9, 2) == 0
        assert recall_at([4, 2, 9], 9, 3) == 1
        results = [[1, 2], [3, 4], [5, 6]]
        truth = [2, 9, 5]
        assert np.mean([recall_at(r, t, 2) for r, t in zip(results, truth)]) == pytest.approx(2 / 3)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            RerankParams(probes=0)
        with pytest.raises(ValueError):
            RerankParams(list_len=0)


class TestFile:
    def test_round_trip(self, small, tmp_path):
        base, queries, ix = small
        p = tmp_path / "v.annv"
        save_ivf(ix, p)
        back = load_ivf(p, base)
        assert back == ix
        rr = RerankParams(probes=8, list_len=100)
        assert search_ivf(back, queries.data[0], rr, 10) == search_ivf(ix, queries.data[0], rr, 10)

    def test_corruption(self, small, tmp_path):
        _, _, ix = small
        p = tmp_path / "v.annv"
        save_ivf(ix, p)
        raw = p.read_bytes()
        p.write_bytes(b"ANNB" + raw[4:])
        with pytest.raises(IndexFormatError, match="bad magic"):
            load_ivf(p)
        p.write_bytes(raw[:-1])
        with pytest.raises(IndexFormatError):
            load_ivf(p)
