"""Inverted file with ADC re-ranking whose coarse lookup uses the augmented graph.

Build: k-means coarse centers, an :class:`AugmentedGraph` over the centers,
assignment of every vector to its nearest center by graph search (budget
``assign_budget``, exact fallback when the answer cannot be certified), and
one residual product quantizer shared by all lists.

Search: the ``probes`` nearest lists are found by graph search over the
centers; every candidate in them is scored by asymmetric distance on its
residual code (query residual ``q - center`` per list); the ``list_len``
best are re-ranked with exact distances and the top k returned.

ANNV layout (int32 LE, float32 LE)::

    magic "ANNV" | version | d | N | K | element kind | seed | assign_budget
    centers: K * d floats
    center graph: byte length | embedded ANNB image
    residual quantizer: m | dims[m] | n | element kind | seed | centers
    lists: per center: length | length ids | length * m codes
           (codes are uint8 when n <= 256, else uint16)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import graph, quantizer
from .graph import AugmentedGraph, IndexFormatError, _Reader, _i32
from .quantizer import ProductQuantizer
from .search import SearchParams, SearchState, search_augmented
from .vecstore import KIND_CODES, Dataset, sq_dists, top_k_ordered

MAGIC = b"ANNV"
VERSION = 1

# k-means centers are hub-heavy, so the center graph gets a wider degree and
# longer bridge lists than the reference-level defaults
DEFAULT_CENTER_GRAPH = dict(m=4, n=8, R=32, t=256, b=32)


@dataclass(frozen=True)
class RerankParams:
    probes: int = 16
    list_len: Optional[int] = None
    # graph-search visit budget for finding the probed lists
    visit_budget: Optional[int] = None

    def __post_init__(self):
        if self.probes < 1:
            raise ValueError("probes must be at least 1")
        if self.list_len is not None and self.list_len < 1:
            raise ValueError("list_len must be at least 1")

    def budget(self) -> int:
        return self.visit_budget if self.visit_budget is not None else max(64, 4 * self.probes)


@dataclass
class CoarseIndex:
    centers: Dataset
    center_graph: AugmentedGraph
    residual_pq: ProductQuantizer
    list_ids: list  # per center: int64 array of reference ids
    list_codes: list  # per center: (len, m) integer array of residual codes
    assign_budget: int = 64
    seed: int = 0
    base: Optional[Dataset] = None
    fallbacks: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.centers.count

    @property
    def count(self) -> int:
        return int(sum(len(x) for x in self.list_ids))

    @property
    def code_bytes(self) -> int:
        return self.residual_pq.m * (1 if self.residual_pq.n <= 256 else 2)

    def assignment(self) -> np.ndarray:
        out = np.empty(self.count, dtype=np.int64)
        for c, ids in enumerate(self.list_ids):
            out[ids] = c
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoarseIndex):
            return NotImplemented
        return (
            self.centers == other.centers
            and self.center_graph == other.center_graph
            and self.residual_pq == other.residual_pq
            and self.assign_budget == other.assign_budget
            and self.seed == other.seed
            and len(self.list_ids) == len(other.list_ids)
            and all(np.array_equal(a, b) for a, b in zip(self.list_ids, other.list_ids))
            and all(np.array_equal(a, b) for a, b in zip(self.list_codes, other.list_codes))
        )


def center_spacing(centers: np.ndarray) -> np.ndarray:
    """(K, K) Euclidean distances between centers (not squared)."""
    C = np.asarray(centers, dtype=np.float64)
    return np.sqrt(np.stack([sq_dists(C, c) for c in C]))


def assign_to_centers(center_graph: AugmentedGraph, X: np.ndarray, budget: int,
                      spacing: Optional[np.ndarray] = None) -> tuple[np.ndarray, int, int]:
    """Nearest center per row (ties to the smaller center id).

    Each row is first searched on the center graph with visit budget
    ``budget``. The answer c with squared distance D is certified when every
    center not discovered by the search lies farther than 2*sqrt(D) from c,
    since such a center is farther from x than c is. Otherwise the search
    missed: the uncertified centers are scored exactly and the row counts as
    a fallback. The result therefore always equals the brute-force
    assignment.

    Returns (labels, fallbacks, graph_hits) where ``graph_hits`` counts rows
    whose graph answer was already the nearest center.
    """
    C = center_graph.data.data
    K = len(C)
    if spacing is None:
        spacing = center_spacing(C)
    labels = np.empty(len(X), dtype=np.int64)
    fallbacks = hits = 0
    params = SearchParams(k=1, T=budget)
    seen = np.zeros(K, dtype=bool)
    for i, x in enumerate(X):
        x = np.asarray(x, dtype=np.float64)
        state = SearchState()
        res = search_augmented(center_graph, x, params, state=state)
        found = np.asarray(state.discovered, dtype=np.int64)
        if res:
            c, D = res[0]
            # relative slack covers rounding in the distances and square roots
            near = np.flatnonzero(spacing[c] <= 2.0 * np.sqrt(D) * (1 + 1e-7) + 1e-9)
        else:
            c, near = -1, np.arange(K)
        seen[found] = True
        extra = near[~seen[near]]
        seen[found] = False
        if len(extra) == 0:
            labels[i] = c
            hits += 1
            continue
        fallbacks += 1
        ids = np.concatenate([found, extra])
        best, _ = top_k_ordered(sq_dists(C[ids], x), ids, 1)
        labels[i] = best[0]
        hits += int(best[0] == c)
    return labels, fallbacks, hits


def build_ivf(
    dataset: Dataset,
    K: int = 1024,
    coarse_params: Optional[dict] = None,
    residual_m: int = 8,
    residual_n: int = 256,
    seed: int = 0,
    iters: int = 25,
    assign_budget: int = 64,
) -> CoarseIndex:
    N = dataset.count
    if N == 0:
        raise ValueError("empty dataset")
    if not 2 <= K <= N:
        raise ValueError(f"K={K} out of range for N={N}; need 2 <= K <= N")
    cp = dict(DEFAULT_CENTER_GRAPH)
    cp.update(coarse_params or {})
    ss = np.random.SeedSequence(seed).spawn(3)
    s_coarse, s_graph, s_res = (int(s.generate_state(1)[0]) & graph.INT32_MAX for s in ss)
    X = dataset.data.astype(np.float64)
    if K == N:
        centers_arr = dataset.data.astype(np.float32)
    else:
        km = quantizer.kmeans(X, K, seed=s_coarse, iters=iters)
        centers_arr = km.centers.astype(np.float32)
    centers = Dataset(centers_arr)
    cp["R"] = min(cp["R"], K - 1)
    cp["n"] = min(cp["n"], K)
    cp["t"] = min(cp["t"], cp["n"] ** cp["m"])
    center_graph = graph.build_index(centers, seed=s_graph, iters=iters, **cp)
    if K == N:
        labels, fallbacks, hits = np.arange(N), 0, N
    else:
        labels, fallbacks, hits = assign_to_centers(center_graph, dataset.data, assign_budget)
    residuals = X - centers_arr.astype(np.float64)[labels]
    rn = min(residual_n, N)
    residual_pq = quantizer.train(residuals, residual_m, rn, seed=s_res, iters=iters)
    codes = residual_pq.encode_batch(residuals)
    code_dtype = np.uint8 if rn <= 256 else np.uint16
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(K + 1))
    list_ids = [order[bounds[c] : bounds[c + 1]] for c in range(K)]
    list_codes = [codes[ids].astype(code_dtype) for ids in list_ids]
    ix = CoarseIndex(centers, center_graph, residual_pq, list_ids, list_codes,
                     assign_budget=assign_budget, seed=seed, base=dataset, fallbacks=fallbacks)
    ix.stats = dict(fallbacks=fallbacks, fallback_rate=fallbacks / N, graph_hit_rate=hits / N,
                    empty_lists=int(sum(len(x) == 0 for x in list_ids)))
    return ix


def probe_lists(ix: CoarseIndex, q: np.ndarray, rerank: RerankParams) -> np.ndarray:
    if rerank.probes >= ix.K:
        # every list is visited; no lookup needed
        return np.arange(ix.K)
    res = search_augmented(ix.center_graph, q, SearchParams(k=rerank.probes, T=rerank.budget()))
    return np.array([c for c, _ in res], dtype=np.int64)


def adc_candidates(ix: CoarseIndex, q, lists) -> tuple[np.ndarray, np.ndarray]:
    """(ids, asymmetric distances) for every vector in the given lists."""
    q = np.asarray(q, dtype=np.float64)
    lists = [c for c in lists if len(ix.list_ids[c])]
    if not lists:
        return np.zeros(0, np.int64), np.zeros(0)
    resid_q = q[None, :] - ix.centers.data[lists].astype(np.float64)
    tables = quantizer.build_tables_batch(ix.residual_pq, resid_q)
    ids, dists = [], []
    m = ix.residual_pq.m
    for j, c in enumerate(lists):
        codes = ix.list_codes[c]
        tab = tables[j]
        acc = np.zeros(len(codes))
        for i in range(m):
            acc += tab[i][codes[:, i]]
        ids.append(ix.list_ids[c])
        dists.append(acc)
    return np.concatenate(ids), np.concatenate(dists)


def search_ivf(ix: CoarseIndex, q, rerank: RerankParams, k: int) -> list[int]:
    """Top-k ids after ADC short-listing and exact re-ranking."""
    if ix.base is None:
        raise ValueError("index has no base vectors attached")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (ix.centers.dim,):
        raise ValueError("dimension mismatch")
    ids, adc = adc_candidates(ix, q, probe_lists(ix, q, rerank))
    if len(ids) == 0:
        return []
    L = len(ids) if rerank.list_len is None else min(rerank.list_len, len(ids))
    short, _ = top_k_ordered(adc, ids, L)
    exact = sq_dists(ix.base.data[short], q)
    top, _ = top_k_ordered(exact, short, min(k, len(short)))
    return top.tolist()


def recall_at(result, true_nn: int, T: int) -> int:
    """1 if ``true_nn`` is among the first T results, else 0."""
    return int(int(true_nn) in [int(r) for r in list(result)[:T]])


# --------------------------------------------------------------------------
# serialization


def ivf_to_bytes(ix: CoarseIndex) -> bytes:
    kind = ix.base.element_kind if ix.base is not None else "float32"
    cg = graph.index_to_bytes(ix.center_graph, "float32")
    parts = [
        MAGIC,
        _i32(VERSION, ix.centers.dim, ix.count, ix.K, KIND_CODES[kind], ix.seed, ix.assign_budget),
        ix.centers.data.astype("<f4").tobytes(),
        _i32(len(cg)), cg,
        graph.pq_to_bytes(ix.residual_pq, kind),
    ]
    code_dtype = "<u1" if ix.residual_pq.n <= 256 else "<u2"
    for ids, codes in zip(ix.list_ids, ix.list_codes):
        parts.append(_i32(len(ids)))
        parts.append(np.asarray(ids, dtype="<i4").tobytes())
        parts.append(np.asarray(codes, dtype=code_dtype).tobytes())
    return b"".join(parts)


def save_ivf(ix: CoarseIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(ivf_to_bytes(ix))


def load_ivf(path, base: Optional[Dataset] = None) -> CoarseIndex:
    with open(path, "rb") as f:
        buf = f.read()
    rd = _Reader(buf, str(path))
    if rd.take(4) != MAGIC:
        raise IndexFormatError(f"{path}: bad magic")
    (version,) = rd.ints(1)
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    d, N, K, _kind, seed, budget = rd.ints(6)
    centers = Dataset(rd.array("<f4", K * d).reshape(K, d))
    (glen,) = rd.ints(1)
    sub = _Reader(rd.take(glen), f"{path} (center graph)")
    center_graph = graph.index_from_reader(sub, centers)
    pq, _ = graph.pq_from_reader(rd)
    code_dtype = np.dtype("<u1" if pq.n <= 256 else "<u2")
    list_ids, list_codes = [], []
    for _ in range(K):
        (length,) = rd.ints(1)
        list_ids.append(rd.array("<i4", length).astype(np.int64))
        list_codes.append(rd.array(code_dtype, length * pq.m).reshape(length, pq.m))
    if rd.pos != len(buf):
        raise IndexFormatError(f"{path}: {len(buf) - rd.pos} trailing bytes")
    if base is not None and (base.count != N or base.dim != d):
        raise ValueError("base dataset does not match the index")
    return CoarseIndex(centers, center_graph, pq, list_ids, list_codes,
                       assign_budget=budget, seed=seed, base=base)
