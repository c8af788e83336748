"""Index construction: exact R-NN graph, bridge graph, and the ANNB file.

ANNB layout (all integers int32 little-endian, floats IEEE-754 float32 LE)::

    magic "ANNB" | version | d | N | m | n | R | t | b | seed | element kind
    product quantizer: m | dims[m] | n | element kind | seed | centers
                       (codebook 0 row-major, then codebook 1, ...)
    neighborhood graph: N * R entries of (id, dist)
    bridge graph: count | per bridge: packed id | length | length * (id, dist)
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import quantizer
from .multiseq import nearest_bridges
from .quantizer import ProductQuantizer, SubspaceLayout
from .vecstore import KIND_CODES, KIND_NAMES, Dataset, sq_dists, top_k_ordered

MAGIC = b"ANNB"
VERSION = 1
INT32_MAX = (1 << 31) - 1

_ENTRY = np.dtype([("id", "<i4"), ("dist", "<f4")])


class IndexFormatError(ValueError):
    """An index file has a bad magic, unsupported version, or is truncated."""


# --------------------------------------------------------------------------
# neighborhood graph


@dataclass
class NeighborhoodGraph:
    """``ids[i]`` holds the R nearest other references of x_i, ascending by
    (distance, id); ``dists[i]`` the matching squared distances."""

    ids: np.ndarray
    dists: np.ndarray

    @property
    def degree(self) -> int:
        return self.ids.shape[1]

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeighborhoodGraph):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.dists, other.dists)


def _knn_rows(X32: np.ndarray, norms: np.ndarray, norms32: np.ndarray, start: int, stop: int, k: int):
    """Exact k nearest (including self) for rows start..stop-1.

    Candidates come from the expanded-norm Gram product; anything within
    ``tol`` of the approximate k-th value is re-scored with the exact kernel,
    so the final selection and ordering never depend on Gram rounding.
    """
    block = X32[start:stop]
    # ||x||^2 - 2<x, y> + ||y||^2 without the row-constant ||x||^2 term
    gram = block @ X32.T
    gram *= -2.0
    gram += norms32[None, :]
    kth = np.partition(gram, k - 1, axis=1)[:, k - 1].astype(np.float64)
    # twice a float32 dot-product error bound, with headroom
    tol = 8.0 * X32.shape[1] * np.finfo(np.float32).eps * (norms[start:stop] + norms.max()) + 1e-6
    rows, cols = np.nonzero(gram <= (kth + tol)[:, None])
    cuts = np.searchsorted(rows, np.arange(1, stop - start))
    ids = np.empty((stop - start, k), dtype=np.int64)
    dists = np.empty((stop - start, k))
    for r, cand in enumerate(np.split(cols, cuts)):
        exact = sq_dists(X32[cand], X32[start + r])
        ids[r], dists[r] = top_k_ordered(exact, cand, k)
    return ids, dists


def build_ngraph(dataset: Dataset, R: int, threads: int = 1, block: int = 256) -> NeighborhoodGraph:
    """Exact R-NN graph; row i equals brute-force (R+1)-NN of x_i minus x_i."""
    N = dataset.count
    if N == 0:
        raise ValueError("empty dataset")
    if not 1 <= R < N:
        raise ValueError(f"degree R={R} must satisfy 1 <= R < N={N}")
    X32 = np.ascontiguousarray(dataset.data, dtype=np.float32)
    X = X32.astype(np.float64)
    norms = np.einsum("ij,ij->i", X, X)
    norms32 = norms.astype(np.float32)
    del X
    starts = list(range(0, N, block))

    def work(s):
        return _knn_rows(X32, norms, norms32, s, min(s + block, N), R + 1)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    ids = np.empty((N, R), dtype=np.int32)
    dists = np.empty((N, R), dtype=np.float32)
    for s, (pid, pd) in zip(starts, parts):
        for r in range(len(pid)):
            i = s + r
            keep = np.flatnonzero(pid[r] != i)[:R]
            ids[i] = pid[r][keep]
            dists[i] = pd[r][keep]
    return NeighborhoodGraph(ids, dists)


# --------------------------------------------------------------------------
# bridge graph


@dataclass
class BridgeGraph:
    """Sparse bridge id -> reference list map in compressed-row form.

    ``bridge_ids`` is sorted; the list of ``bridge_ids[j]`` is
    ``ref_ids[offsets[j]:offsets[j+1]]`` with distances alongside, ascending
    by (distance, reference id).
    """

    bridge_ids: np.ndarray
    offsets: np.ndarray
    ref_ids: np.ndarray
    dists: np.ndarray

    def __len__(self) -> int:
        return len(self.bridge_ids)

    @property
    def num_pairs(self) -> int:
        return len(self.ref_ids)

    def __post_init__(self):
        self._slot = None

    def slot(self, bridge: int) -> Optional[int]:
        """Row of ``bridge`` in the compressed arrays, None when not stored."""
        if self._slot is None:
            self._slot = dict(zip(self.bridge_ids.tolist(), range(len(self.bridge_ids))))
        return self._slot.get(bridge)

    def lookup(self, bridge: int) -> slice:
        j = int(np.searchsorted(self.bridge_ids, bridge))
        if j < len(self.bridge_ids) and self.bridge_ids[j] == bridge:
            return slice(int(self.offsets[j]), int(self.offsets[j + 1]))
        return slice(0, 0)

    def neighbors(self, bridge: int) -> np.ndarray:
        return self.ref_ids[self.lookup(bridge)]

    def as_dict(self) -> dict[int, list[tuple[int, float]]]:
        out = {}
        for j, y in enumerate(self.bridge_ids.tolist()):
            a, b = self.offsets[j], self.offsets[j + 1]
            out[y] = list(zip(self.ref_ids[a:b].tolist(), self.dists[a:b].tolist()))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, BridgeGraph):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("bridge_ids", "offsets", "ref_ids", "dists")
        )


def bridge_graph_from_candidates(bridges, refs, dists, b: int) -> BridgeGraph:
    """Keep the b smallest (dist, ref id) candidates per bridge."""
    bridges = np.asarray(bridges, dtype=np.int64)
    refs = np.asarray(refs, dtype=np.int64)
    dists = np.asarray(dists, dtype=np.float64)
    order = np.lexsort((refs, dists, bridges))
    bridges, refs, dists = bridges[order], refs[order], dists[order]
    if len(bridges) == 0:
        return BridgeGraph(np.zeros(0, np.int64), np.zeros(1, np.int64),
                           np.zeros(0, np.int32), np.zeros(0, np.float32))
    starts = np.flatnonzero(np.r_[True, bridges[1:] != bridges[:-1]])
    rank = np.arange(len(bridges)) - np.repeat(starts, np.diff(np.r_[starts, len(bridges)]))
    keep = rank < b
    bridges, refs, dists = bridges[keep], refs[keep], dists[keep]
    uniq, counts = np.unique(bridges, return_counts=True)
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    return BridgeGraph(uniq, offsets, refs.astype(np.int32), dists.astype(np.float32))


def nearest_bridges_for(dataset: Dataset, pq: ProductQuantizer, t: int, block: int = 1024):
    """Top-t bridges per reference via the multi-sequence stream.

    Returns flat (bridge, ref, dist) candidate arrays in reference order.
    """
    N = dataset.count
    bridges = np.empty(N * t, dtype=np.int64)
    dists = np.empty(N * t)
    for s in range(0, N, block):
        rows = quantizer.build_tables_batch(pq, dataset.data[s : s + block])
        perms = np.argsort(rows, axis=2, kind="stable")
        srt = np.take_along_axis(rows, perms, axis=2)
        for r in range(len(rows)):
            ids, keys = nearest_bridges(srt[r], perms[r], t)
            i = (s + r) * t
            bridges[i : i + t] = ids
            dists[i : i + t] = keys
    refs = np.repeat(np.arange(N, dtype=np.int64), t)
    return bridges, refs, dists


def build_bgraph(dataset: Dataset, pq: ProductQuantizer, t: int = 100, b: int = 5) -> BridgeGraph:
    if t < 1 or b < 1:
        raise ValueError("t and b must be positive")
    if t > pq.num_bridges:
        raise ValueError(f"t={t} exceeds the number of bridge vectors {pq.num_bridges}")
    if dataset.count == 0:
        raise ValueError("empty dataset")
    return bridge_graph_from_candidates(*nearest_bridges_for(dataset, pq, t), b)


# --------------------------------------------------------------------------
# augmented graph


@dataclass
class IndexStats:
    num_reference: int
    num_bridges_stored: int
    alpha: float
    # pairs per bridge averaged over all n**m bridges, empty ones included
    alpha_over_all: float = 0.0

    def alpha_over_b(self, b: int) -> float:
        return self.alpha / b


def compute_stats(bgraph: BridgeGraph, total_bridges: int = 0) -> IndexStats:
    stored = len(bgraph)
    alpha = bgraph.num_pairs / stored if stored else 0.0
    over_all = bgraph.num_pairs / total_bridges if total_bridges else 0.0
    return IndexStats(int(len(np.unique(bgraph.ref_ids))), stored, float(alpha), float(over_all))


class AugmentedGraph:
    """Product quantizer + neighborhood graph + bridge graph.

    ``data`` (the reference vectors) is needed for search but is not part of
    the index file; :func:`load_index` re-attaches it.
    """

    def __init__(self, pq, ngraph, bgraph, params: dict, data: Optional[Dataset] = None):
        self.pq = pq
        self.ngraph = ngraph
        self.bgraph = bgraph
        self.params = dict(params)
        self.stats = compute_stats(bgraph, pq.num_bridges)
        self.data = data
        self._marks = None

    @property
    def count(self) -> int:
        return len(self.ngraph)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AugmentedGraph):
            return NotImplemented
        return (
            self.params == other.params
            and self.pq == other.pq
            and self.ngraph == other.ngraph
            and self.bgraph == other.bgraph
            and self.stats == other.stats
        )

    def __repr__(self) -> str:
        p = self.params
        return (
            f"AugmentedGraph(N={self.count}, m={p['m']}, n={p['n']}, R={p['R']}, "
            f"t={p['t']}, b={p['b']}, references={self.stats.num_reference}, "
            f"alpha={self.stats.alpha:.3f})"
        )


def build_index(
    dataset: Dataset,
    m: int = 4,
    n: int = 50,
    R: int = 20,
    t: int = 100,
    b: int = 5,
    seed: int = 0,
    iters: int = 25,
    threads: int = 1,
) -> AugmentedGraph:
    if dataset.count == 0:
        raise ValueError("empty dataset")
    if n**m > INT32_MAX:
        raise ValueError(f"n**m = {n**m} bridge ids do not fit the 32-bit index format")
    if not 0 <= seed <= INT32_MAX:
        raise ValueError("seed must be a non-negative 32-bit integer")
    pq = quantizer.train(dataset, m, n, seed=seed, iters=iters)
    ngraph = build_ngraph(dataset, R, threads=threads)
    bgraph = build_bgraph(dataset, pq, t, b)
    params = dict(m=m, n=n, R=R, t=t, b=b, seed=seed)
    return AugmentedGraph(pq, ngraph, bgraph, params, data=dataset)


# --------------------------------------------------------------------------
# serialization


def _i32(*values) -> bytes:
    return struct.pack(f"<{len(values)}i", *values)


def pq_to_bytes(pq: ProductQuantizer, element_kind: str) -> bytes:
    parts = [_i32(pq.m, *pq.layout.dims, pq.n, KIND_CODES[element_kind], pq.seed)]
    parts += [c.astype("<f4").tobytes() for c in pq.codebooks]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf = buf
        self.pos = 0
        self.name = name

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise IndexFormatError(f"{self.name}: truncated at byte {self.pos}")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def ints(self, count: int) -> tuple[int, ...]:
        return struct.unpack(f"<{count}i", self.take(4 * count))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def pq_from_reader(rd: _Reader) -> tuple[ProductQuantizer, str]:
    (m,) = rd.ints(1)
    if m < 1:
        raise IndexFormatError(f"{rd.name}: bad subspace count {m}")
    dims = rd.ints(m)
    n, kind, seed = rd.ints(3)
    books = [rd.array("<f4", n * di).reshape(n, di) for di in dims]
    return ProductQuantizer(SubspaceLayout(tuple(dims)), books, seed), KIND_NAMES[kind]


def _bridge_words(bg: BridgeGraph) -> np.ndarray:
    B, P = len(bg.bridge_ids), bg.num_pairs
    words = np.empty(1 + 2 * B + 2 * P, dtype="<u4")
    words[0] = B
    counts = np.diff(bg.offsets)
    head = 1 + 2 * np.arange(B) + 2 * bg.offsets[:-1]
    words[head] = bg.bridge_ids
    words[head + 1] = counts
    owner = np.repeat(np.arange(B), counts)
    epos = head[owner] + 2 + 2 * (np.arange(P) - bg.offsets[owner])
    words[epos] = bg.ref_ids.astype("<i4").view("<u4")
    words[epos + 1] = bg.dists.astype("<f4").view("<u4")
    return words


def index_to_bytes(g: AugmentedGraph, element_kind: Optional[str] = None) -> bytes:
    if element_kind is None:
        element_kind = g.data.element_kind if g.data is not None else "float32"
    p = g.params
    head = MAGIC + _i32(VERSION, g.pq.d, g.count, p["m"], p["n"], p["R"], p["t"], p["b"],
                        p["seed"], KIND_CODES[element_kind])
    adj = np.empty(g.ngraph.ids.shape, dtype=_ENTRY)
    adj["id"] = g.ngraph.ids
    adj["dist"] = g.ngraph.dists
    return b"".join([head, pq_to_bytes(g.pq, element_kind), adj.tobytes(), _bridge_words(g.bgraph).tobytes()])


def index_from_reader(rd: _Reader, data: Optional[Dataset] = None) -> AugmentedGraph:
    if rd.take(4) != MAGIC:
        raise IndexFormatError(f"{rd.name}: bad magic")
    (version,) = rd.ints(1)
    if version != VERSION:
        raise IndexFormatError(f"{rd.name}: unsupported version {version}")
    d, N, m, n, R, t, b, seed, _kind = rd.ints(9)
    pq, _ = pq_from_reader(rd)
    if pq.d != d or pq.m != m or pq.n != n:
        raise IndexFormatError(f"{rd.name}: quantizer header disagrees with index header")
    adj = rd.array(_ENTRY, N * R).reshape(N, R)
    ngraph = NeighborhoodGraph(adj["id"].astype(np.int32), adj["dist"].astype(np.float32))
    (B,) = rd.ints(1)
    words = np.frombuffer(rd.buf, dtype="<u4", offset=rd.pos,
                          count=(len(rd.buf) - rd.pos) // 4)
    bridge_ids = np.empty(B, dtype=np.int64)
    counts = np.empty(B, dtype=np.int64)
    # record positions depend on earlier lengths, so walk the headers
    mv = memoryview(words).cast("B").cast("I")
    total = len(mv)
    pos = 0
    for j in range(B):
        if pos + 2 > total:
            raise IndexFormatError(f"{rd.name}: truncated bridge graph")
        bridge_ids[j] = mv[pos]
        c = mv[pos + 1]
        counts[j] = c
        pos += 2 + 2 * c
    if pos > total:
        raise IndexFormatError(f"{rd.name}: truncated bridge graph")
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    head = 2 * np.arange(B) + 2 * offsets[:-1]
    owner = np.repeat(np.arange(B), counts)
    epos = head[owner] + 2 + 2 * (np.arange(offsets[-1]) - offsets[owner])
    ref_ids = words[epos].view("<i4").astype(np.int32)
    dists = words[epos + 1].view("<f4").astype(np.float32)
    rd.pos += 4 * pos
    bg = BridgeGraph(bridge_ids, offsets, ref_ids, dists)
    if data is not None and (data.count != N or data.dim != d):
        raise ValueError(f"dataset shape ({data.count}, {data.dim}) does not match index ({N}, {d})")
    params = dict(m=m, n=n, R=R, t=t, b=b, seed=seed)
    return AugmentedGraph(pq, ngraph, bg, params, data=data)


def save_index(g: AugmentedGraph, path) -> None:
    with open(path, "wb") as f:
        f.write(index_to_bytes(g))


def load_index(path, data: Optional[Dataset] = None) -> AugmentedGraph:
    with open(path, "rb") as f:
        buf = f.read()
    rd = _Reader(buf, str(path))
    g = index_from_reader(rd, data)
    if rd.pos != len(buf):
        raise IndexFormatError(f"{path}: {len(buf) - rd.pos} trailing bytes")
    return g


def layout_size(g: AugmentedGraph) -> int:
    """Analytic ANNB file size in bytes."""
    pq = g.pq
    header = 4 + 4 * 10
    pq_bytes = 4 * (1 + pq.m + 3) + 4 * pq.n * pq.d
    return header + pq_bytes + 8 * g.ngraph.ids.size + 4 + 8 * len(g.bgraph) + 8 * g.bgraph.num_pairs
