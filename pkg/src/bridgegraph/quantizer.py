"""Product quantizer: per-subspace codebooks, codes and distance tables.

The Cartesian product of the m codebooks is the bridge-vector set. A bridge
vector is never materialized; it is named by its code (k_1, ..., k_m) or by
the row-major packed integer ``sum_i k_i * n**(m-1-i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .vecstore import Dataset, DistanceCounter

MAX_CODEBOOK_SIZE = 1 << 16


@dataclass(frozen=True)
class SubspaceLayout:
    """Contiguous split of d coordinates into m blocks.

    When m does not divide d the first ``d % m`` blocks get one extra
    coordinate.
    """

    dims: tuple[int, ...]

    @classmethod
    def split(cls, d: int, m: int) -> "SubspaceLayout":
        if m < 1 or d < m:
            raise ValueError(f"cannot split {d} dimensions into {m} subspaces")
        base, extra = divmod(d, m)
        return cls(tuple(base + 1 if i < extra else base for i in range(m)))

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def d(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.dims)]))

    def slices(self) -> list[slice]:
        off = self.offsets
        return [slice(off[i], off[i + 1]) for i in range(self.m)]


# --------------------------------------------------------------------------
# k-means


def _nearest_center(points: np.ndarray, centers: np.ndarray, block: int = 4096):
    """Index of the nearest center per point (ties to the smaller index)."""
    c2 = np.einsum("ij,ij->i", centers, centers)
    out = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), block):
        p = points[s : s + block]
        # ||p||^2 is constant per row and does not affect the argmin
        out[s : s + block] = np.argmin(c2[None, :] - 2.0 * p @ centers.T, axis=1)
    return out


def _sq_to_assigned(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> np.ndarray:
    diff = points - centers[labels]
    return np.einsum("ij,ij->i", diff, diff)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding (D^2 sampling).

    Distances use the norm expansion (one matrix-vector product per pick);
    they only weight the sampling, so their rounding is harmless.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < k:
        raise ValueError(f"cannot seed {k} clusters from {n} points")
    norms = np.einsum("ij,ij->i", points, points)
    centers = np.empty((k, points.shape[1]))
    closest = np.full(n, np.inf)
    idx = int(rng.integers(n))
    for j in range(k):
        centers[j] = points[idx]
        d = norms - 2.0 * (points @ centers[j]) + norms[idx]
        np.maximum(d, 0.0, out=d)
        np.minimum(closest, d, out=closest)
        if j + 1 == k:
            break
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
    return centers


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    sse_history: list[float] = field(default_factory=list)
    repairs: int = 0

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


def lloyd(points: np.ndarray, init: np.ndarray, iters: int = 25) -> KMeansResult:
    """Lloyd iterations from the given centers.

    An empty cluster is re-seeded at the farthest member of the currently
    largest cluster. ``sse_history[i]`` is the SSE after the i-th assignment
    step; the final entry matches the returned centers and labels.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.array(init, dtype=np.float64, copy=True)
    k = len(centers)
    labels = _nearest_center(points, centers)
    history = [float(_sq_to_assigned(points, centers, labels).sum())]
    repairs = 0
    for _ in range(iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            far = members[np.argmax(_sq_to_assigned(points[members], centers, labels[members]))]
            centers[j] = points[far]
            labels[far] = j
            counts[big] -= 1
            counts[j] = 1
            repairs += 1
        new_labels = _nearest_center(points, centers)
        history.append(float(_sq_to_assigned(points, centers, new_labels).sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centers, labels, history, repairs)


def kmeans(points, k: int, seed: int = 0, iters: int = 25) -> KMeansResult:
    rng = np.random.default_rng(seed)
    init = kmeans_pp_init(points, k, rng)
    return lloyd(points, init, iters)


# --------------------------------------------------------------------------
# product quantizer


class ProductQuantizer:
    """m codebooks of n centers each over a contiguous subspace layout.

    ``codebooks[i]`` is an (n, d_i) float32 array.
    """

    def __init__(self, layout: SubspaceLayout, codebooks: Sequence[np.ndarray], seed: int = 0):
        if len(codebooks) != layout.m:
            raise ValueError("one codebook per subspace required")
        sizes = {len(c) for c in codebooks}
        if len(sizes) != 1:
            raise ValueError(f"codebooks must have equal size, got {sorted(sizes)}")
        self.layout = layout
        self.codebooks = []
        for i, c in enumerate(codebooks):
            c = np.ascontiguousarray(c, dtype=np.float32)
            if c.ndim != 2 or c.shape[1] != layout.dims[i]:
                raise ValueError(f"codebook {i} has shape {c.shape}, expected (n, {layout.dims[i]})")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"codebook {i} has non-finite centers")
            c.flags.writeable = False
            self.codebooks.append(c)
        self.n = sizes.pop()
        if not 1 <= self.n <= MAX_CODEBOOK_SIZE:
            raise ValueError(f"codebook size {self.n} out of range")
        self.seed = int(seed)
        self._cb64 = [c.astype(np.float64) for c in self.codebooks]

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def d(self) -> int:
        return self.layout.d

    @property
    def num_bridges(self) -> int:
        return self.n**self.m

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProductQuantizer):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.seed == other.seed
            and all(np.array_equal(a, b) for a, b in zip(self.codebooks, other.codebooks))
        )

    def __repr__(self) -> str:
        return f"ProductQuantizer(m={self.m}, n={self.n}, dims={self.layout.dims})"

    def _check_dim(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.d:
            raise ValueError(f"dimension mismatch: got {x.shape[-1]}, expected {self.d}")

    def encode(self, x) -> np.ndarray:
        """Nearest center per subspace; ties go to the smaller index."""
        x = np.asarray(x, dtype=np.float64)
        self._check_dim(x)
        code = np.empty(self.m, dtype=np.int64)
        for i, sl in enumerate(self.layout.slices()):
            diff = self._cb64[i] - x[sl]
            code[i] = np.argmin(np.einsum("ij,ij->i", diff, diff))
        return code

    def encode_batch(self, X, block: int = 2048) -> np.ndarray:
        X = np.asarray(X)
        self._check_dim(X)
        codes = np.empty((len(X), self.m), dtype=np.int64)
        for s in range(0, len(X), block):
            chunk = X[s : s + block].astype(np.float64)
            for i, sl in enumerate(self.layout.slices()):
                diff = chunk[:, None, sl] - self._cb64[i][None, :, :]
                codes[s : s + block, i] = np.argmin(np.einsum("abj,abj->ab", diff, diff), axis=1)
        return codes

    def decode(self, code) -> np.ndarray:
        code = self._check_code(code)
        return np.concatenate([self.codebooks[i][k] for i, k in enumerate(code)])

    def decode_batch(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != self.m:
            raise ValueError(f"codes must have shape (N, {self.m})")
        if codes.size and (codes.min() < 0 or codes.max() >= self.n):
            raise IndexError("code index out of range")
        return np.hstack([self.codebooks[i][codes[:, i]] for i in range(self.m)])

    def _check_code(self, code) -> np.ndarray:
        code = np.asarray(code, dtype=np.int64)
        if code.shape != (self.m,):
            raise ValueError(f"code must have {self.m} entries")
        if np.any(code < 0) or np.any(code >= self.n):
            raise IndexError(f"code {code.tolist()} out of range for n={self.n}")
        return code

    def pack(self, code) -> int:
        code = self._check_code(code)
        out = 0
        for k in code:
            out = out * self.n + int(k)
        return out

    def unpack(self, bridge_id: int) -> np.ndarray:
        if not 0 <= bridge_id < self.num_bridges:
            raise IndexError(f"bridge id {bridge_id} out of range")
        code = np.empty(self.m, dtype=np.int64)
        for i in range(self.m - 1, -1, -1):
            bridge_id, code[i] = divmod(bridge_id, self.n)
        return code

    def quantization_error(self, X) -> float:
        X = np.asarray(X, dtype=np.float64)
        diff = X - self.decode_batch(self.encode_batch(X)).astype(np.float64)
        return float(np.einsum("ij,ij->", diff, diff))


def train(
    dataset: Dataset | np.ndarray,
    m: int,
    n: int,
    seed: int = 0,
    iters: int = 25,
) -> ProductQuantizer:
    """Train one k-means codebook per contiguous subspace.

    Subspace i uses the seed sequence spawned from ``seed`` at position i, so
    the result is deterministic for fixed inputs.
    """
    X = dataset.data if isinstance(dataset, Dataset) else np.asarray(dataset)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if n < 2:
        raise ValueError("need at least 2 clusters per subspace")
    if X.shape[0] < n:
        raise ValueError(f"N={X.shape[0]} is smaller than n={n}")
    layout = SubspaceLayout.split(X.shape[1], m)
    seeds = np.random.SeedSequence(seed).spawn(m)
    books = []
    for sl, ss in zip(layout.slices(), seeds):
        sub = X[:, sl].astype(np.float64)
        rng = np.random.default_rng(ss)
        books.append(lloyd(sub, kmeans_pp_init(sub, n, rng), iters).centers)
    return ProductQuantizer(layout, books, seed)


# --------------------------------------------------------------------------
# query-time distance tables


class DistanceTables:
    """Per-subspace squared distances from a query to every center.

    ``rows[i, k]`` is the distance in subspace i to center k, ``perms[i]``
    sorts row i ascending (stable, so equal values keep index order) and
    ``sorted_rows[i] = rows[i, perms[i]]``.
    """

    def __init__(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")
        if rows.shape[1] == 0:
            raise ValueError("empty distance row")
        self.rows = rows
        self.perms = np.argsort(rows, axis=1, kind="stable")
        self.sorted_rows = np.take_along_axis(rows, self.perms, axis=1)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]


def build_tables(pq: ProductQuantizer, q, counter: Optional[DistanceCounter] = None) -> DistanceTables:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("query must be a single vector")
    pq._check_dim(q)
    rows = np.empty((pq.m, pq.n))
    for i, sl in enumerate(pq.layout.slices()):
        diff = pq._cb64[i] - q[sl]
        rows[i] = np.einsum("ij,ij->i", diff, diff)
    if counter is not None:
        counter.sub_dist_evals += pq.m * pq.n
    return DistanceTables(rows)


def build_tables_batch(pq: ProductQuantizer, Q, block: int = 1024) -> np.ndarray:
    """Raw (len(Q), m, n) table rows for many queries at once."""
    Q = np.asarray(Q)
    pq._check_dim(Q)
    out = np.empty((len(Q), pq.m, pq.n))
    for s in range(0, len(Q), block):
        chunk = Q[s : s + block].astype(np.float64)
        for i, sl in enumerate(pq.layout.slices()):
            diff = chunk[:, None, sl] - pq._cb64[i][None, :, :]
            out[s : s + block, i, :] = np.einsum("abj,abj->ab", diff, diff)
    return out


def asymmetric_distance(tables: DistanceTables, code) -> float:
    code = np.asarray(code, dtype=np.int64)
    if code.shape != (tables.m,):
        raise ValueError(f"code must have {tables.m} entries")
    if np.any(code < 0) or np.any(code >= tables.n):
        raise IndexError("code index out of range")
    total = 0.0
    for i, k in enumerate(code):
        total += tables.rows[i, k]
    return float(total)
