"""Datasets, the *vecs file formats, and squared-Euclidean distance kernels.

All distances in this package are squared Euclidean and are accumulated in
float64. Vectors are stored as float32 (uint8 data is promoted exactly at
load time) and promoted per operation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

FORMATS = ("fvecs", "bvecs", "ivecs")

_ELEMENT_DTYPE = {"fvecs": np.dtype("<f4"), "bvecs": np.dtype("u1"), "ivecs": np.dtype("<i4")}
_KIND_OF_FORMAT = {"fvecs": "float32", "bvecs": "uint8", "ivecs": "int32"}
_FORMAT_OF_KIND = {v: k for k, v in _KIND_OF_FORMAT.items()}

# Element-kind codes used in binary index headers.
KIND_CODES = {"float32": 0, "uint8": 1, "int32": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class DatasetFormatError(ValueError):
    """A vecs file is truncated, has inconsistent records, or a bad dimension."""


@dataclass
class DistanceCounter:
    """Per-query operation counts.

    ``full_dist_evals`` counts d-dimensional distance evaluations,
    ``sub_dist_evals`` counts subvector distance evaluations and ``heap_ops``
    counts priority-queue pushes and pops.
    """

    full_dist_evals: int = 0
    sub_dist_evals: int = 0
    heap_ops: int = 0

    def reset(self) -> None:
        self.full_dist_evals = 0
        self.sub_dist_evals = 0
        self.heap_ops = 0


class Dataset:
    """N vectors of dimension d with implicit ids 0..N-1.

    ``data`` is a read-only (N, d) array: float32 for fvecs/bvecs input
    (uint8 values are represented exactly), float64 for ivecs input.
    """

    def __init__(self, data, element_kind: str = "float32"):
        if element_kind not in KIND_CODES:
            raise ValueError(f"unknown element kind {element_kind!r}")
        arr = np.asarray(data)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ValueError(f"dataset must be 2-D, got shape {arr.shape}")
        store = np.float64 if element_kind == "int32" else np.float32
        arr = np.ascontiguousarray(arr, dtype=store)
        arr.flags.writeable = False
        self.data = arr
        self.element_kind = element_kind

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> Optional[int]:
        # an empty file carries no dimension
        if self.count == 0 and self.data.shape[1] == 0:
            return None
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i):
        return self.data[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.element_kind == other.element_kind
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self) -> str:
        return f"Dataset(dim={self.dim}, count={self.count}, element_kind={self.element_kind!r})"

    def subset(self, ids) -> "Dataset":
        return Dataset(self.data[np.asarray(ids)], self.element_kind)


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def read_vecs(path, fmt: str) -> np.ndarray:
    """Parse a vecs file into an (N, d) array of the file's element type."""
    _check_format(fmt)
    elem = _ELEMENT_DTYPE[fmt]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=elem)
    if raw.size < 4:
        raise DatasetFormatError(f"{path}: truncated header ({raw.size} bytes)")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise DatasetFormatError(f"{path}: non-positive dimension {d}")
    rec = 4 + d * elem.itemsize
    if raw.size % rec:
        # either a short final record or a record with a different d
        n_full = raw.size // rec
        heads = raw[: n_full * rec].reshape(n_full, rec)[:, :4].copy().view("<i4").ravel()
        if np.any(heads != d):
            bad = int(np.argmax(heads != d))
            raise DatasetFormatError(f"{path}: record {bad} has dimension {heads[bad]}, expected {d}")
        raise DatasetFormatError(f"{path}: truncated file ({raw.size} bytes is not a multiple of {rec})")
    recs = raw.reshape(-1, rec)
    heads = recs[:, :4].copy().view("<i4").ravel()
    if np.any(heads != d):
        bad = int(np.argmax(heads != d))
        raise DatasetFormatError(f"{path}: record {bad} has dimension {heads[bad]}, expected {d}")
    return recs[:, 4:].copy().view(elem).reshape(-1, d)


def write_vecs(path, array, fmt: str) -> None:
    _check_format(fmt)
    elem = _ELEMENT_DTYPE[fmt]
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = arr.shape
    if n == 0:
        open(path, "wb").close()
        return
    body = np.ascontiguousarray(arr, dtype=elem)
    if fmt != "fvecs" and not np.array_equal(body, arr):
        raise ValueError(f"values are not representable as {elem}")
    out = np.empty((n, 4 + d * elem.itemsize), dtype=np.uint8)
    out[:, :4] = np.full(n, d, dtype="<i4").view(np.uint8).reshape(n, 4)
    out[:, 4:] = body.view(np.uint8).reshape(n, -1)
    with open(path, "wb") as f:
        f.write(out.tobytes())


def load_dataset(path, format: Optional[str] = None) -> Dataset:
    """Load a fvecs/bvecs/ivecs file. ``format`` defaults to the file suffix."""
    if format is None:
        format = os.path.splitext(str(path))[1].lstrip(".")
    arr = read_vecs(path, format)
    return Dataset(arr, _KIND_OF_FORMAT[format])


def save_dataset(dataset: Dataset, path, format: Optional[str] = None) -> None:
    if format is None:
        format = _FORMAT_OF_KIND[dataset.element_kind]
    write_vecs(path, dataset.data, format)


def read_ivecs(path) -> np.ndarray:
    return read_vecs(path, "ivecs")


def write_ivecs(path, ids) -> None:
    write_vecs(path, np.asarray(ids, dtype=np.int64), "ivecs")


def sq_dist(a, b, counter: Optional[DistanceCounter] = None) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if counter is not None:
        counter.full_dist_evals += 1
    # same kernel as sq_dists so single and batched values agree bitwise
    return float(sq_dists(a.reshape(1, -1), b)[0])


def sq_dists(points, q, counter: Optional[DistanceCounter] = None) -> np.ndarray:
    """Squared distances from ``q`` to every row of ``points`` (exact kernel)."""
    points = np.asarray(points)
    q = np.asarray(q, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: {points.shape} vs {q.shape}")
    if counter is not None:
        counter.full_dist_evals += points.shape[0]
    diff = points.astype(np.float64) - q
    return np.einsum("ij,ij->i", diff, diff)


def top_k_ordered(dists: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The k smallest (dist, id) pairs in ascending (dist, id) order."""
    if k < len(dists):
        kth = np.partition(dists, k - 1)[k - 1]
        keep = np.flatnonzero(dists <= kth)
        dists, ids = dists[keep], ids[keep]
    order = np.lexsort((ids, dists))[:k]
    return ids[order], dists[order]


def brute_force_knn(dataset: Dataset, query, k: int, counter: Optional[DistanceCounter] = None):
    """Exact k nearest neighbours as a list of (id, sq_dist), ties by smaller id."""
    if dataset.count == 0:
        raise ValueError("empty dataset")
    if not 1 <= k <= dataset.count:
        raise ValueError(f"k={k} out of range for N={dataset.count}")
    d = sq_dists(dataset.data, query, counter)
    ids, dists = top_k_ordered(d, np.arange(dataset.count), k)
    return [(int(i), float(x)) for i, x in zip(ids, dists)]


def brute_force_knn_batch(dataset: Dataset, queries, k: int) -> np.ndarray:
    """Exact top-k id matrix for many queries; rows follow ``brute_force_knn``."""
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty((len(queries), k), dtype=np.int64)
    for i, q in enumerate(queries):
        ids, _ = top_k_ordered(sq_dists(dataset.data, q), np.arange(dataset.count), k)
        out[i] = ids
    return out
