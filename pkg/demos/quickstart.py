"""Build an augmented graph on synthetic data and compare the search engines.

Run from the repository root:  python3 demos/quickstart.py
Takes about a minute on one core.
"""

import time

import numpy as np

from bridgegraph import SearchParams, accuracy, build_index, search_augmented, search_plain
from bridgegraph.datasets import sift_like
from bridgegraph.vecstore import brute_force_knn_batch

base, queries = sift_like(10_000, 50, seed=1)
t0 = time.perf_counter()
g = build_index(base, m=2, n=100, R=20, t=100, b=5, seed=0)
st = g.stats
print(f"built in {time.perf_counter() - t0:.1f}s: {st.num_bridges_stored} bridges stored, "
      f"{st.num_reference} references reachable from a bridge, mean list length {st.alpha:.2f}")

truth = brute_force_knn_batch(base, queries.data, 10)
seeds = np.random.default_rng(0).integers(0, base.count, size=(queries.count, 3))

print("\n   T   augmented@10  plain@10")
for T in (50, 100, 200, 400):
    aug = np.mean([accuracy(search_augmented(g, q, SearchParams(10, T)), truth[j], 10)
                   for j, q in enumerate(queries.data)])
    plain = np.mean([accuracy(search_plain(g.ngraph, base, q, seeds[j], SearchParams(10, T)), truth[j], 10)
                     for j, q in enumerate(queries.data)])
    print(f"{T:4d}   {aug:10.3f}   {plain:8.3f}")
