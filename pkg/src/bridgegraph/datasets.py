"""Seeded synthetic data with clustered, low intrinsic-dimensional structure.

Used for desk-scale runs when real SIFT/GIST files are not at hand. Each
cluster is a random center plus a random low-rank Gaussian spread and a
little isotropic noise; byte-valued output is clipped and rounded to
0..255 like SIFT descriptors.
"""

from __future__ import annotations

import numpy as np

from .vecstore import Dataset


class MixtureModel:
    def __init__(self, d: int = 128, clusters: int = 512, intrinsic_dim: int = 16,
                 spread: float = 60.0, noise: float = 2.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.centers = rng.gamma(1.2, 30.0, size=(clusters, d))
        self.bases = rng.normal(size=(clusters, d, intrinsic_dim)) * (spread / np.sqrt(intrinsic_dim))
        self.weights = rng.dirichlet(np.full(clusters, 5.0))
        self.noise = noise

    def sample(self, count: int, seed: int, byte_valued: bool = True) -> Dataset:
        rng = np.random.default_rng(seed)
        labels = rng.choice(len(self.centers), size=count, p=self.weights)
        z = rng.normal(size=(count, self.bases.shape[2]))
        out = self.centers[labels]
        for s in range(0, count, 8192):
            sl = slice(s, s + 8192)
            out[sl] += np.einsum("ndr,nr->nd", self.bases[labels[sl]], z[sl])
        out += rng.normal(scale=self.noise, size=out.shape)
        if byte_valued:
            return Dataset(np.clip(np.rint(out), 0, 255).astype(np.uint8), "uint8")
        return Dataset(out.astype(np.float32))


def sift_like(n_base: int, n_query: int, d: int = 128, seed: int = 0, **kw) -> tuple[Dataset, Dataset]:
    """Base and query sets drawn independently from one seeded mixture."""
    model = MixtureModel(d=d, seed=seed, **kw)
    ss = np.random.SeedSequence(seed).spawn(2)
    base = model.sample(n_base, int(ss[0].generate_state(1)[0]))
    queries = model.sample(n_query, int(ss[1].generate_state(1)[0]))
    return base, queries
