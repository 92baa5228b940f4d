"""Clustered synthetic kernels used by the scaling benchmarks."""

from dataclasses import dataclass

import numpy as np

from .kernel import KernelFactors, orthogonalize
from .rng import stream


@dataclass(frozen=True)
class SyntheticSpec:
    M: int
    K: int
    clusters: int = 100
    poisson_mean: float = 5.0
    seed: int = 0
    ondpp: bool = False

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be a positive even integer, got {self.K}")
        if self.M < 2 * self.K:
            raise ValueError(f"need M >= 2K, got M={self.M}, K={self.K}")
        if self.clusters < 1 or self.poisson_mean <= 0:
            raise ValueError("clusters must be >= 1 and poisson_mean > 0")


def largest_remainder(weights, total):
    """Non-negative integers proportional to ``weights`` that sum to ``total``."""
    w = np.asarray(weights, dtype=np.float64)
    quota = w / w.sum() * total
    out = np.floor(quota).astype(np.int64)
    short = int(total - out.sum())
    if short:
        order = np.argsort(-(quota - out), kind="stable")
        out[order[:short]] += 1
    return out


def cluster_sizes(spec, rng):
    t = rng.poisson(spec.poisson_mean, spec.clusters)
    if t.sum() == 0:
        t = np.ones_like(t)
    return largest_remainder(t, spec.M)


def generate_synthetic(spec: SyntheticSpec) -> KernelFactors:
    """Rows of ``[V, B]`` drawn around random cluster centres; ``D`` standard normal."""
    rng = stream(spec.seed, "synthetic")
    r = 2 * spec.K
    centers = rng.normal(0.0, np.sqrt(1.0 / r), (spec.clusters, r))
    sizes = cluster_sizes(spec, rng)
    rows = np.repeat(centers, sizes, axis=0)
    rows += rng.standard_normal(rows.shape)
    D = rng.standard_normal((spec.K, spec.K))
    V, B = rows[:, : spec.K], rows[:, spec.K :]
    if spec.ondpp:
        return orthogonalize(V, B, D)
    return KernelFactors(V, B, D)
