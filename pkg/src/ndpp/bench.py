"""Wall-clock benchmarks of both samplers on synthetic kernels."""

import csv
import gc
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .cholesky import sample_cholesky
from .kernel import build_proposal, marginal_core, rejection_constant
from .rejection import RejectionSampler, RejectionStats, sample_reject
from .rng import stream
from .synthetic import SyntheticSpec, generate_synthetic
from .tree import construct_tree

CSV_COLUMNS = ("algo", "M", "K", "phase", "mean_s", "ci95_s", "rejections_mean", "tree_bytes")
ALGORITHMS = ("cholesky", "rejection")

# Buckets of 256 items keep the K=100 tree near 650 MB at M=2^18.
BENCH_LEAF_SIZE = 256


@dataclass(frozen=True)
class BenchRecord:
    algo: str
    M: int
    K: int
    phase: str
    reps: int
    mean_s: float
    ci95_s: float
    rejections_mean: float = float("nan")
    tree_bytes: int = 0

    def row(self):
        return {
            "algo": self.algo,
            "M": self.M,
            "K": self.K,
            "phase": self.phase,
            "mean_s": f"{self.mean_s:.6g}",
            "ci95_s": f"{self.ci95_s:.6g}",
            "rejections_mean": f"{self.rejections_mean:.6g}",
            "tree_bytes": self.tree_bytes,
        }


BOOTSTRAP_MAX = 1000


def mean_ci(times, seed=0):
    """Mean and half-width of a 95% interval for the mean.

    Bootstrap for the handful of benchmark reps; the normal approximation
    above ``BOOTSTRAP_MAX`` timings, where resampling would be slow.
    """
    x = np.asarray(times, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0:
        return float(x.mean()), (0.0 if x.size >= 2 else float("nan"))
    if x.size > BOOTSTRAP_MAX:
        return float(x.mean()), float(1.96 * x.std(ddof=1) / np.sqrt(x.size))
    res = stats.bootstrap(
        (x,), np.mean, confidence_level=0.95, method="percentile",
        n_resamples=2000, random_state=np.random.default_rng(seed),
    )
    ci = res.confidence_interval
    return float(x.mean()), float((ci.high - ci.low) / 2)


def _record(algo, f, phase, times, **extra):
    mean, ci = mean_ci(times)
    return BenchRecord(algo, f.M, f.K, phase, len(times), mean, ci, **extra)


def bench_cholesky(kernels, reps, rngs):
    """Time one full sampler run (marginal core plus the sweep) per repetition.

    ``kernels`` maps ``M`` to factors.  Repetitions are interleaved across
    ``M`` in rounds so that slow drift in machine speed hits every size
    alike instead of biasing the doubling ratios.  ``Z^T Z`` is cached on
    the factors, so it is computed once before timing starts.
    """
    for f in kernels.values():
        f.gram
    times = {M: [] for M in kernels}
    for _ in range(reps):
        for M, f in kernels.items():
            t0 = time.perf_counter()
            sample_cholesky(f, rngs[M], core=marginal_core(f))
            times[M].append(time.perf_counter() - t0)
    return [_record("cholesky", f, "sample", times[M]) for M, f in kernels.items()]


def bench_rejection(f, reps, rng, leaf_size=BENCH_LEAF_SIZE):
    spectral, build = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        proposal = build_proposal(f)
        spectral.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        tree = construct_tree(proposal.eigvecs, leaf_size=leaf_size)
        build.append(time.perf_counter() - t0)
        if len(build) < reps:
            del tree, proposal
            gc.collect()
    s = RejectionSampler(f, proposal, tree, rejection_constant(f, proposal))
    st = RejectionStats()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        sample_reject(s, rng, stats=st)
        times.append(time.perf_counter() - t0)
    nbytes = tree.nbytes
    return [
        _record("rejection", f, "spectral", spectral),
        _record("rejection", f, "tree", build, tree_bytes=nbytes),
        _record("rejection", f, "sample", times, rejections_mean=st.rejections / st.draws,
                tree_bytes=nbytes),
    ]


def run_bench(Ms, K, algos=ALGORITHMS, reps=3, seed=0, leaf_size=BENCH_LEAF_SIZE,
              ondpp=False, on_record=None):
    """Benchmark each algorithm over the sizes ``Ms``.

    ``on_record`` sees every record as soon as it is produced.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    unknown = set(algos) - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"unknown algorithms: {sorted(unknown)}")
    Ms = sorted(Ms)
    out = []

    def emit(recs):
        for r in recs:
            out.append(r)
            if on_record is not None:
                on_record(r)

    def kernel(M):
        return generate_synthetic(SyntheticSpec(M, K, seed=seed, ondpp=ondpp))

    if "cholesky" in algos:
        kernels = {M: kernel(M) for M in Ms}
        rngs = {M: stream(seed, f"bench/cholesky/{M}") for M in Ms}
        emit(bench_cholesky(kernels, reps, rngs))
        del kernels
        gc.collect()
    if "rejection" in algos:
        for M in Ms:
            f = kernel(M)
            emit(bench_rejection(f, reps, stream(seed, f"bench/rejection/{M}"), leaf_size))
            del f
            gc.collect()
    return out


def write_csv(records, fh):
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.row())


def doubling_ratios(records, algo, phase="sample"):
    """Consecutive ``mean_s`` ratios for one ``(algo, phase)``, sorted by M."""
    rs = sorted((r for r in records if r.algo == algo and r.phase == phase), key=lambda r: r.M)
    return [b.mean_s / a.mean_s for a, b in zip(rs, rs[1:])]


def powers_of_two(lo, hi):
    return [1 << e for e in range(int(math.log2(lo)), int(math.log2(hi)) + 1)]
