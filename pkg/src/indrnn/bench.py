"""Timing harness: the fused elementwise IndRNN recurrence against the
matrix-product recurrence of a vanilla tanh RNN.

Only the loop over time is timed. The input projection is precomputed for
both kinds and every buffer is allocated before the clock starts. Run with a
single BLAS thread (INDRNN_THREADS=1) for stable numbers.
"""
import csv
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layer import _ACT_CODE, fused_forward
from .numerics import seed_rng

INDRNN_FUSED = "IndRnnFused"
VANILLA_MATMUL = "VanillaMatmul"
KINDS = (INDRNN_FUSED, VANILLA_MATMUL)
CSV_HEADER = ("kind", "N", "T", "B", "reps", "median_ms", "iqr_ms")
MIN_REPS = 30


@dataclass
class BenchResult:
    kind: str
    N: int
    T: int
    B: int
    reps: int
    median_ms: float
    iqr_ms: float
    alloc_bytes: int = -1  # peak traced allocation inside the timed region, -1 if not probed

    def row(self):
        return (self.kind, self.N, self.T, self.B, self.reps,
                f"{self.median_ms:.6f}", f"{self.iqr_ms:.6f}")


def recurrent_flops(kind, N):
    """Per-step, per-sample floating point operations of the recurrent part."""
    if kind == INDRNN_FUSED:
        return 3 * N
    if kind == VANILLA_MATMUL:
        return 2 * N * N + 2 * N
    raise ConfigError(f"unknown bench kind {kind!r}", "kind")


def _make_runner(kind, N, T, B, seed):
    rng = seed_rng(seed)
    z = rng.normal((T, B, N)) * 0.1
    states = np.zeros((T + 1, B, N))
    if kind == INDRNN_FUSED:
        u = rng.uniform(0.0, 1.0, size=N)
        pre = np.empty((T, B, N))
        act = _ACT_CODE["relu"]
        fused_forward(z, u, act, pre, states)  # compile outside the clock

        def run():
            fused_forward(z, u, act, pre, states)
    elif kind == VANILLA_MATMUL:
        q, r = np.linalg.qr(rng.normal((N, N)))
        Ut = np.ascontiguousarray((0.9 * q * np.sign(np.diag(r))).T)
        acc = np.empty((B, N))

        def run():
            for t in range(T):
                np.matmul(states[t], Ut, out=acc)
                np.add(acc, z[t], out=acc)
                np.tanh(acc, out=states[t + 1])
    else:
        raise ConfigError(f"unknown bench kind {kind!r}", "kind")
    return run


def time_recurrent_step(kind, N, T=50, B=32, reps=MIN_REPS, warmup=3, seed=0, probe_alloc=False):
    """Median and interquartile range over ``reps`` timed passes of T steps."""
    if reps < MIN_REPS:
        raise ConfigError(f"reps must be >= {MIN_REPS}, got {reps}", "reps")
    if min(N, T, B) < 1:
        raise ConfigError("N, T and B must be >= 1")
    run = _make_runner(kind, N, T, B, seed)
    for _ in range(warmup):
        run()
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        run()
        times[i] = time.perf_counter() - t0
    alloc = -1
    if probe_alloc:
        tracemalloc.start()
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        run()
        alloc = tracemalloc.get_traced_memory()[1] - base
        tracemalloc.stop()
    q1, med, q3 = np.percentile(times * 1e3, [25, 50, 75])
    return BenchResult(kind, N, T, B, reps, float(med), float(q3 - q1), alloc)


def scaling_fit(results):
    """Least-squares slope of log(median time) against log(N), per kind."""
    by_kind = {}
    for r in results:
        by_kind.setdefault(r.kind, []).append(r)
    out = {}
    for kind, rs in by_kind.items():
        N = np.array([r.N for r in rs], dtype=np.float64)
        t = np.array([r.median_ms for r in rs], dtype=np.float64)
        if len(np.unique(N)) < 4 or N.max() < 8 * N.min():
            raise ConfigError(f"{kind}: need at least 4 widths spanning 8x, got {sorted(N)}")
        if (t <= 0).any() or not np.isfinite(t).all():
            raise ConfigError(f"{kind}: timings must be positive and finite")
        x, y = np.log(N), np.log(t)
        if np.ptp(y) == 0:
            raise ConfigError(f"{kind}: timings have zero variance; fit is degenerate")
        out[kind] = float(np.polyfit(x, y, 1)[0])
    return out


def run_sweep(widths=(64, 128, 256, 512, 1024), T=50, B=32, reps=MIN_REPS, kinds=KINDS, seed=0):
    return [time_recurrent_step(k, N, T, B, reps, seed=seed) for N in widths for k in kinds]


def write_csv(results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in results:
            w.writerow(r.row())
