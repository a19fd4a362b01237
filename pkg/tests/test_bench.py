import csv

import numpy as np
import pytest

from indrnn.bench import (
    CSV_HEADER,
    INDRNN_FUSED,
    MIN_REPS,
    VANILLA_MATMUL,
    BenchResult,
    recurrent_flops,
    scaling_fit,
    time_recurrent_step,
    write_csv,
)
from indrnn.errors import ConfigError

WIDTHS = (64, 128, 256, 512, 1024)


def synthetic(kind, f):
    return [BenchResult(kind, N, 50, 32, 30, f(N), 0.0) for N in WIDTHS]


def test_fit_linear():
    assert abs(scaling_fit(synthetic("a", lambda N: 3e-3 * N))["a"] - 1.0) < 1e-6


def test_fit_quadratic():
    assert abs(scaling_fit(synthetic("b", lambda N: 1e-5 * N * N))["b"] - 2.0) < 1e-6


def test_fit_rejects_degenerate_inputs():
    with pytest.raises(ConfigError):
        scaling_fit(synthetic("c", lambda N: 1.0))
    with pytest.raises(ConfigError):
        scaling_fit([BenchResult("d", N, 50, 32, 30, 1.0 + N, 0) for N in (64, 128, 256)])
    with pytest.raises(ConfigError):
        scaling_fit([BenchResult("e", N, 50, 32, 30, 1.0 + N, 0) for N in (64, 80, 96, 128)])
    with pytest.raises(ConfigError):
        scaling_fit(synthetic("f", lambda N: 0.0))


def test_flop_counts():
    assert recurrent_flops(INDRNN_FUSED, 512) == 3 * 512
    assert recurrent_flops(VANILLA_MATMUL, 512) == 2 * 512 * 512 + 2 * 512
    with pytest.raises(ConfigError):
        recurrent_flops("LSTM", 4)


def test_reps_floor():
    with pytest.raises(ConfigError):
        time_recurrent_step(INDRNN_FUSED, 8, reps=MIN_REPS - 1)


@pytest.mark.parametrize("kind", [INDRNN_FUSED, VANILLA_MATMUL])
def test_timing_result_fields(kind):
    r = time_recurrent_step(kind, 16, T=10, B=4, reps=MIN_REPS)
    assert r.median_ms > 0 and r.iqr_ms >= 0 and r.reps == MIN_REPS
    assert (r.kind, r.N, r.T, r.B) == (kind, 16, 10, 4)


@pytest.mark.parametrize("kind", [INDRNN_FUSED, VANILLA_MATMUL])
def test_timed_region_does_not_allocate_buffers(kind):
    B, N = 32, 256
    r = time_recurrent_step(kind, N, T=20, B=B, reps=MIN_REPS, probe_alloc=True)
    assert 0 <= r.alloc_bytes < B * N * 8


def test_time_is_linear_in_T():
    a = time_recurrent_step(VANILLA_MATMUL, 128, T=40, B=16, reps=MIN_REPS)
    b = time_recurrent_step(VANILLA_MATMUL, 128, T=80, B=16, reps=MIN_REPS)
    assert 1.3 < b.median_ms / a.median_ms < 3.0


def test_csv_schema(tmp_path):
    rs = synthetic(INDRNN_FUSED, lambda N: 0.5)
    write_csv(rs, tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert tuple(rows[0]) == CSV_HEADER == ("kind", "N", "T", "B", "reps", "median_ms", "iqr_ms")
    assert len(rows) == 1 + len(WIDTHS) and rows[1][0] == INDRNN_FUSED
    assert float(rows[1][5]) == 0.5
