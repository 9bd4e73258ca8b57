"""Wall-clock comparison of the linear-time scan against dense quadratic attention."""
from __future__ import annotations

import contextlib
import csv
import os
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

ATTN_CHUNK = 64
ATTN_MAX_REPS = 3


@dataclass(frozen=True)
class BenchRow:
    length: int
    scan_ns: int
    attn_ns: int


def worker_limit() -> int:
    """Thread cap for BLAS pools; ``MDSF_THREADS`` overrides the default of one."""
    raw = os.environ.get("MDSF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MDSF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MDSF_THREADS must be a positive integer, got {raw!r}")
    return n


@contextlib.contextmanager
def pinned_threads():
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=worker_limit()):
        yield


def scan_problem(length: int, channels: int = 16, state: int = 16, seed: int = 0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((length, channels)),
            rng.uniform(0.05, 1.0, (length, channels)),
            -np.tile(np.arange(1.0, state + 1), (channels, 1)),
            rng.standard_normal((length, state)),
            rng.standard_normal((length, state)),
            rng.standard_normal(channels))


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, chunk: int = ATTN_CHUNK) -> np.ndarray:
    """Softmax attention over every pair of the ``L`` tokens, ``chunk`` query rows at a time."""
    L, C = q.shape
    out = np.empty_like(v)
    scale = 1.0 / np.sqrt(C)
    for s in range(0, L, chunk):
        logits = (q[s:s + chunk] @ k.T) * scale
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        out[s:s + chunk] = logits @ v
    return out


def _median_ns(fn, reps: int) -> int:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(statistics.median(times))


def time_scan(length: int, reps: int, backend: str | None = None, channels: int = 16, state: int = 16) -> int:
    args = scan_problem(length, channels, state)
    kernels.scan_forward(*args, store_states=False, backend=backend)  # warm-up
    return _median_ns(lambda: kernels.scan_forward(*args, store_states=False, backend=backend), reps)


def time_attention(length: int, reps: int, channels: int = 16) -> int:
    rng = np.random.default_rng(1)
    q, k, v = (rng.standard_normal((length, channels)) for _ in range(3))
    return _median_ns(lambda: dense_attention(q, k, v), min(reps, ATTN_MAX_REPS))


def scan_bench(lengths, reps: int = 9, backend: str | None = None, attention: bool = True) -> list[BenchRow]:
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    rows = []
    with pinned_threads():
        for L in lengths:
            if L < 1:
                raise ConfigError(f"lengths must be positive, got {L}")
            rows.append(BenchRow(L, time_scan(L, reps, backend), time_attention(L, reps) if attention else 0))
    return rows


def doubling_ratios(values) -> list[float]:
    return [b / a if a else float("nan") for a, b in zip(values, values[1:])]


def write_csv(rows, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["length", "scan_ns", "attn_ns"])
    for r in rows:
        w.writerow([r.length, r.scan_ns, r.attn_ns])
