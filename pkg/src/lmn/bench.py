"""Scaling harness: wall time, peak allocation, and counted operations.

Forward timing uses a monotonic clock, one warm-up run, and the median of
R >= 3 reps. "Peak bytes" is the engine's live-tensor allocation counter
bracketing the call: the peak of bytes newly allocated during the run
(recurrent state plus activations; pre-existing weights excluded), a
deterministic stand-in for device memory. Sequential rows measure recurrent
stepping (slot state or KV cache as the only carried state); parallel rows
measure the one-shot forward. Out-of-memory becomes a failure row, not a
crash.
"""

from __future__ import annotations

import csv
import ctypes
import ctypes.util
import math
import time
from dataclasses import dataclass, fields

import numpy as np

from .counters import COUNTER, OpCounter
from .model import ModelConfig, build_model
from .tensor import ALLOC, make_rng, no_grad

_M_MMAP_THRESHOLD = -3
_libc = None


def _reset_allocator():
    """Put glibc malloc into a canonical state so measurements do not depend
    on the allocation history of the process.

    Freeing a very large block makes glibc raise its mmap threshold
    dynamically, after which 8-32 MB numpy buffers come from the brk heap
    instead of fresh mmaps, and retained warm arena pages speed up small
    allocations; both make medians depend on what ran earlier. Pinning the
    threshold disables the sliding behaviour and malloc_trim releases the
    retained pages.
    """
    global _libc
    if _libc is None:
        try:
            _libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
            _libc.mallopt(_M_MMAP_THRESHOLD, 128 * 1024)
        except (OSError, AttributeError):
            _libc = False  # non-glibc platform: accept the default behaviour
    if _libc:
        _libc.malloc_trim(0)

CSV_COLUMNS = ["variant", "mode", "L", "reps", "median_seconds", "peak_bytes",
               "score_macs", "summarizer_ops", "status"]


@dataclass
class BenchRecord:
    variant: str
    mode: str
    L: int
    reps: int
    median_seconds: float
    peak_bytes: int
    score_macs: int
    summarizer_ops: int
    status: str = "ok"

    def row(self):
        return [getattr(self, f.name) for f in fields(self)]


def compression_factor(n: int) -> float:
    """Quadratic-vs-logarithmic cost ratio n^2 / log2(n)."""
    if n < 2:
        raise ValueError("compression factor needs n >= 2")
    return n * n / math.log2(n)


def bench_model(variant: str, L: int, embed: int = 32, banks: int = 2, seed: int = 0):
    """Fresh random-weight model sized for sequence length L (one block)."""
    cfg = ModelConfig(variant=variant, vocab_size=65, embed=embed, max_seq_len=L,
                      banks=banks, n_blocks=1, n_heads=1, seed=seed)
    return build_model(cfg)


def _run_forward(model, tokens, mode):
    with no_grad():
        out = model.forward(tokens, mode=mode)
    return out


def _run_stepping(model, tokens):
    state = model.start_state()
    with no_grad():
        for tok in tokens[0]:
            model.step(state, int(tok))


def time_forward(model, L: int, mode: str, reps: int = 3, seed: int = 0) -> BenchRecord:
    """Median wall time over reps (after one warm-up) for one forward pass.

    mode="parallel" is the one-shot construction; mode="sequential" runs the
    recurrent stepping path token by token, the inference configuration.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    _reset_allocator()
    rng = make_rng(seed)
    tokens = rng.integers(0, model.config.vocab_size, size=(1, L))
    runner = _run_stepping if mode == "sequential" else _run_forward
    args = (model, tokens) if mode == "sequential" else (model, tokens, mode)
    try:
        COUNTER.reset()
        runner(*args)  # warm-up; also the counted run (counts repeat per run)
        counts = COUNTER.snapshot()
        times = []
        peak = 0
        for _ in range(reps):
            COUNTER.reset()
            start_live = ALLOC.live_bytes
            ALLOC.reset_peak()
            t0 = time.monotonic()
            runner(*args)
            times.append(time.monotonic() - t0)
            # bytes newly live during the call: state + activations, without
            # whatever the process already held (weights, other fixtures)
            peak = max(peak, ALLOC.peak_bytes - start_live)
        return BenchRecord(model.config.variant, mode, L, reps,
                           float(np.median(times)), peak,
                           counts["score_macs"], counts["summarizer_ops"])
    except MemoryError:
        return BenchRecord(model.config.variant, mode, L, reps, float("nan"), 0, 0, 0,
                           status="failed")


def loglog_slope(lengths, seconds) -> float:
    """Least-squares slope of log(time) against log(L)."""
    xs = np.log(np.asarray(lengths, dtype=np.float64))
    ys = np.log(np.asarray(seconds, dtype=np.float64))
    return float(np.polyfit(xs, ys, 1)[0])


def sweep(lengths, variants, out_path, modes=("parallel", "sequential"),
          reps: int = 3, embed: int = 32, banks: int = 2, seed: int = 0,
          log=None) -> list[BenchRecord]:
    """Cross product of lengths x variants x modes; CSV rows appended as each
    measurement lands, slope fits in a comment footer."""
    records = []
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        f.flush()
        for variant in variants:
            for L in lengths:
                model = bench_model(variant, L, embed=embed, banks=banks, seed=seed)
                for mode in modes:
                    rec = time_forward(model, L, mode, reps=reps, seed=seed)
                    records.append(rec)
                    w.writerow(rec.row())
                    f.flush()
                    if log:
                        log(f"{variant} {mode} L={L}: {rec.median_seconds:.4f}s "
                            f"peak={rec.peak_bytes}B status={rec.status}")
                del model
        for variant in variants:
            for mode in modes:
                sub = [r for r in records
                       if r.variant == variant and r.mode == mode and r.status == "ok"]
                if len(sub) >= 2:
                    s = loglog_slope([r.L for r in sub], [r.median_seconds for r in sub])
                    f.write(f"# slope variant={variant} mode={mode} slope={s:.3f}\n")
    return records


def lmn_score_mac_closed_form(L: int, embed: int, banks: int, n_blocks: int = 1) -> int:
    """E * nb * sum over positions of (popcount(t) + 1), per batch item."""
    t = np.arange(L, dtype=np.uint64)
    popcounts = np.array([bin(int(x)).count("1") for x in t])
    return int(embed * banks * n_blocks * int((popcounts + 1).sum()))


def baseline_score_mac_closed_form(L: int, embed: int, n_blocks: int = 1) -> int:
    """E * L * (L+1) / 2 causal terms, per batch item."""
    return int(embed * n_blocks * L * (L + 1) // 2)
