"""Timing benchmarks for the token mixers and the toy ablation ladder."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from .backbone import VARIANTS, FEATDenoiser, ModelConfig
from .channel_attention import channel_mix
from .data import gen_dataset
from .numerics import RngStream
from .training import TrainConfig, data_spec, train
from .wkv import softmax_attention, wkv_scan

__all__ = [
    "KERNELS",
    "BenchRow",
    "time_call",
    "bench",
    "doubling_ratios",
    "write_bench_csv",
    "bench_model",
    "AblationReport",
    "ablate",
]

log = logging.getLogger(__name__)

BENCH_FIELDS = ("kernel", "T", "D", "median_ns", "p10_ns", "p90_ns")


def _wkv_case(T, D, stream):
    k, v = (torch.from_numpy(stream.normal((T, D), np.float32)) for _ in range(2))
    w = torch.from_numpy(stream.normal((D,), np.float32))
    u = torch.from_numpy(stream.normal((D,), np.float32))
    return lambda: wkv_scan(k, v, w, u)


def _channel_case(T, D, stream):
    q, k, v = (torch.from_numpy(stream.normal((T, D), np.float32)) for _ in range(3))
    tau = torch.zeros(())
    return lambda: channel_mix(q, k, v, tau)


def _softmax_case(T, D, stream):
    q, k, v = (torch.from_numpy(stream.normal((T, D), np.float32)) for _ in range(3))
    return lambda: softmax_attention(q, k, v)


KERNELS: dict[str, Callable] = {
    "wkv_scan": _wkv_case,
    "channel_attention": _channel_case,
    "softmax_attention": _softmax_case,
}


@dataclass
class BenchRow:
    kernel: str
    T: int
    D: int
    median_ns: float
    p10_ns: float
    p90_ns: float
    note: str = ""


def time_call(fn: Callable[[], object], reps: int = 30, warmup: int = 3) -> np.ndarray:
    """Wall-clock nanoseconds of ``reps`` calls after ``warmup`` untimed ones."""
    with torch.no_grad():
        for _ in range(warmup):
            fn()
        out = np.empty(reps)
        for i in range(reps):
            start = time.perf_counter_ns()
            fn()
            out[i] = time.perf_counter_ns() - start
    return out


def bench(
    kernels: Iterable[str] = tuple(KERNELS),
    sizes: Sequence[int] = (1024, 2048, 4096, 8192),
    D: int = 16,
    reps: int = 30,
    seed: int = 0,
    threads: int = 1,
) -> list[BenchRow]:
    """Median/p10/p90 timings per kernel and sequence length.

    Runs single-threaded by default. A size whose median is under 100 timer
    ticks is reported with a note and should be ignored.
    """
    if reps < 30:
        raise ValueError("at least 30 repetitions are required")
    previous = torch.get_num_threads()
    torch.set_num_threads(threads)
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9
    rows = []
    try:
        for name in kernels:
            stream = RngStream(seed).spawn(name)
            for T in sizes:
                samples = time_call(KERNELS[name](T, D, stream), reps=reps)
                p10, med, p90 = np.percentile(samples, [10, 50, 90])
                note = "excluded: below timer resolution" if med < 100 * resolution_ns else ""
                rows.append(BenchRow(name, T, D, float(med), float(p10), float(p90), note))
                log.info("%s T=%d median %.0f ns", name, T, med)
    finally:
        torch.set_num_threads(previous)
    return rows


def doubling_ratios(rows: Sequence[BenchRow], min_T: int = 0) -> dict[str, list[tuple[int, float]]]:
    """``{kernel: [(T, median(2T) / median(T)), ...]}`` for consecutive doublings with T >= min_T."""
    out: dict[str, list] = {}
    by_kernel: dict[str, dict[int, float]] = {}
    for r in rows:
        if not r.note:
            by_kernel.setdefault(r.kernel, {})[r.T] = r.median_ns
    for name, med in by_kernel.items():
        out[name] = [(T, med[2 * T] / med[T]) for T in sorted(med) if T >= min_T and 2 * T in med]
    return out


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_FIELDS)
        for r in rows:
            if not r.note:
                writer.writerow([r.kernel, r.T, r.D, f"{r.median_ns:.0f}", f"{r.p10_ns:.0f}", f"{r.p90_ns:.0f}"])


def bench_model(config: ModelConfig, frame_counts: Sequence[int], reps: int = 30, batch: int = 1, seed: int = 0) -> list[tuple[int, float]]:
    """Median forward time of the denoiser as the clip length (and token count) grows.

    Returns ``[(n_tokens, median_ns), ...]``.
    """
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    out = []
    try:
        for frames in frame_counts:
            cfg = config.replace(frames=frames)
            model = FEATDenoiser(cfg, seed=seed).eval()
            stream = RngStream(seed).spawn(f"bench-model-{frames}")
            x = torch.from_numpy(stream.normal((batch, frames, cfg.channels, cfg.height, cfg.width), np.float32))
            t = torch.full((batch,), max(1, cfg.timesteps // 2))
            samples = time_call(lambda: model(x, t), reps=reps)
            out.append((cfg.n_tokens, float(np.median(samples))))
    finally:
        torch.set_num_threads(previous)
    return out


@dataclass
class AblationReport:
    """Final validation epsilon-MSE per (variant, seed); lower is better."""

    results: dict = field(default_factory=dict)  # {variant: {seed: mse}}

    def mean(self, variant: str) -> float:
        return float(np.mean(list(self.results[variant].values())))

    def ordering_holds(self) -> bool:
        """Aggregate ladder baseline >= wkv >= wkv_channel >= full (in mean MSE)."""
        names = [v for v in VARIANTS if v in self.results]
        means = [self.mean(v) for v in names]
        return all(a >= b for a, b in zip(means, means[1:]))

    def wins(self, better: str = "full", worse: str = "baseline") -> int:
        return sum(
            self.results[better][s] < self.results[worse][s] for s in self.results[better] if s in self.results[worse]
        )

    def rows(self) -> list[tuple[str, int, float]]:
        return [(v, s, m) for v in self.results for s, m in sorted(self.results[v].items())]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "seed", "val_eps_mse"])
            for v, s, m in self.rows():
                writer.writerow([v, s, repr(m)])


def ablate(
    config: TrainConfig,
    variants: Sequence[str] = VARIANTS,
    seeds: Sequence[int] = (0, 1, 2),
) -> AblationReport:
    """Train every variant under the same budget, data and seeds."""
    report = AblationReport()
    for seed in seeds:
        cfg = config.replace(seed=seed)
        train_clips = np.stack(gen_dataset(data_spec(cfg, seed), cfg.n_train))
        val_clips = np.stack(gen_dataset(data_spec(cfg, seed + 1_000_003), cfg.n_val))
        for variant in variants:
            result = train(cfg.replace(variant=variant), train_clips=train_clips, val_clips=val_clips)
            report.results.setdefault(variant, {})[seed] = result.val_mse
            log.info("ablation seed %d %s: %.4f", seed, variant, result.val_mse)
    return report
