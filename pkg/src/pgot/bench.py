"""Efficiency benchmarking: wall time and allocated bytes versus mesh size."""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Rng, Tape
from .model import ModelConfig, PgotModel
from .training import relative_l2_loss

CSV_COLUMNS = ["n", "fwd_us_med", "fwd_us_min", "fwd_us_max", "fwdbwd_us_med", "peak_bytes", "config_hash"]


@dataclass
class BenchRecord:
    n: int
    fwd_us_med: float
    fwd_us_min: float
    fwd_us_max: float
    fwdbwd_us_med: float
    peak_bytes: int
    config_hash: str

    def row(self) -> list:
        return [
            self.n,
            f"{self.fwd_us_med:.1f}",
            f"{self.fwd_us_min:.1f}",
            f"{self.fwd_us_max:.1f}",
            f"{self.fwdbwd_us_med:.1f}",
            self.peak_bytes,
            self.config_hash,
        ]


def _random_cloud(rng: Rng, n: int, d: int, d_a: int):
    coords = rng.uniform(0.0, 1.0, (n, d)).astype(np.float32)
    a = rng.uniform(-1.0, 1.0, (n, d_a)).astype(np.float32)
    return a, coords


def _time_us(fn, repeats: int) -> tuple[float, float, float]:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e6)
    resolution_us = time.get_clock_info("perf_counter").resolution * 1e6
    if min(times) < 50 * resolution_us:
        warnings.warn(
            f"measurement {min(times):.2f}us is below 50 timer ticks; timings may be noisy",
            RuntimeWarning,
        )
    return float(np.median(times)), float(min(times)), float(max(times))


def run_bench(config: ModelConfig, sizes: list[int], repeats: int = 5, seed: int = 1234) -> list[BenchRecord]:
    """One record per mesh size N for the given configuration.

    ``peak_bytes`` is the cumulative tensor bytes allocated by the engine
    during one forward pass (not OS-level RSS).
    """
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    config.validate()
    model = PgotModel(config)
    rng = Rng(seed)
    records = []
    for n in sizes:
        a, coords = _random_cloud(rng, n, config.d, config.d_a)
        model.predict(a, coords)  # warm-up
        med, lo, hi = _time_us(lambda: model.predict(a, coords), repeats)

        def fwd_bwd():
            with Tape() as tape:
                pred = model.predict(a, coords)
                loss = relative_l2_loss(pred, np.ones_like(pred.data))
                tape.backward(loss)
            model.zero_grad()

        fb_med, _, _ = _time_us(fwd_bwd, repeats)
        engine.reset_alloc_stats()
        model.predict(a, coords)
        peak = engine.alloc_stats()["bytes"]
        records.append(
            BenchRecord(
                n=n,
                fwd_us_med=med,
                fwd_us_min=lo,
                fwd_us_max=hi,
                fwdbwd_us_med=fb_med,
                peak_bytes=peak,
                config_hash=config.hash(),
            )
        )
    return records


def write_bench_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record.row())
