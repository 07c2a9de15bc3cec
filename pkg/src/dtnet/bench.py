"""Throughput of first-layer surface construction plus encoding on synthetic streams."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autoencoder import Autoencoder
from .events import EventStream, SurfaceBuilder


def synthetic_stream(n_events: int, width: int = 34, height: int = 34,
                     rate_hz: float = 1e6, seed: int = 0) -> EventStream:
    """Uniformly scattered events with Poisson arrival times."""
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1e6 / rate_hz, n_events)
    t = np.floor(np.cumsum(gaps)).astype(np.int64)
    return EventStream(width, height, rng.integers(0, width, n_events),
                       rng.integers(0, height, n_events), t,
                       rng.choice(np.array([-1, 1]), n_events))


@dataclass
class BenchResult:
    radius: int
    n_events: int
    seconds: float
    events_per_s: float
    mean_latency_us: float
    p99_latency_us: float

    def as_row(self):
        return self.__dict__.copy()

    def line(self):
        return (f"radius={self.radius} events={self.n_events} seconds={self.seconds:.3f} "
                f"events_per_s={self.events_per_s:.0f} mean_latency_us={self.mean_latency_us:.3f} "
                f"p99_latency_us={self.p99_latency_us:.3f}")


def run_bench(stream: EventStream, radius: int, tau: float, code_dim: int,
              chunk: int = 4096, seed: int = 0) -> BenchResult:
    """Time surfaces + codes for every event, processed in chunks.

    Latency is the per-event cost of each chunk; p99 is taken over chunks.
    The timestamp map carries across chunks exactly as in one pass.
    """
    ae = Autoencoder(2 * (2 * radius + 1) ** 2, code_dim, seed=seed)
    n = len(stream)
    builder = SurfaceBuilder(stream.width, stream.height, radius, tau)
    chans = (stream.p > 0).astype(np.int64)
    # compile outside the timed region
    SurfaceBuilder(stream.width, stream.height, radius, tau).process([0], [0], [0], [0])
    if n == 0:
        return BenchResult(radius, 0, 0.0, 0.0, 0.0, 0.0)
    per_event = []
    start = time.perf_counter()
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        t0 = time.perf_counter()
        ae.encode(builder.process(stream.x[lo:hi], stream.y[lo:hi], stream.t[lo:hi], chans[lo:hi]))
        per_event.append((time.perf_counter() - t0) / (hi - lo))
    seconds = time.perf_counter() - start
    lat = np.array(per_event) * 1e6
    return BenchResult(radius, n, seconds, n / seconds, seconds / n * 1e6,
                       float(np.percentile(lat, 99)))
