"""Events, per-pixel timestamp memory and exponential-decay time surfaces.

Streams are held column-wise in numpy arrays (x, y, t, p) because the
per-event loops run under numba; :class:`Event` is the scalar view used by the
incremental API and in tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np
from numba import njit

from .errors import BoundsError, ConfigError, OrderingError

OFF = -1
ON = 1

# Sentinel for "no event yet"; timestamps are non-negative integers.
NEVER = -1


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int  # -1 (OFF) or +1 (ON)


def polarity_index(p: int) -> int:
    """Map polarity -1/+1 to plane index 0/1."""
    if p == ON:
        return 1
    if p == OFF:
        return 0
    raise ValueError(f"polarity must be -1 or +1, got {p!r}")


@dataclass
class EventStream:
    """Time-ordered events of one recording, stored as parallel arrays."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        self.p = np.ascontiguousarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event column lengths differ")

    @classmethod
    def from_events(cls, events, width, height, label=None) -> "EventStream":
        arr = np.array([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], label)

    @classmethod
    def empty(cls, width, height, label=None) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z, z, z, label)

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.label == other.label
            and all(
                np.array_equal(getattr(self, c), getattr(other, c)) for c in "xytp"
            )
        )

    def validate(self, slack: int = 0) -> None:
        """Raise if any event is off-sensor, has a bad polarity, or goes back in time."""
        if len(self) == 0:
            return
        bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise BoundsError(
                f"event {i} at ({self.x[i]}, {self.y[i]}) outside "
                f"{self.width}x{self.height} sensor"
            )
        if not np.isin(self.p, (OFF, ON)).all():
            i = int(np.flatnonzero(~np.isin(self.p, (OFF, ON)))[0])
            raise ValueError(f"event {i} has polarity {self.p[i]}")
        if (self.t < 0).any():
            raise OrderingError("negative timestamp")
        running = np.maximum.accumulate(self.t)
        late = self.t[1:] < running[:-1] - slack
        if late.any():
            i = int(np.flatnonzero(late)[0]) + 1
            raise OrderingError(
                f"event {i} at t={self.t[i]} precedes t={running[i - 1]} "
                f"by more than slack {slack}"
            )


class TimestampMap:
    """Most recent event time per (x, y, channel).

    Camera streams use two channels indexed by polarity; feature-event streams
    of deeper layers use one channel per code component.
    """

    def __init__(self, width: int, height: int, n_channels: int = 2, slack: int = 0):
        self.width = width
        self.height = height
        self.n_channels = n_channels
        self.slack = slack
        self.last_time = np.full((height, width, n_channels), NEVER, dtype=np.int64)
        self._latest = NEVER

    def _channel(self, e: Event) -> int:
        if self.n_channels == 2:
            return polarity_index(e.p)
        if not 0 <= e.p < self.n_channels:
            raise BoundsError(f"channel {e.p} outside [0, {self.n_channels})")
        return e.p

    def update(self, e: Event) -> "TimestampMap":
        if not (0 <= e.x < self.width and 0 <= e.y < self.height):
            raise BoundsError(
                f"event at ({e.x}, {e.y}) outside {self.width}x{self.height} sensor"
            )
        if e.t < self._latest - self.slack:
            raise OrderingError(
                f"event at t={e.t} regresses past t={self._latest} (slack {self.slack})"
            )
        c = self._channel(e)
        cell = self.last_time[e.y, e.x, c]
        if e.t > cell:
            self.last_time[e.y, e.x, c] = e.t
        self._latest = max(self._latest, e.t)
        return self

    def get(self, x: int, y: int, p: int) -> int:
        c = polarity_index(p) if self.n_channels == 2 else p
        return int(self.last_time[y, x, c])

    def time_context(self, e: Event, radius: int) -> np.ndarray:
        """Times of the (2R+1)x(2R+1) neighbourhood of ``e``, indexed [v, u, channel].

        Off-sensor cells are NEVER.
        """
        if not (0 <= e.x < self.width and 0 <= e.y < self.height):
            raise BoundsError(f"event at ({e.x}, {e.y}) outside sensor")
        r = radius
        ctx = np.full((2 * r + 1, 2 * r + 1, self.n_channels), NEVER, dtype=np.int64)
        y0, y1 = max(e.y - r, 0), min(e.y + r + 1, self.height)
        x0, x1 = max(e.x - r, 0), min(e.x + r + 1, self.width)
        ctx[y0 - (e.y - r):y1 - (e.y - r), x0 - (e.x - r):x1 - (e.x - r)] = \
            self.last_time[y0:y1, x0:x1]
        return ctx


@dataclass
class TimeSurface:
    radius: int
    values: np.ndarray  # (2R+1, 2R+1, channels), indexed [v, u, channel]
    center_time: int
    center_polarity: int

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def time_surface(ctx: np.ndarray, t_i: int, tau: float, center_polarity: int = ON) -> TimeSurface:
    """Decay a time context: exp(-(t_i - T)/tau), with NEVER cells set to 0."""
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    ctx = np.asarray(ctx)
    seen = ctx != NEVER
    values = np.zeros(ctx.shape, dtype=np.float64)
    # entries later than t_i only occur with ordering slack; they count as fresh
    dt = np.maximum(t_i - ctx[seen], 0)
    values[seen] = np.exp(-dt.astype(np.float64) / tau)
    radius = (ctx.shape[0] - 1) // 2
    return TimeSurface(radius, values, int(t_i), center_polarity)


def incremental_surfaces(stream: EventStream, radius: int, tau: float) -> np.ndarray:
    """Reference per-event path through TimestampMap; returns (n, D) surfaces.

    Slow; :func:`stream_surfaces` is the production path.
    """
    tmap = TimestampMap(stream.width, stream.height)
    r = radius
    out = np.empty((len(stream), 2 * (2 * r + 1) ** 2))
    for i, e in enumerate(stream):
        tmap.update(e)
        out[i] = time_surface(tmap.time_context(e, r), e.t, tau, e.p).flat()
    return out


def brute_force_time_surface(stream: EventStream, i: int, radius: int, tau: float) -> TimeSurface:
    """Surface for event ``i`` rebuilt by scanning events 0..i directly (test oracle).

    Shares nothing with the timestamp-map path: every earlier event inside the
    window is found by a linear scan and the latest time per cell is a max.
    """
    if not 0 <= i < len(stream):
        raise IndexError(i)
    r = radius
    xi, yi, ti, pi = stream[i]
    xs, ys, ts, ps = (a[: i + 1] for a in (stream.x, stream.y, stream.t, stream.p))
    near = (np.abs(xs - xi) <= r) & (np.abs(ys - yi) <= r)
    latest = np.full((2 * r + 1, 2 * r + 1, 2), -np.inf)
    np.maximum.at(latest, (ys[near] - yi + r, xs[near] - xi + r, (ps[near] == ON).astype(int)),
                  ts[near].astype(np.float64))
    values = np.zeros_like(latest)
    hit = np.isfinite(latest)
    values[hit] = np.exp(-(ti - latest[hit]) / tau)
    return TimeSurface(r, values, ti, pi)


@njit(cache=True)
def _fill_surfaces(last, xs, ys, ts, chans, radius, tau, out):
    # last is the timestamp map padded by radius on each side, -1 = never
    n_channels = last.shape[2]
    side = 2 * radius + 1
    for i in range(xs.shape[0]):
        x = xs[i] + radius
        y = ys[i] + radius
        t = ts[i]
        c = chans[i]
        if t > last[y, x, c]:
            last[y, x, c] = t
        k = 0
        for v in range(side):
            row = last[y - radius + v]
            for u in range(side):
                cell = row[x - radius + u]
                for ch in range(n_channels):
                    tc = cell[ch]
                    if tc == -1:
                        out[i, k] = 0.0
                    elif tc >= t:
                        out[i, k] = 1.0
                    else:
                        out[i, k] = np.exp(-(t - tc) / tau)
                    k += 1


class SurfaceBuilder:
    """Stateful fast path: feed events in order, get one flattened surface per event.

    Row layout matches ``TimeSurface.flat()``, i.e. [v, u, channel] in C order.
    """

    def __init__(self, width: int, height: int, radius: int, tau: float, n_channels: int = 2):
        if not tau > 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        if radius < 1:
            raise ConfigError(f"radius must be >= 1, got {radius}")
        self.width, self.height = width, height
        self.radius, self.tau = radius, float(tau)
        self.n_channels = n_channels
        self.last = np.full((height + 2 * radius, width + 2 * radius, n_channels), NEVER,
                            dtype=np.int64)

    @property
    def dim(self) -> int:
        return (2 * self.radius + 1) ** 2 * self.n_channels

    def process(self, x, y, t, channels) -> np.ndarray:
        x, y, t, channels = (np.ascontiguousarray(a, dtype=np.int64) for a in (x, y, t, channels))
        if len(x) and (x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height):
            raise BoundsError("event outside the sensor geometry")
        if len(x) and (channels.min() < 0 or channels.max() >= self.n_channels):
            raise BoundsError("channel index out of range")
        out = np.empty((len(x), self.dim))
        if len(x):
            _fill_surfaces(self.last, x, y, t, channels, self.radius, self.tau, out)
        return out


def stream_surfaces(stream: EventStream, radius: int, tau: float,
                    n_channels: int = 2, channels: Optional[np.ndarray] = None) -> np.ndarray:
    """All time surfaces of a stream, one flattened row per event.

    ``channels`` overrides the polarity-derived channel index (feature events).
    """
    if channels is None:
        channels = (stream.p > 0).astype(np.int64)
    builder = SurfaceBuilder(stream.width, stream.height, radius, tau, n_channels)
    return builder.process(stream.x, stream.y, stream.t, channels)


def refractory_filter(stream: EventStream, dt_min: int) -> EventStream:
    """Drop events closer than ``dt_min`` to the previous kept event at the same pixel/polarity."""
    if dt_min <= 0 or len(stream) == 0:
        return stream
    last = {}
    keep = np.zeros(len(stream), dtype=bool)
    for i, (x, y, t, p) in enumerate(zip(stream.x, stream.y, stream.t, stream.p)):
        key = (x, y, p)
        prev = last.get(key)
        if prev is None or t - prev >= dt_min:
            keep[i] = True
            last[key] = t
    return EventStream(stream.width, stream.height, stream.x[keep], stream.y[keep],
                       stream.t[keep], stream.p[keep], stream.label)
