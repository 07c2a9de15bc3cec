"""Layer stacking: parameter scaling, feature volumes and inter-layer hand-off.

A layer turns its input events into code vectors with a trained
:class:`~dtnet.autoencoder.Autoencoder` and stores the latest code of every
pixel in a :class:`FeatureVolume`. The layer's ``strategy`` decides what the
next layer sees:

``raw_pool``
    the next layer fires at the same events and reads the decayed, pooled
    neighbourhood of the volume;
``time_delay``
    each code component becomes a feature event at ``t_in + alpha * z_i``;
``threshold``
    each component with ``z_i >= theta_z`` becomes a feature event at ``t_in``.

Feature events drive the next layer through ordinary time surfaces with one
channel per code component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from numba import njit

from .autoencoder import Autoencoder
from .errors import BoundsError, ConfigError, InputError, OrderingError
from .events import NEVER, EventStream, stream_surfaces

STRATEGIES = ("raw_pool", "time_delay", "threshold")
POOL_MODES = ("max", "mean")


@dataclass(frozen=True)
class LayerConfig:
    radius: int
    tau: float           # microseconds
    code_dim: int
    strategy: str = "raw_pool"
    pool_mode: str = "max"
    pool_window: int = 1
    alpha: float = 1000.0   # microseconds of delay per unit of code
    theta_z: float = 0.5

    def __post_init__(self):
        if self.radius < 1:
            raise ConfigError(f"radius must be >= 1, got {self.radius}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.code_dim < 1:
            raise ConfigError(f"code_dim must be >= 1, got {self.code_dim}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.pool_mode not in POOL_MODES:
            raise ConfigError(f"pool_mode must be one of {POOL_MODES}, got {self.pool_mode!r}")
        if self.pool_window < 1:
            raise ConfigError(f"pool_window must be >= 1, got {self.pool_window}")
        if not math.isfinite(self.alpha):
            raise ConfigError("alpha must be finite")


@dataclass(frozen=True)
class ScalingFactors:
    k_radius: float = 1.0
    k_tau: float = 1.0
    k_code: float = 1.0

    def __post_init__(self):
        for name in ("k_radius", "k_tau", "k_code"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def scale_config(cfg: LayerConfig, k: ScalingFactors) -> LayerConfig:
    """Parameters of the next layer: radius, tau and code size each multiplied by their factor."""
    return replace(
        cfg,
        radius=max(1, _round_half_up(k.k_radius * cfg.radius)),
        tau=k.k_tau * cfg.tau,
        code_dim=max(1, _round_half_up(k.k_code * cfg.code_dim)),
    )


def cascade(first: LayerConfig, k: ScalingFactors, depth: int) -> list[LayerConfig]:
    layers = [first]
    for _ in range(depth - 1):
        layers.append(scale_config(layers[-1], k))
    return layers


class FeatureVolume:
    """Latest code vector and its write time for every pixel."""

    def __init__(self, width: int, height: int, depth: int):
        self.width = width
        self.height = height
        self.depth = depth
        self.codes = np.zeros((height, width, depth))
        self.last_update = np.full((height, width), NEVER, dtype=np.int64)

    @property
    def shape(self):
        return (self.height, self.width, self.depth)

    def write(self, x: int, y: int, z, t: int) -> "FeatureVolume":
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise BoundsError(f"({x}, {y}) outside {self.width}x{self.height} volume")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.depth,):
            raise InputError(f"code of length {z.size} written into depth-{self.depth} volume")
        if t < self.last_update[y, x]:
            raise OrderingError(f"write at t={t} precedes cell time {self.last_update[y, x]}")
        self.codes[y, x] = z
        self.last_update[y, x] = t
        return self

    def read_subvolume(self, x: int, y: int, radius: int, tau: float, t_now: int) -> np.ndarray:
        """Neighbourhood codes scaled by exp(-(t_now - last_update)/tau), [v, u, channel] order."""
        if not tau > 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        side = 2 * radius + 1
        out = np.zeros((side, side, self.depth))
        for v in range(side):
            yy = y - radius + v
            if not 0 <= yy < self.height:
                continue
            for u in range(side):
                xx = x - radius + u
                if not 0 <= xx < self.width or self.last_update[yy, xx] == NEVER:
                    continue
                age = max(t_now - self.last_update[yy, xx], 0)
                out[v, u] = self.codes[yy, xx] * np.exp(-float(age) / tau)
        return out.reshape(-1)

    def touched(self) -> np.ndarray:
        return self.last_update != NEVER

    def cropped(self, border: int) -> "FeatureVolume":
        """Copy without the ``border``-pixel frame (the zero-padded surfaces)."""
        if 2 * border >= min(self.width, self.height):
            raise ConfigError(f"border {border} leaves nothing of a {self.width}x{self.height} volume")
        out = FeatureVolume(self.width - 2 * border, self.height - 2 * border, self.depth)
        out.codes = self.codes[border:-border, border:-border].copy()
        out.last_update = self.last_update[border:-border, border:-border].copy()
        return out


def pool(sub, radius: int, depth: int, mode: str = "max", window: int = 1) -> np.ndarray:
    """Per-channel spatial pooling of sub-volume(s) viewed as (2R+1, 2R+1, depth).

    Accepts one flattened sub-volume or an (n, len) batch. Windows that run
    past the edge are pooled over what remains.
    """
    if window < 1:
        raise ConfigError(f"pool window must be >= 1, got {window}")
    if mode not in POOL_MODES:
        raise ConfigError(f"unknown pool mode {mode!r}")
    sub = np.asarray(sub, dtype=np.float64)
    single = sub.ndim == 1
    side = 2 * radius + 1
    grid = sub.reshape(-1, side, side, depth)
    if window == 1:
        return sub.copy()
    m = -(-side // window)
    out = np.empty((grid.shape[0], m, m, depth))
    reduce = np.max if mode == "max" else np.mean
    for a in range(m):
        for b in range(m):
            block = grid[:, a * window:(a + 1) * window, b * window:(b + 1) * window]
            out[:, a, b] = reduce(block, axis=(1, 2))
    out = out.reshape(grid.shape[0], -1)
    return out[0] if single else out


def pooled_length(radius: int, depth: int, window: int) -> int:
    return (-(-(2 * radius + 1) // window)) ** 2 * depth


def encode_time_delay(z, t_in: float, alpha: float) -> list[tuple[int, float]]:
    """Feature events (channel, t_in + alpha * z_i), sorted by time then channel."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise InputError("non-finite code values")
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    times = t_in + alpha * z
    order = np.argsort(times, kind="stable")
    return [(int(i), float(times[i])) for i in order]


def threshold_features(z, theta_z: float) -> set[int]:
    z = np.asarray(z, dtype=np.float64)
    return set(int(i) for i in np.flatnonzero(z >= theta_z))


# -- layer inputs --------------------------------------------------------------

@dataclass
class FeatureEvents:
    """Events whose channel is a code component (or a polarity plane for the camera)."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    channel: np.ndarray
    n_channels: int

    @classmethod
    def from_stream(cls, stream: EventStream) -> "FeatureEvents":
        return cls(stream.width, stream.height, stream.x, stream.y, stream.t,
                   (stream.p > 0).astype(np.int64), 2)

    def __len__(self):
        return len(self.t)

    def input_dim(self, cfg: LayerConfig) -> int:
        return (2 * cfg.radius + 1) ** 2 * self.n_channels

    def inputs(self, cfg: LayerConfig) -> np.ndarray:
        view = EventStream(self.width, self.height, self.x, self.y, self.t,
                           np.zeros(len(self.t), dtype=np.int64))
        return stream_surfaces(view, cfg.radius, cfg.tau, self.n_channels, self.channel)


@dataclass
class VolumeTrace:
    """Sequence of volume writes (the previous layer's codes at its trigger events)."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    codes: np.ndarray
    pool_mode: str = "max"
    pool_window: int = 1

    def __len__(self):
        return len(self.t)

    @property
    def depth(self):
        return self.codes.shape[1]

    def input_dim(self, cfg: LayerConfig) -> int:
        return pooled_length(cfg.radius, self.depth, self.pool_window)

    def inputs(self, cfg: LayerConfig) -> np.ndarray:
        side = 2 * cfg.radius + 1
        out = np.empty((len(self), side * side * self.depth))
        if len(self):
            _subvolume_trace(self.x, self.y, self.t, np.ascontiguousarray(self.codes),
                             self.width, self.height, cfg.radius, float(cfg.tau), out)
        return pool(out, cfg.radius, self.depth, self.pool_mode, self.pool_window)


LayerSource = Union[FeatureEvents, VolumeTrace]


@njit(cache=True)
def _subvolume_trace(xs, ys, ts, codes, width, height, radius, tau, out):
    depth = codes.shape[1]
    vol = np.zeros((height + 2 * radius, width + 2 * radius, depth))
    last = np.full((height + 2 * radius, width + 2 * radius), -1, np.int64)
    side = 2 * radius + 1
    for i in range(xs.shape[0]):
        x = xs[i] + radius
        y = ys[i] + radius
        t = ts[i]
        for c in range(depth):
            vol[y, x, c] = codes[i, c]
        last[y, x] = t
        k = 0
        for v in range(side):
            for u in range(side):
                tc = last[y - radius + v, x - radius + u]
                if tc == -1:
                    for c in range(depth):
                        out[i, k] = 0.0
                        k += 1
                else:
                    age = t - tc
                    if age < 0:
                        age = 0
                    w = np.exp(-age / tau)
                    for c in range(depth):
                        out[i, k] = vol[y - radius + v, x - radius + u, c] * w
                        k += 1


# -- running a layer -------------------------------------------------------------

@dataclass
class LayerOutput:
    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    codes: np.ndarray
    volume: FeatureVolume

    def next_source(self, cfg: LayerConfig) -> LayerSource:
        """Input of the following layer under this layer's hand-off strategy."""
        if cfg.strategy == "raw_pool":
            return VolumeTrace(self.width, self.height, self.x, self.y, self.t, self.codes,
                               cfg.pool_mode, cfg.pool_window)
        n, depth = self.codes.shape
        if cfg.strategy == "threshold":
            ev, ch = np.nonzero(self.codes >= cfg.theta_z)
            t = self.t[ev]
        else:
            ev = np.repeat(np.arange(n), depth)
            ch = np.tile(np.arange(depth), n)
            delay = cfg.alpha * self.codes.reshape(-1)
            t = np.maximum(np.rint(self.t[ev] + delay), 0).astype(np.int64)
        order = np.argsort(t, kind="stable")
        return FeatureEvents(self.width, self.height, self.x[ev][order], self.y[ev][order],
                             np.asarray(t)[order], ch[order].astype(np.int64), depth)


def final_volume(width, height, x, y, t, codes) -> FeatureVolume:
    """Volume after replaying all writes in order (latest write wins per cell)."""
    depth = codes.shape[1]
    vol = FeatureVolume(width, height, depth)
    if len(t) == 0:
        return vol
    cell = y * width + x
    last = np.full(width * height, -1, dtype=np.int64)
    np.maximum.at(last, cell, np.arange(len(t)))
    hit = np.flatnonzero(last >= 0)
    vol.codes.reshape(-1, depth)[hit] = codes[last[hit]]
    vol.last_update.reshape(-1)[hit] = t[last[hit]]
    return vol


def run_layer(source: LayerSource, cfg: LayerConfig, ae: Autoencoder) -> LayerOutput:
    """Encode every input event of a layer and collect the resulting volume."""
    if ae.input_dim != source.input_dim(cfg):
        raise ConfigError(
            f"autoencoder expects inputs of length {ae.input_dim}, "
            f"layer produces {source.input_dim(cfg)}"
        )
    if ae.code_dim != cfg.code_dim:
        raise ConfigError(f"autoencoder code size {ae.code_dim} != layer code_dim {cfg.code_dim}")
    if len(source):
        codes = ae.encode(source.inputs(cfg))
    else:
        codes = np.zeros((0, cfg.code_dim))
    vol = final_volume(source.width, source.height, source.x, source.y, source.t, codes)
    return LayerOutput(source.width, source.height, source.x, source.y, source.t, codes, vol)


def run_hierarchy(stream: EventStream, layers: list[LayerConfig],
                  encoders: list[Autoencoder]) -> list[LayerOutput]:
    source: LayerSource = FeatureEvents.from_stream(stream)
    outputs = []
    for cfg, ae in zip(layers, encoders):
        out = run_layer(source, cfg, ae)
        outputs.append(out)
        source = out.next_source(cfg)
    return outputs
