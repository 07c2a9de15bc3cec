"""Single-hidden-layer autoencoder trained online by backpropagation.

    z     = act(W s + b)          encoder, W is (code_dim, input_dim)
    s_hat = act'(W' z + b')       decoder, W' is (input_dim, code_dim), untied

The loss is the per-element mean squared reconstruction error.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import blob
from .errors import ConfigError, CorruptBlobError, InputError, TrainingError

log = logging.getLogger(__name__)


def _sigmoid(a):
    # split by sign so large |a| never overflows exp
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# name -> (function, derivative expressed through the activation's output)
ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda y: y * (1.0 - y)),
    "rectifier": (lambda a: np.maximum(a, 0.0), lambda y: (y > 0).astype(np.float64)),
    "identity": (lambda a: np.array(a, dtype=np.float64), lambda y: np.ones_like(y)),
}
ACTIVATION_TAGS = {"sigmoid": 0, "rectifier": 1, "identity": 2}
MAGIC = b"DTAE"


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")
    return name


class Autoencoder:
    def __init__(self, input_dim: int, code_dim: int, activation: str = "sigmoid",
                 decoder_activation: str = "sigmoid", seed=0):
        if code_dim < 1 or code_dim >= input_dim:
            raise ConfigError(
                f"code_dim must satisfy 1 <= code_dim < input_dim, got {code_dim} vs {input_dim}"
            )
        self.input_dim = input_dim
        self.code_dim = code_dim
        self.activation = _check_activation(activation)
        self.decoder_activation = _check_activation(decoder_activation)
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (input_dim + code_dim))
        self.W = rng.uniform(-limit, limit, (code_dim, input_dim))
        self.b = np.zeros(code_dim)
        self.W_dec = rng.uniform(-limit, limit, (input_dim, code_dim))
        self.b_dec = np.zeros(input_dim)

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "W_dec": self.W_dec, "b_dec": self.b_dec}

    def copy(self) -> "Autoencoder":
        other = object.__new__(Autoencoder)
        other.__dict__.update(self.__dict__)
        for k, v in self.params().items():
            setattr(other, k, v.copy())
        return other

    def _check(self, s, n, what):
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != n:
            raise InputError(f"{what} has length {s.shape[-1]}, expected {n}")
        return s

    def encode(self, s):
        """Code vector(s) for one surface of length input_dim or a (n, input_dim) batch."""
        s = self._check(s, self.input_dim, "surface")
        return ACTIVATIONS[self.activation][0](s @ self.W.T + self.b)

    def decode(self, z):
        z = self._check(z, self.code_dim, "code")
        return ACTIVATIONS[self.decoder_activation][0](z @ self.W_dec.T + self.b_dec)

    def reconstruct(self, s):
        return self.decode(self.encode(s))

    def reconstruction_error(self, s) -> float:
        s = self._check(s, self.input_dim, "surface")
        return float(np.mean((self.reconstruct(s) - s) ** 2))

    def gradients(self, s):
        """Loss and analytic gradients of the mean squared error for one surface."""
        s = self._check(s, self.input_dim, "surface")
        z = self.encode(s)
        s_hat = self.decode(z)
        err = s_hat - s
        loss = float(np.mean(err * err))
        d_out = (2.0 / self.input_dim) * err * ACTIVATIONS[self.decoder_activation][1](s_hat)
        d_hidden = (self.W_dec.T @ d_out) * ACTIVATIONS[self.activation][1](z)
        grads = {
            "W": np.outer(d_hidden, s),
            "b": d_hidden,
            "W_dec": np.outer(d_out, z),
            "b_dec": d_out,
        }
        return loss, grads

    def train_step(self, s, learning_rate: float) -> float:
        """One SGD step; returns the loss measured before the update.

        Parameters are left untouched if the loss or the update is non-finite.
        """
        if learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        # overflow is detected below, not worth a warning
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = self.gradients(s)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite reconstruction loss {loss}")
            if learning_rate == 0:
                return loss
            updated = {k: p - learning_rate * grads[k] for k, p in self.params().items()}
        if not all(np.isfinite(v).all() for v in updated.values()):
            raise TrainingError("update produced non-finite weights")
        for k, v in updated.items():
            setattr(self, k, v)
        return loss

    def to_bytes(self) -> bytes:
        tags = [ACTIVATION_TAGS[self.activation], ACTIVATION_TAGS[self.decoder_activation]]
        return blob.pack(MAGIC, [self.input_dim, self.code_dim], tags,
                         [self.W, self.b, self.W_dec, self.b_dec])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Autoencoder":
        ints, tags, arrays = blob.unpack(data, MAGIC)
        names = {v: k for k, v in ACTIVATION_TAGS.items()}
        if len(ints) != 2 or len(tags) != 2 or len(arrays) != 4:
            raise CorruptBlobError("unexpected autoencoder layout", offset=4)
        if any(t not in names for t in tags):
            raise CorruptBlobError(f"unknown activation tag in {tags}", offset=4)
        d, n = ints
        ae = object.__new__(cls)
        ae.input_dim, ae.code_dim = d, n
        ae.activation, ae.decoder_activation = names[tags[0]], names[tags[1]]
        ae.W, ae.b, ae.W_dec, ae.b_dec = arrays
        shapes = [(n, d), (n,), (d, n), (d,)]
        if [a.shape for a in arrays] != shapes:
            raise CorruptBlobError("array shapes do not match dimensions", offset=4)
        return ae


@dataclass
class TrainingReport:
    surfaces_seen: int
    final_error: float
    trajectory: list[float] = field(default_factory=list)
    converged: bool = False
    learning_rate: float = 0.0

    def to_dict(self):
        return {
            "surfaces_seen": self.surfaces_seen,
            "final_error": self.final_error,
            "trajectory": self.trajectory,
            "converged": self.converged,
            "learning_rate": self.learning_rate,
        }


def train_until_threshold(ae: Autoencoder, surfaces: Iterable, threshold: float,
                          max_surfaces: int, learning_rate: float = 0.05,
                          window: int = 1000, sample_every: int = 1000,
                          max_backoffs: int = 3) -> TrainingReport:
    """Online training until the running mean error over ``window`` drops below ``threshold``.

    A non-finite step halves the learning rate and retries the same surface;
    after ``max_backoffs`` halvings the error propagates.
    """
    if threshold < 0:
        raise ConfigError("threshold must be >= 0")
    if max_surfaces <= 0:
        raise ConfigError("max_surfaces must be > 0")
    recent: deque = deque(maxlen=window)
    running = 0.0
    trajectory: list[float] = []
    seen = 0
    eta = learning_rate
    backoffs = 0
    converged = False
    for s in surfaces:
        if seen >= max_surfaces:
            break
        while True:
            try:
                loss = ae.train_step(s, eta)
                break
            except TrainingError:
                if backoffs >= max_backoffs:
                    raise
                backoffs += 1
                eta /= 2
                log.warning("non-finite autoencoder step; learning rate halved to %g", eta)
        if len(recent) == window:
            running -= recent[0]
        recent.append(loss)
        running += loss
        seen += 1
        mean = max(running, 0.0) / len(recent)
        if seen % sample_every == 0:
            trajectory.append(mean)
        if len(recent) == window and mean < threshold and np.mean(recent) < threshold:
            converged = True
            break
    if not recent:
        raise InputError("no surfaces were supplied for training")
    final = float(np.mean(recent))
    if not trajectory or seen % sample_every:
        trajectory.append(final)
    return TrainingReport(seen, final, trajectory, converged, eta)
