"""One-hidden-layer perceptron over vectorised feature volumes, plus confusion matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dger

from . import blob
from .autoencoder import ACTIVATION_TAGS, ACTIVATIONS
from .errors import ConfigError, CorruptBlobError, InputError, TrainingError
from .hierarchy import FeatureVolume

log = logging.getLogger(__name__)

MAGIC = b"DTML"
LOSSES = {"cross_entropy": 0, "squared": 1}


def vectorize(vol: FeatureVolume) -> np.ndarray:
    """Flatten row-major: y, then x, then channel. Untouched cells are zero."""
    codes = np.where(vol.touched()[:, :, None], vol.codes, 0.0)
    return codes.reshape(-1).copy()


def softmax(a):
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    def __init__(self, input_dim: int, hidden_dim: int, n_classes: int,
                 activation: str = "sigmoid", loss: str = "cross_entropy", seed=0):
        if min(input_dim, hidden_dim) < 1 or n_classes < 2:
            raise ConfigError(
                f"invalid MLP shape {input_dim}-{hidden_dim}-{n_classes}"
            )
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if loss not in LOSSES:
            raise ConfigError(f"unknown loss {loss!r}; choose from {sorted(LOSSES)}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n_classes = n_classes
        self.activation = activation
        self.loss = loss
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (input_dim + hidden_dim))
        lim2 = np.sqrt(6.0 / (hidden_dim + n_classes))
        self.W1 = rng.uniform(-lim1, lim1, (hidden_dim, input_dim))
        self.b1 = np.zeros(hidden_dim)
        self.W2 = rng.uniform(-lim2, lim2, (n_classes, hidden_dim))
        self.b2 = np.zeros(n_classes)
        # per-feature standardisation; empty when disabled
        self.mean = np.zeros(0)
        self.std = np.zeros(0)

    def params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def fit_standardization(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 1e-12, std, 1.0)

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InputError(f"input has length {x.shape[-1]}, expected {self.input_dim}")
        if self.mean.size:
            x = (x - self.mean) / self.std
        return x

    def _forward(self, x):
        h = ACTIVATIONS[self.activation][0](x @ self.W1.T + self.b1)
        logits = h @ self.W2.T + self.b2
        return h, logits

    def logits(self, x):
        return self._forward(self._prepare(x))[1]

    def forward(self, x):
        """Class probabilities for one input or an (n, input_dim) batch."""
        return softmax(self.logits(x))

    def predict(self, x):
        # argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(self.logits(x), axis=-1)

    def loss_and_gradients(self, X, labels, input_weight_grad=True):
        """Mean loss over a batch and its analytic gradients.

        With ``input_weight_grad=False`` the (large) W1 gradient is not formed;
        its factors come back as ``d_hidden`` and ``inputs`` instead.
        """
        X = np.atleast_2d(self._prepare(X))
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        n = X.shape[0]
        h, logits = self._forward(X)
        prob = softmax(logits)
        onehot = np.zeros_like(prob)
        onehot[np.arange(n), labels] = 1.0
        if self.loss == "cross_entropy":
            picked = prob[np.arange(n), labels]
            loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
            d_logits = (prob - onehot) / n
        else:
            diff = prob - onehot
            loss = float(np.mean(np.sum(diff * diff, axis=1)))
            g = 2.0 * diff / n
            # Jacobian of softmax: p_i (g_i - sum_j g_j p_j)
            d_logits = prob * (g - np.sum(g * prob, axis=1, keepdims=True))
        d_hidden = (d_logits @ self.W2) * ACTIVATIONS[self.activation][1](h)
        grads = {
            "b1": d_hidden.sum(axis=0),
            "W2": d_logits.T @ h,
            "b2": d_logits.sum(axis=0),
        }
        if input_weight_grad:
            grads["W1"] = d_hidden.T @ X
        else:
            grads["d_hidden"], grads["inputs"] = d_hidden, X
        return loss, grads

    def to_bytes(self) -> bytes:
        ints = [self.input_dim, self.hidden_dim, self.n_classes]
        tags = [ACTIVATION_TAGS[self.activation], LOSSES[self.loss]]
        return blob.pack(MAGIC, ints, tags,
                         [self.W1, self.b1, self.W2, self.b2, self.mean, self.std])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Mlp":
        ints, tags, arrays = blob.unpack(data, MAGIC)
        if len(ints) != 3 or len(tags) != 2 or len(arrays) != 6:
            raise CorruptBlobError("unexpected classifier layout", offset=4)
        acts = {v: k for k, v in ACTIVATION_TAGS.items()}
        losses = {v: k for k, v in LOSSES.items()}
        if tags[0] not in acts or tags[1] not in losses:
            raise CorruptBlobError(f"unknown tags {tags}", offset=4)
        m = object.__new__(cls)
        m.input_dim, m.hidden_dim, m.n_classes = ints
        m.activation, m.loss = acts[tags[0]], losses[tags[1]]
        m.W1, m.b1, m.W2, m.b2, m.mean, m.std = arrays
        d, h, c = ints
        expected = [(h, d), (h,), (c, h), (c,)]
        if [a.shape for a in arrays[:4]] != expected or m.mean.shape != m.std.shape:
            raise CorruptBlobError("array shapes do not match dimensions", offset=4)
        return m


@dataclass
class MlpReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    learning_rate: float = 0.0

    def to_dict(self):
        return {"epoch_loss": self.epoch_loss, "epoch_accuracy": self.epoch_accuracy,
                "learning_rate": self.learning_rate}


def mlp_train(mlp: Mlp, X, labels, epochs: int = 50, learning_rate: float = 0.01,
              seed=0, batch_size: int = 1, max_backoffs: int = 3) -> MlpReport:
    """SGD on the configured loss with a seeded reshuffle every epoch."""
    if not learning_rate > 0:
        raise ConfigError("learning rate must be > 0")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    X = np.asarray(X)
    labels = np.asarray(labels, dtype=np.int64)
    if len(X) != len(labels):
        raise InputError("one label per training vector required")
    if not np.isfinite(X).all():
        raise InputError("training vectors hold non-finite values")
    if labels.size and (labels.min() < 0 or labels.max() >= mlp.n_classes):
        raise InputError("label outside the class range")
    rng = np.random.default_rng(seed)
    report = MlpReport(learning_rate=learning_rate)
    eta = learning_rate
    backoffs = 0
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        snapshot = {k: v.copy() for k, v in mlp.params().items()}
        while True:
            total = _run_epoch(mlp, X, labels, order, batch_size, eta)
            if total is not None:
                break
            # diverged: rewind the epoch and retry with a smaller step
            if backoffs >= max_backoffs:
                raise TrainingError(f"non-finite loss in epoch {epoch + 1} after {backoffs} backoffs")
            backoffs += 1
            eta /= 2
            log.warning("non-finite MLP loss; epoch %d restarted with learning rate %g", epoch + 1, eta)
            for k, v in snapshot.items():
                setattr(mlp, k, v.copy())
        acc = float(np.mean(mlp.predict(X) == labels)) if len(X) else 0.0
        report.epoch_loss.append(total / max(len(X), 1))
        report.epoch_accuracy.append(acc)
        log.info("epoch %d: loss %.4f, train accuracy %.4f", epoch + 1, report.epoch_loss[-1], acc)
    report.learning_rate = eta
    return report


def _run_epoch(mlp, X, labels, order, batch_size, eta):
    """Sum of batch losses, or None as soon as a loss or gradient turns non-finite."""
    total = 0.0
    for start in range(0, len(X), batch_size):
        idx = order[start:start + batch_size]
        loss, grads = mlp.loss_and_gradients(X[idx], labels[idx], input_weight_grad=False)
        # W1's gradient is finite whenever b1's is (inputs are checked up front)
        if not (np.isfinite(loss) and all(np.isfinite(grads[k]).all() for k in ("b1", "W2", "b2"))):
            return None
        d_hidden, inputs = grads["d_hidden"], grads["inputs"]
        if len(idx) == 1 and mlp.W1.flags.c_contiguous:
            # in-place rank-1 update on the Fortran view of W1
            dger(-eta, inputs[0], d_hidden[0], a=mlp.W1.T, overwrite_a=1)
        else:
            mlp.W1 -= eta * (d_hidden.T @ inputs)
        for k in ("b1", "W2", "b2"):
            getattr(mlp, k)[...] -= eta * grads[k]
        total += loss * len(idx)
    return total


class ConfusionMatrix:
    """Counts indexed [true class, predicted class]."""

    def __init__(self, n_classes: int, class_names=None):
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        self.class_names = list(class_names) if class_names else [str(i) for i in range(n_classes)]

    @classmethod
    def from_predictions(cls, labels, predictions, n_classes, class_names=None):
        cm = cls(n_classes, class_names)
        np.add.at(cm.counts, (np.asarray(labels, dtype=np.int64),
                              np.asarray(predictions, dtype=np.int64)), 1)
        return cm

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(len(self.counts), self.class_names)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def overall_rate(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def per_class_rates(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def to_text(self) -> str:
        names = self.class_names
        width = max(6, max(len(n) for n in names), len(str(self.counts.max())) + 1)
        head = "true\\pred".ljust(10) + "".join(n.rjust(width) for n in names) + "   rate"
        lines = [head]
        for name, row, rate in zip(names, self.counts, self.per_class_rates()):
            cells = "".join(str(v).rjust(width) for v in row)
            lines.append(name.ljust(10) + cells + f"  {rate:6.3f}")
        lines.append(f"overall recognition rate: {self.overall_rate:.4f} ({np.trace(self.counts)}/{self.total})")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["true," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name + "," + ",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    def rates_csv(self) -> str:
        lines = ["class,support,correct,rate"]
        rates = self.per_class_rates()
        for i, (name, row) in enumerate(zip(self.class_names, self.counts)):
            lines.append(f"{name},{row.sum()},{row[i]},{rates[i]:.6f}")
        lines.append(f"overall,{self.total},{np.trace(self.counts)},{self.overall_rate:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(mlp: Mlp, X, labels, class_names=None) -> ConfusionMatrix:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    preds = mlp.predict(X) if len(X) else np.zeros(0, dtype=np.int64)
    return ConfusionMatrix.from_predictions(labels, preds, mlp.n_classes, class_names)
