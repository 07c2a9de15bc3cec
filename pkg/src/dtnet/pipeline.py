"""Layer-by-layer training, evaluation and model bundles.

A bundle is a directory holding ``config.ini`` (normalised snapshot),
``layerN.ae`` autoencoder blobs, ``classifier.mlp`` and ``reports.json``.
Everything in it is a deterministic function of the config and the data.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autoencoder import Autoencoder, train_until_threshold
from .classifier import ConfusionMatrix, Mlp, evaluate, mlp_train, vectorize
from .config import PipelineConfig, loads_config
from .dataset_io import DatasetManifest, load_dataset
from .errors import CompatibilityError, CorruptBlobError, InputError
from .events import EventStream, refractory_filter
from .hierarchy import FeatureEvents, LayerConfig, LayerSource, run_layer

log = logging.getLogger(__name__)

CONFIG_FILE = "config.ini"
REPORTS_FILE = "reports.json"
CLASSIFIER_FILE = "classifier.mlp"


def layer_file(i: int) -> str:
    return f"layer{i + 1}.ae"


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


@dataclass
class _Sampler:
    cfg: LayerConfig
    k: int

    def __call__(self, item):
        source, seed = item
        X = source.inputs(self.cfg)
        if len(X) > self.k:
            idx = np.sort(np.random.default_rng(seed).choice(len(X), self.k, replace=False))
            X = X[idx]
        return X


@dataclass
class _Runner:
    cfg: LayerConfig
    ae: Autoencoder

    def __call__(self, source):
        return run_layer(source, self.cfg, self.ae)


@dataclass
class Model:
    config: PipelineConfig
    encoders: list[Autoencoder]
    mlp: Mlp
    reports: dict

    @property
    def layers(self):
        return self.config.layers

    def features(self, streams: Sequence[EventStream], workers: int = 1) -> np.ndarray:
        return extract_features(streams, self.layers, self.encoders,
                                self.config.classifier.crop_border, workers)

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / CONFIG_FILE).write_text(self.config.text)
        for i, ae in enumerate(self.encoders):
            (d / layer_file(i)).write_bytes(ae.to_bytes())
        (d / CLASSIFIER_FILE).write_bytes(self.mlp.to_bytes())
        (d / REPORTS_FILE).write_text(json.dumps(self.reports, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "Model":
        d = Path(directory)
        if not (d / CONFIG_FILE).exists():
            raise InputError(f"{d} is not a bundle: missing {CONFIG_FILE}")
        config = loads_config((d / CONFIG_FILE).read_text())
        encoders = []
        for i in range(len(config.layers)):
            path = d / layer_file(i)
            if not path.exists():
                raise InputError(f"bundle is missing {path}")
            try:
                encoders.append(Autoencoder.from_bytes(path.read_bytes()))
            except CorruptBlobError as exc:
                raise CorruptBlobError(f"{path}: {exc}") from exc
        path = d / CLASSIFIER_FILE
        if not path.exists():
            raise InputError(f"bundle is missing {path}")
        try:
            mlp = Mlp.from_bytes(path.read_bytes())
        except CorruptBlobError as exc:
            raise CorruptBlobError(f"{path}: {exc}") from exc
        reports = json.loads((d / REPORTS_FILE).read_text()) if (d / REPORTS_FILE).exists() else {}
        return cls(config, encoders, mlp, reports)


def _shuffled_passes(X, rng):
    """Rows of X in a fresh random order on every pass, indefinitely."""
    if len(X) == 0:
        return
    while True:
        for j in rng.permutation(len(X)):
            yield X[j]


def final_vector(outputs, crop: int) -> np.ndarray:
    vol = outputs.volume
    if crop:
        vol = vol.cropped(crop)
    return vectorize(vol)


def extract_features(streams, layers, encoders, crop_border=False, workers=1) -> np.ndarray:
    """Vectorised final volume of the last layer for every stream, float32 rows."""
    sources: list[LayerSource] = [FeatureEvents.from_stream(s) for s in streams]
    out = None
    for cfg, ae in zip(layers, encoders):
        outs = _map(_Runner(cfg, ae), sources, workers)
        sources = [o.next_source(cfg) for o in outs]
        out = outs
    crop = layers[0].radius if crop_border else 0
    if not out:
        return np.zeros((0, 0), dtype=np.float32)
    return np.stack([final_vector(o, crop) for o in out]).astype(np.float32)


def load_split(manifest: DatasetManifest, split: str, subsample: Optional[int],
               refractory: int = 0) -> list[EventStream]:
    m = DatasetManifest(**{**manifest.__dict__, "subsample": subsample})
    streams = load_dataset(m, split)
    if refractory:
        streams = [refractory_filter(s, refractory) for s in streams]
    return streams


def train(config: PipelineConfig, streams: Optional[list[EventStream]] = None,
          workers: Optional[int] = None) -> Model:
    """Train every layer's autoencoder in order, then the classifier."""
    workers = workers or config.workers
    if streams is None:
        streams = load_split(config.dataset, "train", config.dataset.subsample, config.refractory)
    if not streams:
        raise InputError(f"no training samples found under {config.dataset.root}")
    labels = np.array([s.label for s in streams], dtype=np.int64)
    n_layers = len(config.layers)
    seeds = np.random.SeedSequence(config.seed).spawn(2 * n_layers + 2)
    ap = config.autoencoder
    reports: dict = {"train_samples": len(streams), "layers": []}

    sources: list[LayerSource] = [FeatureEvents.from_stream(s) for s in streams]
    encoders = []
    outs = []
    for i, cfg in enumerate(config.layers):
        t0 = time.perf_counter()
        sample_seeds = seeds[2 * i].spawn(len(sources))
        pool = _map(_Sampler(cfg, ap.surfaces_per_sample), list(zip(sources, sample_seeds)), workers)
        X = np.concatenate(pool) if pool else np.zeros((0, sources[0].input_dim(cfg)))
        rng = np.random.default_rng(seeds[2 * i + 1])
        ae = Autoencoder(sources[0].input_dim(cfg), cfg.code_dim, ap.activation,
                         ap.decoder_activation, seed=rng)
        report = train_until_threshold(ae, _shuffled_passes(X, rng), ap.threshold,
                                       ap.max_surfaces, ap.learning_rate, ap.window)
        if not report.converged:
            log.warning("layer %d autoencoder did not reach error %g (final %.5f after %d surfaces)",
                        i + 1, ap.threshold, report.final_error, report.surfaces_seen)
        log.info("layer %d: %d training surfaces, error %.5f, converged=%s (%.1fs)",
                 i + 1, report.surfaces_seen, report.final_error, report.converged,
                 time.perf_counter() - t0)
        reports["layers"].append({"pool_size": int(len(X)), **report.to_dict()})
        encoders.append(ae)
        outs = _map(_Runner(cfg, ae), sources, workers)
        sources = [o.next_source(cfg) for o in outs]

    crop = config.layers[0].radius if config.classifier.crop_border else 0
    X = np.stack([final_vector(o, crop) for o in outs]).astype(np.float32)
    cp = config.classifier
    mlp = Mlp(X.shape[1], cp.hidden, len(config.class_names), cp.activation, cp.loss,
              seed=np.random.default_rng(seeds[-2]))
    if cp.standardize:
        mlp.fit_standardization(X)
    t0 = time.perf_counter()
    mrep = mlp_train(mlp, X, labels, cp.epochs, cp.learning_rate,
                     np.random.default_rng(seeds[-1]), cp.batch_size)
    log.info("classifier trained in %.1fs", time.perf_counter() - t0)
    reports["classifier"] = mrep.to_dict()
    return Model(config, encoders, mlp, reports)


def check_geometry(model: Model, manifest: DatasetManifest) -> None:
    ds = model.config.dataset
    if (manifest.width, manifest.height) != (ds.width, ds.height):
        raise CompatibilityError(
            f"bundle expects {ds.width}x{ds.height} inputs, dataset declares "
            f"{manifest.width}x{manifest.height}"
        )
    if len(manifest.classes) != model.mlp.n_classes:
        raise CompatibilityError(
            f"bundle classifies {model.mlp.n_classes} classes, dataset lists {len(manifest.classes)}"
        )


def evaluate_model(model: Model, streams: Sequence[EventStream], workers: int = 1) -> ConfusionMatrix:
    X = model.features(streams, workers)
    labels = np.array([s.label for s in streams], dtype=np.int64)
    if len(X) == 0:
        return ConfusionMatrix(model.mlp.n_classes, model.config.class_names)
    return evaluate(model.mlp, X, labels, model.config.class_names)
