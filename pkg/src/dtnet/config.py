"""Pipeline configuration files.

INI syntax, one section per concern::

    [dataset]      root, layout, classes, width, height, train_dir, test_dir,
                   subsample, test_subsample   (or: manifest = <file>)
    [layer1]       radius, tau, code_dim, strategy, pool_mode, pool_window,
                   alpha, theta_z
    [layer2] ...   explicit deeper layers, or
    [scaling]      depth, k_radius, k_tau, k_code   (derive layers from layer1)
    [autoencoder]  threshold, learning_rate, max_surfaces, surfaces_per_sample,
                   window, activation, decoder_activation
    [classifier]   hidden, epochs, learning_rate, batch_size, activation, loss,
                   standardize, crop_border
    [run]          seed, workers, refractory

Durations accept ``us``, ``ms`` and ``s`` suffixes; a bare number is microseconds.
Reference configurations ship with the package and load by name.
"""
from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .dataset_io import DatasetManifest
from .errors import ConfigError, InputError
from .hierarchy import LayerConfig, ScalingFactors, cascade

REFERENCE_CONFIGS = ("nmnist-paper", "ncars-paper", "nmnist-smoke")

_DURATION = re.compile(r"^\s*([0-9.eE+-]+)\s*(us|µs|ms|s)?\s*$")
_UNITS = {None: 1.0, "us": 1.0, "µs": 1.0, "ms": 1e3, "s": 1e6}


def parse_duration(text: str) -> float:
    """Microseconds from '30ms', '1.25 s', '40000'."""
    m = _DURATION.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse duration {text!r}")
    return float(m.group(1)) * _UNITS[m.group(2)]


@dataclass
class AutoencoderParams:
    threshold: float = 0.01
    learning_rate: float = 0.05
    max_surfaces: int = 200_000
    surfaces_per_sample: int = 200
    window: int = 1000
    activation: str = "sigmoid"
    decoder_activation: str = "sigmoid"


@dataclass
class ClassifierParams:
    hidden: int = 200
    epochs: int = 50
    learning_rate: float = 0.01
    batch_size: int = 1
    activation: str = "sigmoid"
    loss: str = "cross_entropy"
    standardize: bool = False
    crop_border: bool = False


@dataclass
class PipelineConfig:
    dataset: DatasetManifest
    layers: list[LayerConfig]
    autoencoder: AutoencoderParams = field(default_factory=AutoencoderParams)
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    seed: int = 0
    workers: int = 1
    refractory: int = 0
    test_subsample: Optional[int] = None
    text: str = ""   # normalised snapshot written into bundles

    @property
    def class_names(self):
        return self.dataset.classes


def _typed(section, key, kind, default, name):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        if kind is bool:
            return section.getboolean(key)
        if kind == "duration":
            return parse_duration(raw)
        return kind(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{name}] {key}: invalid value {raw!r} ({exc})") from exc


def _layer(section, name) -> LayerConfig:
    for key in ("radius", "tau", "code_dim"):
        if key not in section:
            raise ConfigError(f"[{name}] missing key '{key}'")
    try:
        return LayerConfig(
            radius=_typed(section, "radius", int, None, name),
            tau=_typed(section, "tau", "duration", None, name),
            code_dim=_typed(section, "code_dim", int, None, name),
            strategy=section.get("strategy", "raw_pool").strip(),
            pool_mode=section.get("pool_mode", "max").strip(),
            pool_window=_typed(section, "pool_window", int, 1, name),
            alpha=_typed(section, "alpha", "duration", 1000.0, name),
            theta_z=_typed(section, "theta_z", float, 0.5, name),
        )
    except ConfigError as exc:
        if str(exc).startswith("["):
            raise
        raise ConfigError(f"[{name}] {exc}") from exc


def _positive(value, key, section, strict=True):
    if value is None:
        return value
    if (strict and not value > 0) or (not strict and value < 0):
        raise ConfigError(f"[{section}] {key} must be {'>' if strict else '>='} 0, got {value}")
    return value


def resolve_config_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if str(name_or_path) in REFERENCE_CONFIGS:
        return Path(str(resources.files("dtnet") / "configs" / f"{name_or_path}.ini"))
    raise InputError(f"config {name_or_path} not found (reference configs: {', '.join(REFERENCE_CONFIGS)})")


def read_parser(name_or_path) -> tuple[configparser.ConfigParser, Path]:
    path = resolve_config_path(name_or_path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parser, path


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    """Apply ``section.key=value`` strings."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key.strip()] = value.strip()


def from_parser(parser: configparser.ConfigParser, base_dir=None) -> PipelineConfig:
    if "dataset" not in parser:
        raise ConfigError("missing [dataset] section")
    ds = parser["dataset"]
    if "manifest" in ds:
        mpath = Path(ds["manifest"])
        if base_dir is not None and not mpath.is_absolute():
            mpath = Path(base_dir) / mpath
        manifest = DatasetManifest.from_file(mpath)
        if ds.get("subsample", "").strip():
            manifest.subsample = _positive(_typed(ds, "subsample", int, None, "dataset"),
                                           "subsample", "dataset")
    else:
        manifest = DatasetManifest.from_section(ds, base_dir)
    test_sub = _typed(ds, "test_subsample", int, None, "dataset") if ds.get("test_subsample", "").strip() else None
    _positive(test_sub, "test_subsample", "dataset")

    names = sorted((s for s in parser.sections() if re.fullmatch(r"layer\d+", s)),
                   key=lambda s: int(s[5:]))
    if not names:
        raise ConfigError("at least one layer is required: add a [layer1] section")
    if names[0] != "layer1" or [int(n[5:]) for n in names] != list(range(1, len(names) + 1)):
        raise ConfigError(f"layer sections must be numbered layer1..layerN, got {names}")
    layers = [_layer(parser[n], n) for n in names]
    if "scaling" in parser:
        sc = parser["scaling"]
        depth = _typed(sc, "depth", int, 1, "scaling")
        if depth < 1:
            raise ConfigError("[scaling] depth must be >= 1")
        if len(layers) > 1:
            raise ConfigError("use either [scaling] or explicit [layer2..] sections, not both")
        try:
            k = ScalingFactors(_typed(sc, "k_radius", float, 1.0, "scaling"),
                               _typed(sc, "k_tau", float, 1.0, "scaling"),
                               _typed(sc, "k_code", float, 1.0, "scaling"))
        except ConfigError as exc:
            raise ConfigError(f"[scaling] {exc}") from exc
        layers = cascade(layers[0], k, depth)

    a = parser["autoencoder"] if "autoencoder" in parser else {}
    ae = AutoencoderParams(
        threshold=_positive(_typed(a, "threshold", float, 0.01, "autoencoder"), "threshold", "autoencoder", strict=False),
        learning_rate=_positive(_typed(a, "learning_rate", float, 0.05, "autoencoder"), "learning_rate", "autoencoder"),
        max_surfaces=_positive(_typed(a, "max_surfaces", int, 200_000, "autoencoder"), "max_surfaces", "autoencoder"),
        surfaces_per_sample=_positive(_typed(a, "surfaces_per_sample", int, 200, "autoencoder"), "surfaces_per_sample", "autoencoder"),
        window=_positive(_typed(a, "window", int, 1000, "autoencoder"), "window", "autoencoder"),
        activation=a.get("activation", "sigmoid").strip(),
        decoder_activation=a.get("decoder_activation", "sigmoid").strip(),
    )
    c = parser["classifier"] if "classifier" in parser else {}
    clf = ClassifierParams(
        hidden=_positive(_typed(c, "hidden", int, 200, "classifier"), "hidden", "classifier"),
        epochs=_positive(_typed(c, "epochs", int, 50, "classifier"), "epochs", "classifier", strict=False),
        learning_rate=_positive(_typed(c, "learning_rate", float, 0.01, "classifier"), "learning_rate", "classifier"),
        batch_size=_positive(_typed(c, "batch_size", int, 1, "classifier"), "batch_size", "classifier"),
        activation=c.get("activation", "sigmoid").strip(),
        loss=c.get("loss", "cross_entropy").strip(),
        standardize=_typed(c, "standardize", bool, False, "classifier"),
        crop_border=_typed(c, "crop_border", bool, False, "classifier"),
    )
    for key, value in (("autoencoder.activation", ae.activation),
                       ("autoencoder.decoder_activation", ae.decoder_activation),
                       ("classifier.activation", clf.activation)):
        if value not in ("sigmoid", "rectifier", "identity"):
            raise ConfigError(f"[{key.split('.')[0]}] {key.split('.')[1]}: unknown activation {value!r}")
    if clf.loss not in ("cross_entropy", "squared"):
        raise ConfigError(f"[classifier] loss: unknown loss {clf.loss!r}")

    r = parser["run"] if "run" in parser else {}
    seed = _typed(r, "seed", int, 0, "run")
    workers = _positive(_typed(r, "workers", int, 1, "run"), "workers", "run")
    refractory = _positive(_typed(r, "refractory", "duration", 0, "run"), "refractory", "run", strict=False)

    # the snapshot carries the resolved dataset so a bundle evaluates from anywhere
    snap = configparser.ConfigParser(interpolation=None)
    snap.read_dict(parser)
    snap.remove_section("dataset")
    snap.read_dict({"dataset": manifest_to_dict(manifest, test_sub)})
    buf = io.StringIO()
    snap.write(buf)
    return PipelineConfig(manifest, layers, ae, clf, seed, workers, int(refractory),
                          test_sub, buf.getvalue())


def manifest_to_dict(m: DatasetManifest, test_subsample=None) -> dict:
    d = {
        "root": str(m.root), "layout": m.layout, "classes": ",".join(m.classes),
        "width": str(m.width), "height": str(m.height), "train_dir": m.train_dir,
        "test_dir": m.test_dir, "pattern": m.pattern,
    }
    if m.subsample is not None:
        d["subsample"] = str(m.subsample)
    if test_subsample is not None:
        d["test_subsample"] = str(test_subsample)
    return d


def load_config(name_or_path, overrides=None) -> PipelineConfig:
    parser, path = read_parser(name_or_path)
    apply_overrides(parser, overrides)
    return from_parser(parser, base_dir=path.parent)


def loads_config(text: str, base_dir=None) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return from_parser(parser, base_dir)
