"""Binary event files, frame-to-event conversion and dataset manifests.

Event files use the 40-bit record layout of the N-MNIST / N-CARS releases::

    byte 0      x
    byte 1      y
    byte 2      bit 7 polarity (1 = ON), bits 6..0 timestamp[22:16]
    bytes 3-4   timestamp[15:0]        (big-endian, microseconds)
"""
from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EncodingError, InputError, OrderingError, ParseError
from .events import OFF, ON, EventStream

log = logging.getLogger(__name__)

RECORD_SIZE = 5
MAX_TIMESTAMP = (1 << 23) - 1


def parse_event_file(data: bytes, width: int = 256, height: int = 256,
                     label: Optional[int] = None, slack: int = 0) -> EventStream:
    if len(data) % RECORD_SIZE:
        offset = len(data) - len(data) % RECORD_SIZE
        raise ParseError(
            f"truncated record: {len(data)} bytes is not a multiple of {RECORD_SIZE}",
            offset=offset,
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_SIZE).astype(np.int64)
    x = raw[:, 0]
    y = raw[:, 1]
    p = np.where(raw[:, 2] & 0x80, ON, OFF)
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    if len(t) > 1:
        running = np.maximum.accumulate(t)
        late = t[1:] < running[:-1] - slack
        if late.any():
            i = int(np.flatnonzero(late)[0]) + 1
            raise OrderingError(
                f"record {i} (offset {i * RECORD_SIZE}): timestamp {t[i]} "
                f"regresses from {running[i - 1]}"
            )
    return EventStream(width, height, x, y, t, p, label)


def write_event_file(stream: EventStream) -> bytes:
    n = len(stream)
    if n == 0:
        return b""
    for name, arr, hi in (("x", stream.x, 255), ("y", stream.y, 255),
                          ("t", stream.t, MAX_TIMESTAMP)):
        bad = (arr < 0) | (arr > hi)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise EncodingError(f"event {i}: {name}={arr[i]} does not fit the record field")
    bad = ~np.isin(stream.p, (OFF, ON))
    if bad.any():
        raise EncodingError(f"event {int(np.flatnonzero(bad)[0])}: invalid polarity")
    out = np.empty((n, RECORD_SIZE), dtype=np.uint8)
    out[:, 0] = stream.x
    out[:, 1] = stream.y
    out[:, 2] = ((stream.p == ON).astype(np.int64) << 7) | (stream.t >> 16)
    out[:, 3] = (stream.t >> 8) & 0xFF
    out[:, 4] = stream.t & 0xFF
    return out.tobytes()


def read_event_file(path, width=256, height=256, label=None) -> EventStream:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return parse_event_file(data, width, height, label)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", exc.offset) from exc
    except OrderingError as exc:
        raise OrderingError(f"{path}: {exc}") from exc


# -- frames -------------------------------------------------------------------

@dataclass
class FrameSequence:
    frames: np.ndarray       # (n, height, width) gray levels in [0, 1]
    timestamps: np.ndarray   # (n,) microseconds, strictly increasing

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if isinstance(self.frames, np.ndarray):
            if self.frames.ndim != 3:
                raise InputError("frames must be a (n, height, width) array")
        else:
            shapes = {np.shape(f) for f in self.frames}
            if len(shapes) > 1:
                raise InputError(f"frames have mismatched shapes {sorted(shapes)}")
            self.frames = np.asarray(self.frames, dtype=np.float64)
        if len(self.frames) != len(self.timestamps):
            raise InputError("one timestamp per frame required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InputError("frame timestamps must be strictly increasing")

    @property
    def geometry(self):
        return (self.frames.shape[2], self.frames.shape[1])


def frames_to_events(frames: FrameSequence, threshold: float, label=None) -> EventStream:
    """Emulate a level-crossing sensor on a frame sequence.

    Each pixel keeps a reference level, initialised from the first frame. A
    change of ``k * threshold`` or more against the reference emits ``k``
    events of that sign at the frame's timestamp and moves the reference by
    exactly ``k * threshold``.
    """
    if not threshold > 0:
        raise ConfigError(f"contrast threshold must be > 0, got {threshold}")
    if len(frames.frames) < 2:
        raise InputError("at least two frames are needed")
    height, width = frames.frames.shape[1:]
    ref = np.array(frames.frames[0], dtype=np.float64)
    xs, ys, ts, ps = [], [], [], []
    for frame, t in zip(frames.frames[1:], frames.timestamps[1:]):
        delta = frame - ref
        # tolerance absorbs float noise such as 0.6 / 0.2 == 2.9999999999999996
        k = np.floor(np.abs(delta) / threshold + 1e-9).astype(np.int64)
        iy, ix = np.nonzero(k)
        if len(iy) == 0:
            continue
        counts = k[iy, ix]
        sign = np.sign(delta[iy, ix]).astype(np.int64)
        xs.append(np.repeat(ix, counts))
        ys.append(np.repeat(iy, counts))
        ps.append(np.repeat(sign, counts))
        ts.append(np.full(counts.sum(), t, dtype=np.int64))
        ref[iy, ix] += sign * counts * threshold
    if not ts:
        return EventStream.empty(width, height, label)
    return EventStream(width, height, np.concatenate(xs), np.concatenate(ys),
                       np.concatenate(ts), np.concatenate(ps), label)


def load_frame_sequence(directory) -> FrameSequence:
    """Load 8-bit grayscale PNG frames plus a ``timestamps.txt`` sidecar (one µs value per line)."""
    from PIL import Image

    directory = Path(directory)
    stamps_path = directory / "timestamps.txt"
    if not stamps_path.exists():
        raise InputError(f"missing timestamp sidecar {stamps_path}")
    stamps = [int(line) for line in stamps_path.read_text().split()]
    paths = sorted(directory.glob("*.png"))
    if len(paths) != len(stamps):
        raise InputError(f"{len(paths)} frames but {len(stamps)} timestamps in {directory}")
    frames = []
    for path in paths:
        with Image.open(path) as img:
            frames.append(np.asarray(img.convert("L"), dtype=np.float64) / 255.0)
    return FrameSequence(frames, stamps)


def save_frame_sequence(frames: FrameSequence, directory) -> None:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames.frames):
        img = np.clip(np.rint(frame * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img, mode="L").save(directory / f"frame_{i:06d}.png")
    (directory / "timestamps.txt").write_text("".join(f"{t}\n" for t in frames.timestamps))


# -- manifests ----------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Where a labelled event dataset lives and how to enumerate it.

    ``layout = class_dirs`` expects ``<root>/<split dir>/<class>/*.bin``
    (the N-MNIST release layout). ``layout = label_file`` reads
    ``<root>/<split dir>/labels.txt`` with lines ``<relative path> <class>``.
    """

    root: Path
    width: int
    height: int
    classes: list[str] = field(default_factory=lambda: [str(i) for i in range(10)])
    layout: str = "class_dirs"
    train_dir: str = "Train"
    test_dir: str = "Test"
    subsample: Optional[int] = None
    pattern: str = "*.bin"

    @classmethod
    def from_section(cls, section, base_dir=None) -> "DatasetManifest":
        def get(key, default=None):
            return section.get(key, default) if hasattr(section, "get") else default

        root = get("root")
        if not root:
            raise ConfigError("[dataset] root: missing")
        root = Path(os.path.expandvars(os.path.expanduser(root)))
        if base_dir is not None and not root.is_absolute():
            root = Path(base_dir) / root
        try:
            width = int(get("width", 34))
            height = int(get("height", 34))
        except ValueError as exc:
            raise ConfigError(f"[dataset] width/height: must be integers ({exc})") from exc
        if not (0 < width <= 256 and 0 < height <= 256):
            raise ConfigError(f"[dataset] width/height: geometry {width}x{height} outside 1..256")
        classes = [c.strip() for c in get("classes", "0,1,2,3,4,5,6,7,8,9").split(",") if c.strip()]
        if not classes:
            raise ConfigError("[dataset] classes: empty")
        layout = get("layout", "class_dirs")
        if layout not in ("class_dirs", "label_file"):
            raise ConfigError(f"[dataset] layout: unknown layout {layout!r}")
        sub = get("subsample")
        subsample = int(sub) if sub not in (None, "", "none") else None
        if subsample is not None and subsample < 1:
            raise ConfigError("[dataset] subsample: must be >= 1")
        return cls(root, width, height, classes, layout, get("train_dir", "Train"),
                   get("test_dir", "Test"), subsample, get("pattern", "*.bin"))

    @classmethod
    def from_file(cls, path) -> "DatasetManifest":
        parser = configparser.ConfigParser()
        path = Path(path)
        if not parser.read(path):
            raise InputError(f"cannot read manifest {path}")
        if "dataset" not in parser:
            raise ConfigError(f"{path}: missing [dataset] section")
        return cls.from_section(parser["dataset"], base_dir=path.parent)

    def split_dir(self, split: str) -> Path:
        if split not in ("train", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return self.root / (self.train_dir if split == "train" else self.test_dir)

    def entries(self, split: str) -> list[tuple[Path, int]]:
        """Deterministic (path, class index) listing, optionally first-K per class."""
        base = self.split_dir(split)
        if not self.root.exists():
            raise InputError(f"dataset root {self.root} does not exist")
        index = {c: i for i, c in enumerate(self.classes)}
        found: list[tuple[Path, int]] = []
        if self.layout == "class_dirs":
            if not base.exists():
                raise InputError(f"dataset split directory {base} does not exist")
            for sub in sorted(p for p in base.iterdir() if p.is_dir()):
                if sub.name not in index:
                    raise InputError(f"unknown label {sub.name!r} at {sub}")
                found.extend((f, index[sub.name]) for f in sorted(sub.glob(self.pattern)))
        else:
            labels = base / "labels.txt"
            if not labels.exists():
                raise InputError(f"missing label file {labels}")
            for n, line in enumerate(labels.read_text().splitlines(), 1):
                if not line.strip() or line.startswith("#"):
                    continue
                rel, cls_name = line.rsplit(None, 1)
                if cls_name not in index:
                    raise InputError(f"{labels}:{n}: unknown label {cls_name!r}")
                found.append((base / rel, index[cls_name]))
            found.sort(key=lambda e: (e[1], str(e[0])))
        if not found:
            log.warning("dataset split %s under %s is empty", split, base)
        if self.subsample is not None:
            kept, seen = [], {}
            for path, label in found:
                if seen.get(label, 0) < self.subsample:
                    kept.append((path, label))
                    seen[label] = seen.get(label, 0) + 1
            found = kept
        return found


def load_dataset(manifest: DatasetManifest, split: str) -> list[EventStream]:
    """Read every sample of a split; coordinates outside the declared geometry raise."""
    streams = []
    for path, label in manifest.entries(split):
        stream = read_event_file(path, manifest.width, manifest.height, label)
        try:
            stream.validate()
        except InputError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        streams.append(stream)
    return streams


def write_dataset(samples: Sequence[EventStream], root, split_dir: str,
                  classes: Sequence[str]) -> None:
    """Write streams into the ``class_dirs`` layout, numbering files per class."""
    counts: dict[int, int] = {}
    for stream in samples:
        n = counts.get(stream.label, 0)
        counts[stream.label] = n + 1
        d = Path(root) / split_dir / classes[stream.label]
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{n:05d}.bin").write_bytes(write_event_file(stream))
