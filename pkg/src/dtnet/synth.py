"""Synthetic stand-ins for event datasets, built through the frame-to-event path.

``saccade_digits`` imitates the N-MNIST recording protocol: a static digit is
moved along three straight saccades forming a triangle while a level-crossing
sensor watches. The digits are scikit-learn's bundled 8x8 handwritten set,
upsampled to 28x28 and centred on a 34x34 sensor, so no download is needed.

``moving_shapes`` produces a two-class car/background-like task: a rigid
wheeled box driving across the field versus drifting clutter.

Neither is a substitute for the real recordings; they exist so the whole
pipeline can be exercised and regression-tested offline.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import ndimage

from .dataset_io import FrameSequence, frames_to_events, write_dataset
from .events import EventStream

NMNIST_SIZE = 34
DIGIT_SIZE = 28
# saccade triangle vertices in pixels, and duration of one saccade in µs
SACCADE_PATH = ((0.0, 0.0), (1.5, 3.0), (3.0, 0.0), (0.0, 0.0))
SACCADE_US = 100_000


def _digit_images():
    from sklearn.datasets import load_digits

    digits = load_digits()
    return digits.images / 16.0, digits.target


def _upsample(img8: np.ndarray) -> np.ndarray:
    big = ndimage.zoom(img8, DIGIT_SIZE / img8.shape[0], order=1)
    return np.clip(big, 0.0, 1.0)


def saccade_stream(image: np.ndarray, label: Optional[int] = None, frame_us: int = 1000,
                   threshold: float = 0.15, rng=None) -> EventStream:
    """Events seen by a sensor sweeping a static image along the saccade triangle."""
    rng = np.random.default_rng(rng)
    canvas = np.zeros((NMNIST_SIZE, NMNIST_SIZE))
    off = (NMNIST_SIZE - DIGIT_SIZE) // 2 - 1
    canvas[off:off + DIGIT_SIZE, off:off + DIGIT_SIZE] = image
    start = rng.uniform(-0.5, 0.5, size=2)
    steps = SACCADE_US // frame_us
    frames, stamps = [], []
    t = 0
    for (x0, y0), (x1, y1) in zip(SACCADE_PATH[:-1], SACCADE_PATH[1:]):
        for k in range(steps):
            a = k / steps
            dx, dy = start[0] + x0 + a * (x1 - x0), start[1] + y0 + a * (y1 - y0)
            frames.append(ndimage.shift(canvas, (dy, dx), order=1, mode="constant"))
            stamps.append(t)
            t += frame_us
    return frames_to_events(FrameSequence(np.array(frames), stamps), threshold, label)


def saccade_digits(train_per_class: int, test_per_class: int, seed: int = 0,
                   threshold: float = 0.15):
    """(train, test) lists of digit streams; the first images of each class go to train."""
    images, targets = _digit_images()
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(10):
        idx = np.flatnonzero(targets == c)
        need = train_per_class + test_per_class
        if need > len(idx):
            raise ValueError(f"class {c} has only {len(idx)} images, {need} requested")
        for j, i in enumerate(idx[:need]):
            s = saccade_stream(_upsample(images[i]), c, threshold=threshold, rng=rng)
            (train if j < train_per_class else test).append(s)
    return train, test


def moving_shapes(train_per_class: int, test_per_class: int, width: int = 32,
                  height: int = 32, seed: int = 0, threshold: float = 0.2):
    """(train, test) streams of class 0 = drifting clutter, class 1 = a driving box."""
    rng = np.random.default_rng(seed)
    n_frames, frame_us = 50, 2000

    def scene(label):
        frames = np.zeros((n_frames, height, width))
        if label == 1:
            w, h = rng.integers(8, 13), rng.integers(5, 8)
            y = rng.integers(height // 3, height - h - 3)
            speed = rng.uniform(0.3, 0.6) * rng.choice([-1, 1])
            x = rng.uniform(0, width - w)
            for f in range(n_frames):
                xi = int(round(x + speed * f)) % (width - w)
                frames[f, y:y + h, xi:xi + w] = 0.8
                for wx in (xi + 1, xi + w - 3):   # wheels
                    frames[f, y + h:y + h + 2, wx:wx + 2] = 1.0
        else:
            blobs = rng.uniform(0, 1, size=(6, 4))
            for f in range(n_frames):
                for bx, by, vx, vy in blobs:
                    cx = int((bx * width + (vx - 0.5) * f * 0.4) % width)
                    cy = int((by * height + (vy - 0.5) * f * 0.4) % height)
                    frames[f, cy:cy + 2, cx:cx + 2] = 0.7
        stamps = np.arange(n_frames) * frame_us
        return frames_to_events(FrameSequence(frames, stamps), threshold, label)

    train = [scene(c) for c in (0, 1) for _ in range(train_per_class)]
    test = [scene(c) for c in (0, 1) for _ in range(test_per_class)]
    return train, test


def write_surrogate(kind: str, root, train_per_class: int, test_per_class: int,
                    seed: int = 0) -> str:
    """Write a surrogate dataset in the class-directory layout; returns a manifest text."""
    if kind == "digits":
        train, test = saccade_digits(train_per_class, test_per_class, seed)
        classes = [str(i) for i in range(10)]
        dirs = ("Train", "Test")
        width = height = NMNIST_SIZE
    elif kind == "shapes":
        train, test = moving_shapes(train_per_class, test_per_class, seed=seed)
        classes = ["background", "cars"]
        dirs = ("train", "test")
        width, height = train[0].geometry
    else:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    write_dataset(train, root, dirs[0], classes)
    write_dataset(test, root, dirs[1], classes)
    return (
        "[dataset]\n"
        f"root = {root}\n"
        "layout = class_dirs\n"
        f"classes = {','.join(classes)}\n"
        f"width = {width}\nheight = {height}\n"
        f"train_dir = {dirs[0]}\ntest_dir = {dirs[1]}\n"
    )
