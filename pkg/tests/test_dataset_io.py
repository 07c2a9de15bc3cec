import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnet.dataset_io import (
    MAX_TIMESTAMP, DatasetManifest, FrameSequence, frames_to_events, load_dataset,
    load_frame_sequence, parse_event_file, read_event_file, save_frame_sequence,
    write_dataset, write_event_file,
)
from dtnet.errors import ConfigError, EncodingError, InputError, OrderingError, ParseError
from dtnet.events import OFF, ON, Event, EventStream

from conftest import random_stream


def decode_record(rec: bytes) -> Event:
    """Independent decoder: treat the record as one 40-bit big-endian integer."""
    word = int.from_bytes(rec, "big")
    x = word >> 32
    y = (word >> 24) & 0xFF
    pol = (word >> 23) & 1
    t = word & ((1 << 23) - 1)
    return Event(x, y, t, ON if pol else OFF)


def test_decoder_oracle_on_hand_checked_records():
    assert decode_record(bytes([0x0A, 0x14, 0x80, 0x00, 0x64])) == Event(10, 20, 100, ON)
    assert decode_record(bytes([0, 0, 0, 0, 0])) == Event(0, 0, 0, OFF)
    # 0x7F 0xFF 0xFF is the largest timestamp with polarity OFF
    assert decode_record(bytes([0xFF, 0x01, 0x7F, 0xFF, 0xFF])) == Event(255, 1, MAX_TIMESTAMP, OFF)


@pytest.mark.parametrize("rec,expected", [
    (bytes([0x0A, 0x14, 0x80, 0x00, 0x64]), Event(10, 20, 100, ON)),
    (bytes([0, 0, 0, 0, 0]), Event(0, 0, 0, OFF)),
])
def test_parse_examples(rec, expected):
    s = parse_event_file(rec)
    assert list(s) == [expected]


def test_parser_agrees_with_oracle(rng):
    s = random_stream(rng, 500, 256, 256, max_gap=16000)
    data = write_event_file(s)
    oracle = [decode_record(data[i:i + 5]) for i in range(0, len(data), 5)]
    assert list(parse_event_file(data)) == oracle == list(s)


def test_truncated_record_reports_offset():
    with pytest.raises(ParseError) as info:
        parse_event_file(b"\x00" * 4)
    assert info.value.offset == 0
    with pytest.raises(ParseError) as info:
        parse_event_file(b"\x00" * 13)
    assert info.value.offset == 10


def test_timestamp_regression_names_record():
    s = EventStream.from_events([(0, 0, 10, ON), (0, 0, 20, ON), (0, 0, 5, ON)], 4, 4)
    data = write_event_file(s)
    with pytest.raises(OrderingError, match="record 2"):
        parse_event_file(data)
    assert len(parse_event_file(data, slack=15)) == 3


def test_encoding_limits():
    assert write_event_file(EventStream.empty(34, 34)) == b""
    s = EventStream.from_events([(0, 0, 1, ON), (0, 0, 2**23, ON)], 34, 34)
    with pytest.raises(EncodingError, match="event 1"):
        write_event_file(s)
    with pytest.raises(EncodingError, match="event 0"):
        write_event_file(EventStream.from_events([(256, 0, 0, ON)], 300, 1))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 1000))
def test_round_trip(seed, n):
    s = random_stream(np.random.default_rng(seed), n, 256, 256, max_gap=8000)
    assert parse_event_file(write_event_file(s), 256, 256) == s


def test_read_event_file_names_path(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x01\x02\x03")
    with pytest.raises(ParseError, match="bad.bin"):
        read_event_file(p)
    with pytest.raises(InputError, match="missing.bin"):
        read_event_file(tmp_path / "missing.bin")


# -- frames ------------------------------------------------------------------------

def _pair(a, b, shape=(2, 2)):
    return FrameSequence(np.array([np.full(shape, a), np.full(shape, b)]), [0, 1000])


def test_identical_frames_emit_nothing():
    assert len(frames_to_events(_pair(0.3, 0.3), 0.2)) == 0


def test_level_crossing_examples():
    s = frames_to_events(_pair(0.0, 0.5, (1, 1)), 0.2)
    assert list(s) == [Event(0, 0, 1000, ON)] * 2
    s = frames_to_events(_pair(0.5, 0.1, (1, 1)), 0.2)
    assert list(s) == [Event(0, 0, 1000, OFF)] * 2


def test_frame_validation():
    with pytest.raises(InputError):
        FrameSequence([np.zeros((2, 2)), np.zeros((3, 2))], [0, 1])
    with pytest.raises(InputError):
        FrameSequence(np.zeros((2, 2, 2)), [5, 5])
    with pytest.raises(ConfigError):
        frames_to_events(_pair(0, 1), 0.0)


@settings(max_examples=50, deadline=None)
@given(steps=st.integers(1, 40), k=st.integers(1, 9), n=st.integers(1, 20),
       up=st.booleans())
def test_monotone_ramp_counts(steps, k, n, up):
    # levels are exact multiples of 1/64 so the arithmetic is exact in binary
    theta = k / 64
    levels = np.arange(steps + 1) * (n / 64)
    if not up:
        levels = levels[::-1]
    frames = FrameSequence(levels[:, None, None] * np.ones((1, 1, 2)),
                           np.arange(steps + 1) * 10)
    s = frames_to_events(frames, theta)
    excursion = steps * n
    assert len(s) == 2 * (excursion // k)
    assert set(s.p.tolist()) <= {ON if up else OFF}


def test_frame_directory_round_trip(tmp_path, rng):
    frames = FrameSequence(rng.integers(0, 256, (3, 5, 7)) / 255.0, [0, 40, 90])
    save_frame_sequence(frames, tmp_path / "seq")
    back = load_frame_sequence(tmp_path / "seq")
    np.testing.assert_allclose(back.frames, frames.frames, atol=1e-12)
    np.testing.assert_array_equal(back.timestamps, frames.timestamps)
    assert back.geometry == (7, 5)


def test_frame_directory_needs_sidecar(tmp_path):
    (tmp_path / "seq").mkdir()
    with pytest.raises(InputError, match="timestamps"):
        load_frame_sequence(tmp_path / "seq")


# -- manifests -----------------------------------------------------------------------

def _write_classes(root, rng, per_class=12, classes=10, split="Train"):
    samples = [random_stream(rng, 20, 34, 34, label=c) for c in range(classes) for _ in range(per_class)]
    write_dataset(samples, root, split, [str(c) for c in range(classes)])
    return samples


def test_manifest_enumerates_and_subsamples(tmp_path, rng):
    _write_classes(tmp_path, rng)
    m = DatasetManifest(tmp_path, 34, 34)
    entries = m.entries("train")
    assert len({label for _, label in entries}) == 10
    assert len(entries) == 120
    m.subsample = 10
    streams = load_dataset(m, "train")
    assert np.bincount([s.label for s in streams]).tolist() == [10] * 10
    # first K in sorted order
    assert [p.name for p, label in m.entries("train") if label == 3] == [f"{i:05d}.bin" for i in range(10)]


def test_empty_split_warns(tmp_path, caplog):
    (tmp_path / "Test").mkdir()
    with caplog.at_level(logging.WARNING):
        assert load_dataset(DatasetManifest(tmp_path, 34, 34), "test") == []
    assert "empty" in caplog.text


def test_unknown_label_and_missing_root(tmp_path):
    (tmp_path / "Train" / "eleven").mkdir(parents=True)
    with pytest.raises(InputError, match="eleven"):
        DatasetManifest(tmp_path, 34, 34).entries("train")
    with pytest.raises(InputError, match="nowhere"):
        DatasetManifest(tmp_path / "nowhere", 34, 34).entries("train")


def test_label_file_layout(tmp_path, rng):
    d = tmp_path / "test"
    d.mkdir()
    for name in ("a.bin", "b.bin"):
        (d / name).write_bytes(write_event_file(random_stream(rng, 5, 34, 34)))
    (d / "labels.txt").write_text("# path label\nb.bin cars\na.bin background\n")
    m = DatasetManifest(tmp_path, 34, 34, ["background", "cars"], "label_file", test_dir="test")
    assert [(p.name, c) for p, c in m.entries("test")] == [("a.bin", 0), ("b.bin", 1)]
    (d / "labels.txt").write_text("a.bin trucks\n")
    with pytest.raises(InputError, match="trucks"):
        m.entries("test")


def test_out_of_geometry_sample_is_reported(tmp_path):
    s = EventStream.from_events([(40, 1, 0, ON)], 64, 64, label=0)
    write_dataset([s], tmp_path, "Train", ["0"])
    with pytest.raises(InputError, match="00000.bin"):
        load_dataset(DatasetManifest(tmp_path, 34, 34, ["0"]), "train")


def test_manifest_file_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("EV_ROOT", str(tmp_path))
    p = tmp_path / "m.ini"
    p.write_text("[dataset]\nroot = ${EV_ROOT}/data\nwidth = 120\nheight = 100\n"
                 "classes = background, cars\nsubsample = 3\n")
    m = DatasetManifest.from_file(p)
    assert (m.root, m.width, m.height, m.classes, m.subsample) == (
        tmp_path / "data", 120, 100, ["background", "cars"], 3)
    p.write_text("[dataset]\nroot = x\nwidth = 300\n")
    with pytest.raises(ConfigError, match="geometry"):
        DatasetManifest.from_file(p)
    p.write_text("[dataset]\nwidth = 3\n")
    with pytest.raises(ConfigError, match="root"):
        DatasetManifest.from_file(p)
