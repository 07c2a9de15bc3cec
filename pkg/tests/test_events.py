import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnet.errors import BoundsError, ConfigError, OrderingError
from dtnet.events import (
    NEVER, OFF, ON, Event, EventStream, SurfaceBuilder, TimestampMap, brute_force_time_surface,
    incremental_surfaces, refractory_filter, stream_surfaces, time_surface,
)

from conftest import random_stream


# -- TimestampMap --------------------------------------------------------------

def test_single_update_leaves_everything_else_never():
    m = TimestampMap(8, 8).update(Event(3, 4, 100, ON))
    assert m.get(3, 4, ON) == 100
    assert (m.last_time != NEVER).sum() == 1


def test_same_cell_keeps_latest():
    m = TimestampMap(8, 8)
    m.update(Event(3, 4, 100, ON)).update(Event(3, 4, 200, ON))
    assert m.get(3, 4, ON) == 200


def test_polarity_planes_are_independent():
    m = TimestampMap(8, 8)
    m.update(Event(3, 4, 100, ON)).update(Event(3, 4, 150, OFF))
    assert (m.get(3, 4, ON), m.get(3, 4, OFF)) == (100, 150)


@pytest.mark.parametrize("x,y", [(-1, 0), (8, 0), (0, 8), (0, -1)])
def test_update_rejects_off_sensor(x, y):
    with pytest.raises(BoundsError):
        TimestampMap(8, 8).update(Event(x, y, 0, ON))


def test_update_ordering_and_slack():
    m = TimestampMap(8, 8)
    m.update(Event(0, 0, 1000, ON))
    with pytest.raises(OrderingError):
        m.update(Event(1, 0, 999, ON))
    lax = TimestampMap(8, 8, slack=5)
    lax.update(Event(0, 0, 1000, ON)).update(Event(0, 0, 996, ON))
    # a late event within slack never moves a cell backwards
    assert lax.get(0, 0, ON) == 1000


def test_context_center_only():
    m = TimestampMap(8, 8)
    e = Event(4, 4, 50, OFF)
    ctx = m.update(e).time_context(e, 1)
    assert ctx.shape == (3, 3, 2)
    assert np.argwhere(ctx != NEVER).tolist() == [[1, 1, 0]]


def test_context_corner_has_five_off_sensor_cells():
    m = TimestampMap(4, 4)
    for x in range(2):
        for y in range(2):
            m.update(Event(x, y, 10, ON))
    ctx = m.time_context(Event(0, 0, 10, ON), 1)
    seen = (ctx[:, :, 1] != NEVER)
    assert seen.sum() == 4
    assert (~seen).sum() == 5
    assert seen[1:, 1:].all()


# -- decay -----------------------------------------------------------------------

def test_decay_examples():
    ctx = np.array([[[100, NEVER]]])
    assert time_surface(ctx, 100, 30.0).values[0, 0, 0] == 1.0
    assert time_surface(ctx, 100, 30.0).values[0, 0, 1] == 0.0
    assert time_surface(ctx, 130, 30.0).values[0, 0, 0] == pytest.approx(math.exp(-1), abs=1e-15)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_decay_rejects_nonpositive_tau(tau):
    with pytest.raises(ConfigError):
        time_surface(np.zeros((1, 1, 2), dtype=np.int64), 0, tau)


def test_brute_force_lone_event():
    s = EventStream.from_events([(5, 5, 1000, ON)], 16, 16)
    v = brute_force_time_surface(s, 0, 2, 100.0).values
    assert v[2, 2, 1] == 1.0
    assert v.sum() == 1.0


def test_equal_timestamp_permutation_is_invisible():
    base = [(1, 1, 10, ON), (2, 1, 50, OFF), (3, 1, 50, ON), (2, 2, 50, ON), (2, 1, 60, ON)]
    perm = [base[0], base[3], base[1], base[2], base[4]]
    a = EventStream.from_events(base, 8, 8)
    b = EventStream.from_events(perm, 8, 8)
    np.testing.assert_array_equal(brute_force_time_surface(a, 4, 2, 20.0).values,
                                  brute_force_time_surface(b, 4, 2, 20.0).values)


@pytest.mark.parametrize("seed", range(5))
def test_fast_and_incremental_paths_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, 400, 12, 10, max_gap=40)
    fast = stream_surfaces(s, 2, 75.0)
    slow = incremental_surfaces(s, 2, 75.0)
    oracle = np.stack([brute_force_time_surface(s, i, 2, 75.0).flat() for i in range(len(s))])
    np.testing.assert_allclose(fast, oracle, rtol=0, atol=1e-12)
    np.testing.assert_allclose(slow, oracle, rtol=0, atol=1e-12)


def test_chunked_builder_equals_single_pass(rng):
    s = random_stream(rng, 1000, 20, 20)
    whole = stream_surfaces(s, 3, 200.0)
    b = SurfaceBuilder(20, 20, 3, 200.0)
    ch = (s.p > 0).astype(np.int64)
    parts = [b.process(s.x[i:i + 77], s.y[i:i + 77], s.t[i:i + 77], ch[i:i + 77])
             for i in range(0, len(s), 77)]
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_builder_rejects_bad_input():
    b = SurfaceBuilder(4, 4, 1, 10.0)
    with pytest.raises(BoundsError):
        b.process([4], [0], [0], [0])
    with pytest.raises(BoundsError):
        b.process([0], [0], [0], [2])
    with pytest.raises(ConfigError):
        SurfaceBuilder(4, 4, 1, 0.0)
    assert b.process([], [], [], []).shape == (0, 18)


# -- properties ------------------------------------------------------------------

streams = st.builds(
    lambda seed, n, w, h, gap: random_stream(np.random.default_rng(seed), n, w, h, gap),
    st.integers(0, 2**32 - 1), st.integers(1, 120), st.integers(1, 12), st.integers(1, 12),
    st.integers(0, 300),
)


@settings(max_examples=60, deadline=None)
@given(s=streams, radius=st.integers(1, 3), tau=st.floats(1.0, 1e5))
def test_range_and_center(s, radius, tau):
    surf = stream_surfaces(s, radius, tau).reshape(len(s), 2 * radius + 1, 2 * radius + 1, 2)
    assert surf.min() >= 0.0 and surf.max() <= 1.0
    centre = surf[np.arange(len(s)), radius, radius, (s.p > 0).astype(int)]
    np.testing.assert_array_equal(centre, 1.0)


@settings(max_examples=60, deadline=None)
@given(s=streams, radius=st.integers(1, 3), tau=st.floats(1.0, 1e4),
       delays=st.lists(st.integers(0, 10**6), min_size=2, max_size=6))
def test_monotone_decay_on_frozen_map(s, radius, tau, delays):
    m = TimestampMap(s.width, s.height)
    for e in s:
        m.update(e)
    last = s[len(s) - 1]
    ctx = m.time_context(last, radius)
    values = [time_surface(ctx, last.t + d, tau).values for d in sorted(delays)]
    for earlier, later in zip(values, values[1:]):
        assert (later <= earlier).all()


@settings(max_examples=40, deadline=None)
@given(s=streams, radius=st.integers(1, 2), tau=st.floats(1.0, 1e4), k=st.integers(2, 1000))
def test_scale_property(s, radius, tau, k):
    scaled = EventStream(s.width, s.height, s.x, s.y, s.t * k, s.p)
    np.testing.assert_allclose(stream_surfaces(scaled, radius, tau * k),
                               stream_surfaces(s, radius, tau), rtol=1e-12, atol=1e-15)


# -- stream helpers ----------------------------------------------------------------

def test_validate_reports_first_offender():
    s = EventStream.from_events([(0, 0, 5, ON), (9, 0, 6, ON)], 4, 4)
    with pytest.raises(BoundsError, match="event 1"):
        s.validate()
    s = EventStream.from_events([(0, 0, 5, ON), (1, 0, 3, ON)], 4, 4)
    with pytest.raises(OrderingError, match="event 1"):
        s.validate()
    s.validate(slack=2)


def test_refractory_filter():
    s = EventStream.from_events(
        [(0, 0, 0, ON), (0, 0, 5, ON), (0, 0, 5, OFF), (0, 0, 12, ON), (1, 0, 13, ON)], 4, 4)
    kept = refractory_filter(s, 10)
    assert kept.t.tolist() == [0, 5, 12, 13]
    assert refractory_filter(s, 0) is s
