import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from richsgd.rng import MASK, THIN, XI, CounterRNG


def test_same_key_same_bits():
    a = CounterRNG(7).uniform(MASK, np.arange(50), np.arange(4))
    b = CounterRNG(7).uniform(MASK, np.arange(50), np.arange(4))
    assert np.array_equal(a, b)


def test_entries_depend_only_on_their_own_key():
    rng = CounterRNG(3)
    full = rng.uniform(THIN, np.arange(100), np.arange(5), level=2, epoch=1)
    rows = np.array([17, 4, 99])
    part = rng.uniform(THIN, rows, np.array([3, 0]), level=2, epoch=1)
    assert np.array_equal(part, full[rows][:, [3, 0]])


def test_streams_differ_by_tag_level_epoch_and_seed():
    base = CounterRNG(1).uniform(MASK, np.arange(20), np.arange(3))
    for other in (
        CounterRNG(2).uniform(MASK, np.arange(20), np.arange(3)),
        CounterRNG(1).uniform(THIN, np.arange(20), np.arange(3)),
        CounterRNG(1).uniform(MASK, np.arange(20), np.arange(3), level=1),
        CounterRNG(1).uniform(MASK, np.arange(20), np.arange(3), epoch=1),
    ):
        assert not np.array_equal(base, other)


def test_uniform_moments():
    u = CounterRNG(0).grid_uniform(MASK, (100_000, 2))
    assert 0 < u.min() and u.max() < 1
    se = np.sqrt(1 / 12 / u.size)
    assert abs(u.mean() - 0.5) < 4 * se


def test_normal_moments():
    z = CounterRNG(5).grid_normal(XI, (50_000, 2))
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.03


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 10_000))
def test_uniform_strictly_inside_unit_interval(seed, row):
    u = CounterRNG(seed).uniform(MASK, [row], np.arange(8))
    assert ((u > 0) & (u < 1)).all()
