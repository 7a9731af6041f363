import itertools

import numpy as np
import pytest

from richsgd.core import ObservedDataset, as_mask, subset_mask, support


@pytest.mark.parametrize("S,d,expected", [((), 3, (0, 0, 0)), ({0, 2}, 3, (1, 0, 1)), ({0, 1}, 2, (1, 1))])
def test_subset_mask_examples(S, d, expected):
    assert tuple(subset_mask(S, d)) == expected


def test_subset_mask_out_of_range():
    with pytest.raises(IndexError):
        subset_mask({3}, 3)


@pytest.mark.parametrize("d", range(1, 13))
def test_support_round_trip_exhaustive(d):
    for s in range(1 << d):
        S = frozenset(j for j in range(d) if s >> j & 1)
        assert support(subset_mask(S, d)) == S


def test_as_mask_rejects_non_binary():
    with pytest.raises(ValueError):
        as_mask([[0, 2]])
    assert as_mask(np.array([[True, False]])).dtype == np.uint8


def test_dataset_rejects_mask_on_observed_column():
    X = np.ones((3, 2))
    M = np.array([[0, 1], [0, 0], [0, 0]])
    with pytest.raises(ValueError, match="always observed"):
        ObservedDataset(X, M, np.zeros(3), frozenset({1}))
    ObservedDataset(X, M, np.zeros(3), frozenset({0}))


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        ObservedDataset(np.ones((3, 2)), np.zeros((3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        ObservedDataset(np.ones((3, 2)), np.zeros((3, 2)), np.zeros(4))


def test_dataset_views_and_immutability():
    X = np.arange(6.0).reshape(3, 2)
    M = np.array([[0, 1], [0, 0], [1, 0]])
    data = ObservedDataset(X, M, np.zeros(3))
    obs = data.observed()
    assert np.isnan(obs[0, 1]) and np.isnan(obs[2, 0]) and obs[1, 1] == 3.0
    assert np.array_equal(data.oracle_values(), X)
    with pytest.raises(ValueError):
        data.values[0, 0] = 5.0
    X[0, 0] = 100.0  # constructor copied
    assert data.values[0, 0] == 0.0
    sub = data.subset([2])
    assert sub.n == 1 and sub.mask[0, 0] == 1
    assert ObservedDataset.complete(X, np.zeros(3)).mask.sum() == 0


def test_with_mask_keeps_values():
    data = ObservedDataset.complete(np.ones((2, 2)), np.zeros(2))
    masked = data.with_mask([[1, 0], [0, 0]])
    assert masked.mask.sum() == 1 and np.array_equal(masked.values, data.values)
    assert list(itertools.chain(masked.mask.ravel())) == [1, 0, 0, 0]
