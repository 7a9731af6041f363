"""Shared containers: masks and observed datasets.

Masks are ``uint8`` arrays with 1 = missing.  Missingness is never encoded in
the values themselves; a value stored under a set mask bit is ground truth that
only the thinning restore step and the bias oracle may read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = ["ObservedDataset", "subset_mask", "support", "as_mask", "frozen"]


def frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def as_mask(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    return arr.astype(np.uint8)


def subset_mask(S: Iterable[int], d: int) -> np.ndarray:
    """Row mask with 1 exactly on the (0-based) indices in ``S``."""
    row = np.zeros(d, dtype=np.uint8)
    for j in S:
        if not 0 <= j < d:
            raise IndexError(f"index {j} out of range for dimension {d}")
        row[j] = 1
    return row


def support(row) -> frozenset[int]:
    return frozenset(int(j) for j in np.flatnonzero(np.asarray(row)))


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """Covariates, mask and responses.

    ``values`` may hold ground truth under masked entries (synthetic data) or
    arbitrary filler (loaded data). Use :meth:`observed` for the learner's view.
    """

    values: np.ndarray
    mask: np.ndarray
    responses: np.ndarray
    observed_index_set: frozenset[int] = field(default_factory=frozenset)
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        values = frozen(self.values, float)
        mask = frozen(as_mask(self.mask))
        y = frozen(self.responses, float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} does not match values {values.shape}")
        if y.shape != (values.shape[0],):
            raise ValueError("responses must have one entry per row")
        obs = frozenset(int(j) for j in self.observed_index_set)
        for j in sorted(obs):
            if not 0 <= j < values.shape[1]:
                raise IndexError(f"observed index {j} out of range")
            if mask[:, j].any():
                raise ValueError(f"column {j} is declared always observed but has missing entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "observed_index_set", obs)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def complete(cls, X, y, observed_index_set=(), columns=None) -> "ObservedDataset":
        X = np.asarray(X, float)
        return cls(X, np.zeros(X.shape, np.uint8), y, frozenset(observed_index_set), columns)

    def observed(self) -> np.ndarray:
        """Copy of the values with masked entries set to NaN."""
        out = np.array(self.values, dtype=float)
        out[self.mask.astype(bool)] = np.nan
        return out

    def oracle_values(self) -> np.ndarray:
        """Ground-truth values, including entries hidden by the mask."""
        return self.values

    def with_mask(self, mask) -> "ObservedDataset":
        return ObservedDataset(self.values, mask, self.responses, self.observed_index_set, self.columns)

    def subset(self, rows) -> "ObservedDataset":
        rows = np.asarray(rows)
        return ObservedDataset(
            self.values[rows], self.mask[rows], self.responses[rows], self.observed_index_set, self.columns
        )
