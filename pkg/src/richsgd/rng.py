"""Counter-based random streams.

Every draw is a pure function of ``(seed, tag, epoch, level, row, col)``, so a
mask entry or a thinning bit can be regenerated in isolation and two code paths
that ask for the same coordinates see the same numbers.  The mixer is the
SplitMix64 finalizer applied once per key field.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["CounterRNG", "MASK", "THIN", "XI", "XI_ALT", "PERTURB", "SHUFFLE"]

# stream tags
MASK = 1
THIN = 2
XI = 3
XI_ALT = 4
PERTURB = 5
SHUFFLE = 6

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


def _mix(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> _S30)
    h = h * _M1
    h = h ^ (h >> _S27)
    h = h * _M2
    return h ^ (h >> _S31)


def _absorb(h: np.ndarray, field) -> np.ndarray:
    f = np.asarray(field, dtype=np.int64).astype(np.uint64)
    return _mix(h + _GOLDEN + f * _GOLDEN)


class CounterRNG:
    """Stateless stream factory keyed by an integer seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __repr__(self) -> str:
        return f"CounterRNG(seed={self.seed})"

    def bits(self, tag: int, rows, cols, *, level: int = 0, epoch: int = 0) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        with np.errstate(over="ignore"):
            h = _mix(np.full((), self.seed, dtype=np.int64).astype(np.uint64) + _GOLDEN)
            for field in (tag, epoch, level):
                h = _absorb(h, field)
            h = _absorb(h, rows[:, None])
            h = _absorb(h, cols[None, :])
        return h

    def uniform(self, tag: int, rows, cols, *, level: int = 0, epoch: int = 0) -> np.ndarray:
        """Uniforms on the open interval (0, 1), shape ``(len(rows), len(cols))``."""
        h = self.bits(tag, rows, cols, level=level, epoch=epoch)
        return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, tag: int, rows, cols, *, level: int = 0, epoch: int = 0) -> np.ndarray:
        return ndtri(self.uniform(tag, rows, cols, level=level, epoch=epoch))

    def grid_uniform(self, tag: int, shape: tuple[int, int], **kw) -> np.ndarray:
        n, d = shape
        return self.uniform(tag, np.arange(n), np.arange(d), **kw)

    def grid_normal(self, tag: int, shape: tuple[int, int], **kw) -> np.ndarray:
        n, d = shape
        return self.normal(tag, np.arange(n), np.arange(d), **kw)

    def generator(self, *key: int) -> np.random.Generator:
        """Ordinary numpy generator for sequential work (shuffles, data generation)."""
        return np.random.default_rng([self.seed, *map(int, key)])
