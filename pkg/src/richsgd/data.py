"""Synthetic generators, CSV ingestion and train-fold standardization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ObservedDataset, frozen

__all__ = [
    "SyntheticSpec",
    "Standardizer",
    "SYNTHETIC",
    "covariance",
    "generate_synthetic",
    "load_csv",
    "save_csv",
    "standardize",
    "train_test_split",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    family: str
    d: int
    n: int = 3000
    cov: str = "identity"
    rho: float = 0.0
    w_norm: float = 1.0
    noise: float = 1.0

    def __post_init__(self):
        if self.family not in ("linear", "logistic", "poisson"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.cov not in ("identity", "ar"):
            raise ValueError(f"unknown covariance {self.cov!r}")
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be positive")


# Poisson norm: E exp(w.x) = exp(|w|^2 / 2), so |w|^2 = 1.4 puts the log-mean near 0.7.
SYNTHETIC = {
    "synth_a_linear": SyntheticSpec("synth_a_linear", "linear", 10),
    "synth_b_linear": SyntheticSpec("synth_b_linear", "linear", 15, cov="ar", rho=0.9),
    "synth_a_logistic": SyntheticSpec("synth_a_logistic", "logistic", 10, w_norm=2.0),
    "synth_a_poisson": SyntheticSpec("synth_a_poisson", "poisson", 10, w_norm=float(np.sqrt(1.4))),
    "synth_b_poisson": SyntheticSpec("synth_b_poisson", "poisson", 8, w_norm=float(np.sqrt(1.4))),
}


def covariance(spec: SyntheticSpec) -> np.ndarray:
    if spec.cov == "identity":
        return np.eye(spec.d)
    idx = np.arange(spec.d)
    return spec.rho ** np.abs(idx[:, None] - idx[None, :])


def generate_synthetic(spec: SyntheticSpec | str, seed: int, n: int | None = None):
    """Return ``(X, y, w_star)`` with Gaussian covariates with the dataset's covariance."""
    if isinstance(spec, str):
        spec = SYNTHETIC[spec]
    n = spec.n if n is None else int(n)
    sigma = covariance(spec)
    try:
        root = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    rng = np.random.default_rng([int(seed), 0x5EED])
    w = rng.standard_normal(spec.d)
    w_star = spec.w_norm * w / np.linalg.norm(w)
    X = rng.standard_normal((n, spec.d)) @ root.T
    z = X @ w_star
    if spec.family == "linear":
        y = z + spec.noise * rng.standard_normal(n)
    elif spec.family == "logistic":
        y = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-z)), 1.0, -1.0)
    else:
        y = rng.poisson(np.exp(z)).astype(float)
    return X, y, w_star


def train_test_split(X, y, n_train: int):
    if not 0 < n_train < len(y):
        raise ValueError("n_train must leave a non-empty test fold")
    return (X[:n_train], y[:n_train]), (X[n_train:], y[n_train:])


def load_csv(path, response_column: str, na_token: str = "NA", observed=()) -> ObservedDataset:
    """Read a header-first CSV; cells equal to ``na_token`` become masked entries."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if response_column not in header:
        raise ValueError(f"{path}: response column {response_column!r} not in header")
    r = header.index(response_column)
    cols = [c for i, c in enumerate(header) if i != r]
    X = np.zeros((len(body), len(cols)))
    M = np.zeros((len(body), len(cols)), np.uint8)
    y = np.zeros(len(body))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        c = 0
        for k, cell in enumerate(row):
            cell = cell.strip()
            if k == r:
                if cell == na_token:
                    raise ValueError(f"{path}: missing response at row {i}")
                y[i] = _number(cell, path, i, header[k])
                continue
            if cell == na_token:
                M[i, c] = 1
            else:
                X[i, c] = _number(cell, path, i, header[k])
            c += 1
    return ObservedDataset(X, M, y, frozenset(observed), tuple(cols))


def _number(cell: str, path, i: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"{path}: malformed numeric cell {cell!r} at row {i}, column {col!r}") from None


def save_csv(path, data: ObservedDataset, response_column: str = "y", na_token: str = "NA") -> None:
    cols = list(data.columns) if data.columns else [f"x{j}" for j in range(data.d)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + [response_column])
        for i in range(data.n):
            cells = [na_token if data.mask[i, j] else repr(float(data.values[i, j])) for j in range(data.d)]
            w.writerow(cells + [repr(float(data.responses[i]))])


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    flagged: tuple = ()
    y_mean: float = 0.0
    y_scale: float = 1.0
    notes: dict = field(default_factory=dict)

    def apply(self, data: ObservedDataset) -> ObservedDataset:
        X = np.where(data.mask.astype(bool), 0.0, (data.values - self.mean) / self.scale)
        y = (data.responses - self.y_mean) / self.y_scale
        return ObservedDataset(X, data.mask, y, data.observed_index_set, data.columns)


def standardize(train: ObservedDataset, test: ObservedDataset | None = None, *, zscore_response: bool = False):
    """Column moments from the observed training entries, applied to both folds.

    Returns ``(train', test', transform)``; ``test'`` is ``None`` when no test fold is given.
    """
    obs = 1 - train.mask
    counts = obs.sum(axis=0)
    safe = np.maximum(counts, 1)
    mean = np.where(obs, train.values, 0.0).sum(axis=0) / safe
    var = (np.where(obs, train.values - mean, 0.0) ** 2).sum(axis=0) / safe
    sd = np.sqrt(var)
    flagged = tuple(int(j) for j in np.flatnonzero(sd <= 1e-12))
    if flagged:
        log.warning("columns %s have zero observed variance; scale set to 1", flagged)
    scale = np.where(sd > 1e-12, sd, 1.0)
    y_mean, y_scale = 0.0, 1.0
    if zscore_response:
        y_mean = float(train.responses.mean())
        y_scale = float(train.responses.std()) or 1.0
    t = Standardizer(frozen(mean), frozen(scale), flagged, y_mean, y_scale)
    return t.apply(train), (t.apply(test) if test is not None else None), t
