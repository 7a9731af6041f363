"""Linear, logistic and Poisson losses, gradients and closed-form bias terms."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import ObservedDataset
from .imputation import impute

__all__ = [
    "GlmFamily",
    "PopulationModel",
    "POISSON_CLIP",
    "WARNINGS",
    "loss",
    "gradient",
    "row_gradients",
    "empirical_risk_gradient",
    "linear_population_bias",
    "first_order_operator_column",
]

log = logging.getLogger(__name__)

POISSON_CLIP = 30.0
WARNINGS: Counter = Counter()

FAMILIES = ("linear", "logistic", "poisson")


@dataclass(frozen=True)
class GlmFamily:
    kind: str
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def validate_responses(self, y) -> None:
        y = np.asarray(y, float)
        if self.kind == "logistic" and not np.isin(y, (-1.0, 1.0)).all():
            raise ValueError("logistic responses must be -1 or +1")
        if self.kind == "poisson" and ((y < 0).any() or (y != np.round(y)).any()):
            raise ValueError("poisson responses must be non-negative integers")


def _linear_predictor(family: GlmFamily, w, X) -> np.ndarray:
    z = np.asarray(X, float) @ np.asarray(w, float)
    if family.kind == "poisson":
        over = np.abs(z) > POISSON_CLIP
        if over.any():
            WARNINGS["poisson_clip"] += int(over.sum())
            log.warning("clipped %d Poisson linear predictors to +/-%g", int(over.sum()), POISSON_CLIP)
            z = np.clip(z, -POISSON_CLIP, POISSON_CLIP)
    return z


def row_losses(family: GlmFamily, w, X, y) -> np.ndarray:
    z = _linear_predictor(family, w, X)
    y = np.asarray(y, float)
    if family.kind == "linear":
        out = 0.5 * (z - y) ** 2
    elif family.kind == "logistic":
        out = np.logaddexp(0.0, -y * z)
    else:
        out = np.exp(z) - y * z
    if family.ridge:
        out = out + 0.5 * family.ridge * float(np.dot(w, w))
    return out


def row_gradients(family: GlmFamily, w, X, y) -> np.ndarray:
    """Per-row gradients, shape ``(n, d)``, ridge term included."""
    X = np.asarray(X, float)
    z = _linear_predictor(family, w, X)
    y = np.asarray(y, float)
    if family.kind == "linear":
        r = z - y
    elif family.kind == "logistic":
        r = -y * expit(-y * z)
    else:
        r = np.exp(z) - y
    g = r[:, None] * X
    if family.ridge:
        g = g + family.ridge * np.asarray(w, float)
    return g


def loss(family: GlmFamily, w, x, y) -> float:
    return float(row_losses(family, w, np.atleast_2d(x), np.atleast_1d(y))[0])


def gradient(family: GlmFamily, w, x, y) -> np.ndarray:
    return row_gradients(family, w, np.atleast_2d(x), np.atleast_1d(y))[0]


def empirical_risk_gradient(family: GlmFamily, w, X, y) -> np.ndarray:
    X = np.asarray(X, float)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return row_gradients(family, w, X, y).mean(axis=0)


@dataclass(frozen=True, eq=False)
class PopulationModel:
    """Second moment ``S = E[X X^T]`` and cross moment ``b = E[Y X]``."""

    S: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, float)
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("S must be symmetric")
        if np.linalg.eigvalsh(S).min() < -1e-8:
            raise ValueError("S must be positive semi-definite")

    @classmethod
    def from_data(cls, X, y) -> "PopulationModel":
        X = np.asarray(X, float)
        y = np.asarray(y, float)
        n = X.shape[0]
        S = X.T @ X / n
        return cls(0.5 * (S + S.T), X.T @ y / n)

    def risk_gradient(self, w) -> np.ndarray:
        return self.S @ w - self.b


def linear_population_bias(model: PopulationModel, w, p) -> np.ndarray:
    """Exact bias of the zero-imputed squared-loss gradient under independent hMCAR.

    ``B_j = -p_j grad_j L(w) - (1 - p_j) sum_{k != j} p_k S_jk w_k``.
    """
    w = np.asarray(w, float)
    p = np.asarray(p, float)
    S = np.asarray(model.S, float)
    off = S - np.diag(np.diag(S))
    return -p * model.risk_gradient(w) - (1 - p) * (off @ (p * w))


def first_order_operator_column(family: GlmFamily, imputer, data: ObservedDataset | tuple, mechanism, w, j: int,
                                noise=None) -> np.ndarray:
    """Column ``j`` of the first-order bias operator on the empirical measure.

    Average over rows of ``a_j(V) * (G_{j} - g)`` where ``G_{j}`` declares only
    column ``j`` missing and imputes it.
    """
    X, y = (data.values, data.responses) if isinstance(data, ObservedDataset) else map(np.asarray, data)
    X = np.asarray(X, float)
    M = np.zeros(X.shape, np.uint8)
    M[:, j] = 1
    Xj = impute(imputer, X, M, noise)
    a = mechanism.intensity(X)[:, j]
    gap = row_gradients(family, w, Xj, y) - row_gradients(family, w, X, y)
    return (a[:, None] * gap).mean(axis=0)
