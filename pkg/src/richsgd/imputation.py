"""Data-independent imputation rules and linked two-scale imputation.

An :class:`Imputer` is fitted once on an auxiliary dataset and then applied
row by row: the value filled into a row depends only on that row's observed
entries, its mask, the frozen fitted state, and the row's own noise draws.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ObservedDataset, as_mask, frozen

__all__ = [
    "Imputer",
    "LinkedImputationPair",
    "NestingError",
    "fit_imputer",
    "impute",
    "linked_impute",
    "linked_ladder",
    "unlinked_impute",
    "KINDS",
]

KINDS = ("zero", "mean", "knn", "iterative_ridge")


class NestingError(ValueError):
    """Masks that should be nested are not."""


@dataclass(frozen=True, eq=False)
class Imputer:
    kind: str
    means: np.ndarray | None = None
    # knn
    ref_values: np.ndarray | None = field(default=None, repr=False)
    ref_mask: np.ndarray | None = field(default=None, repr=False)
    k: int = 5
    # iterative ridge: row j of ``coef`` regresses column j on the others (zero diagonal)
    coef: np.ndarray | None = field(default=None, repr=False)
    intercept: np.ndarray | None = None
    resid_sd: np.ndarray | None = None
    rounds: int = 5
    stochastic: bool = False
    warnings: Counter = field(default_factory=Counter, compare=False, repr=False)

    @property
    def uses_noise(self) -> bool:
        return self.kind == "iterative_ridge" and self.stochastic

    def to_dict(self) -> dict[str, str]:
        out = {"kind": self.kind}
        if self.kind == "knn":
            out["k"] = str(self.k)
        if self.kind == "iterative_ridge":
            out["rounds"] = str(self.rounds)
            out["stochastic"] = str(self.stochastic).lower()
        return out


def _observed_means(X, M) -> np.ndarray:
    obs = 1 - M
    counts = obs.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ValueError(f"column {int(empty[0])} has no observed entries; cannot fit imputer")
    return np.where(obs, X, 0.0).sum(axis=0) / counts


def _ridge(Z, t, penalty):
    """Ridge with an unpenalized intercept on the mean-squared-error scale."""
    zm, tm = Z.mean(axis=0), t.mean()
    Zc, tc = Z - zm, t - tm
    n = len(t)
    beta = np.linalg.solve(Zc.T @ Zc / n + penalty * np.eye(Z.shape[1]), Zc.T @ tc / n)
    return tm - zm @ beta, beta


def fit_imputer(kind: str, aux: ObservedDataset | tuple, *, k: int = 5, rounds: int = 5,
                ridge: float = 1e-3, stochastic: bool = False) -> Imputer:
    """Fit an imputation rule on an auxiliary dataset.

    ``aux`` is an :class:`ObservedDataset` or an ``(X, M)`` pair.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown imputer kind {kind!r}")
    if isinstance(aux, ObservedDataset):
        X, M = aux.values, aux.mask
    else:
        X, M = np.asarray(aux[0], float), as_mask(aux[1])
    if X.shape[0] == 0:
        raise ValueError("auxiliary dataset is empty")
    X = np.where(M.astype(bool), 0.0, X)
    if kind == "zero":
        return Imputer("zero")
    means = _observed_means(X, M)
    if kind == "mean":
        return Imputer("mean", means=frozen(means))
    if kind == "knn":
        return Imputer("knn", means=frozen(means), ref_values=frozen(X), ref_mask=frozen(M), k=int(k))

    n, d = X.shape
    Xf = np.where(M.astype(bool), means, X)
    coef = np.zeros((d, d))
    intercept = np.zeros(d)
    resid = np.zeros(d)
    for _ in range(rounds):
        for j in range(d):
            others = [c for c in range(d) if c != j]
            obs = M[:, j] == 0
            b0, beta = _ridge(Xf[obs][:, others], Xf[obs, j], ridge)
            coef[j, others] = beta
            intercept[j] = b0
            miss = ~obs
            if miss.any():
                Xf[miss, j] = b0 + Xf[miss][:, others] @ beta
            resid[j] = np.std(Xf[obs, j] - (b0 + Xf[obs][:, others] @ beta))
    return Imputer("iterative_ridge", means=frozen(means), coef=frozen(coef), intercept=frozen(intercept),
                   resid_sd=frozen(resid), rounds=int(rounds), stochastic=bool(stochastic))


def _knn_fill(imp: Imputer, X, M) -> np.ndarray:
    out = X.copy()
    R, RM = imp.ref_values, imp.ref_mask.astype(bool)
    Ro = ~RM
    d = X.shape[1]
    todo = np.flatnonzero(M.any(axis=1))
    for start in range(0, len(todo), 64):
        rows = todo[start:start + 64]
        qo = ~M[rows].astype(bool)
        shared = qo[:, None, :] & Ro[None, :, :]
        n_shared = shared.sum(axis=2)
        diff = np.where(shared, X[rows][:, None, :] - R[None, :, :], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(n_shared > 0, (d / n_shared) * (diff**2).sum(axis=2), np.inf)
        for a, i in enumerate(rows):
            for j in np.flatnonzero(M[i]):
                cand = np.flatnonzero(Ro[:, j] & np.isfinite(dist[a]))
                if len(cand) == 0:
                    imp.warnings["knn_empty_candidates"] += 1
                    out[i, j] = imp.means[j]
                    continue
                order = cand[np.argsort(dist[a, cand], kind="stable")[: imp.k]]
                out[i, j] = R[order, j].mean()
    return out


def impute(imp: Imputer, X, M, noise=None) -> np.ndarray:
    """Fill masked entries; observed entries pass through unchanged.

    ``noise`` is an array of standard normals shaped like ``X`` (the per-entry
    randomness); only stochastic iterative imputers read it.
    """
    M = as_mask(M)
    B = M.astype(bool)
    X = np.where(B, 0.0, np.asarray(X, float))
    if imp.kind == "zero":
        return X
    if imp.kind == "mean":
        return np.where(B, imp.means, X)
    if imp.kind == "knn":
        return _knn_fill(imp, X, M)

    Xf = np.where(B, imp.means, X)
    cols = np.flatnonzero(B.any(axis=0))
    for _ in range(imp.rounds):
        for j in cols:
            rows = B[:, j]
            Xf[rows, j] = imp.intercept[j] + Xf[rows] @ imp.coef[j]
    if imp.stochastic:
        if noise is None:
            raise ValueError("stochastic imputer needs a noise array")
        Xf = Xf + np.where(B, imp.resid_sd * np.asarray(noise, float), 0.0)
    return Xf


@dataclass(frozen=True, eq=False)
class LinkedImputationPair:
    x_tilde_Cp: np.ndarray
    x_tilde_p: np.ndarray


def _check_nested(inner, outer):
    if (as_mask(inner) > as_mask(outer)).any():
        raise NestingError("masks are not nested: an entry missing at the lower scale is observed above it")


def linked_ladder(imp: Imputer, X, masks: Sequence[np.ndarray], noise=None) -> list[np.ndarray]:
    """Impute once at the top mask, then restore observed entries level by level."""
    for lo, hi in zip(masks, masks[1:]):
        _check_nested(lo, hi)
    X = np.asarray(X, float)
    top = impute(imp, X, masks[-1], noise)
    return [np.where(as_mask(m).astype(bool), top, X) for m in masks[:-1]] + [top]


def linked_impute(imp: Imputer, X, mask_p, mask_Cp, noise=None) -> LinkedImputationPair:
    """Linked pair: entries missing at both scales share one imputed value."""
    x_p, x_Cp = linked_ladder(imp, X, [mask_p, mask_Cp], noise)
    return LinkedImputationPair(x_Cp, x_p)


def unlinked_impute(imp: Imputer, X, mask_p, mask_Cp, noise1=None, noise2=None) -> tuple[np.ndarray, np.ndarray]:
    """Two independent imputations, one per scale (no value sharing)."""
    return impute(imp, X, mask_p, noise1), impute(imp, X, mask_Cp, noise2)
