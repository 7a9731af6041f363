"""Exact gradient-bias oracle over subsets of maskable columns.

The empirical distribution of a finite complete dataset plays the role of the
population, so every expectation over ``(X, Y)`` is a finite average and every
expectation over independent masks is a finite sum over ``2^m`` subsets, where
``m`` is the number of maskable columns.  Subsets are encoded as bitmasks; bit
``i`` refers to ``maskable[i]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ObservedDataset
from .glm import GlmFamily, row_gradients
from .imputation import Imputer, impute
from .mechanisms import MechanismSpec
from .rng import MASK, XI, CounterRNG

__all__ = [
    "MAX_ENUM",
    "MAX_JOINT",
    "EnumerationCapExceeded",
    "BiasReport",
    "SubsetGradientTable",
    "subset_gradient",
    "subset_gradient_table",
    "finite_differences",
    "reconstruct",
    "exact_bias",
    "multilinear_coefficients",
    "bias_from_coefficients",
    "monte_carlo_bias",
    "ladder_expectation",
    "ladder_bias",
    "noise_draws",
]

MAX_ENUM = 16
MAX_JOINT = 8
_CELLS = 1 << 22


class EnumerationCapExceeded(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BiasReport:
    bias: np.ndarray
    method: str
    scale: float
    sample_count: int | None = None
    standard_error: np.ndarray | None = None
    # spread over imputation-noise realizations when a stochastic imputer is averaged
    xi_standard_error: np.ndarray | None = field(default=None, repr=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.bias))

    @property
    def max_standard_error(self) -> float | None:
        return None if self.standard_error is None else float(np.max(self.standard_error))


def _unpack(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, ObservedDataset):
        return np.asarray(data.oracle_values(), float), np.asarray(data.responses, float)
    X, y = data
    return np.asarray(X, float), np.asarray(y, float)


def _subset_cols(s: int, maskable: Sequence[int]) -> list[int]:
    return [maskable[i] for i in range(len(maskable)) if s >> i & 1]


def _index(S, maskable: Sequence[int]) -> int:
    pos = {c: i for i, c in enumerate(maskable)}
    try:
        return sum(1 << pos[j] for j in S)
    except KeyError as exc:
        raise KeyError(f"column {exc.args[0]} is not maskable") from None


def subset_gradient(family: GlmFamily, imputer: Imputer, w, X, y, S, noise=None) -> np.ndarray:
    """Per-row gradients after declaring exactly the columns in ``S`` missing."""
    X = np.atleast_2d(np.asarray(X, float))
    M = np.zeros(X.shape, np.uint8)
    M[:, list(S)] = 1
    return row_gradients(family, w, impute(imputer, X, M, noise), np.atleast_1d(y))


@dataclass(frozen=True, eq=False)
class SubsetGradientTable:
    """``values[s]`` for every bitmask ``s`` over ``maskable``.

    Per-sample tables have shape ``(2^m, n, q)``; averaged ones ``(2^m, q)``.
    """

    maskable: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != 1 << len(self.maskable):
            raise ValueError(
                f"table has {len(self.values)} entries, expected {1 << len(self.maskable)} subsets"
            )

    def __getitem__(self, S) -> np.ndarray:
        return self.values[_index(S, self.maskable)]

    def subsets(self):
        for s in range(len(self.values)):
            yield frozenset(_subset_cols(s, self.maskable))

    def averaged(self) -> "SubsetGradientTable":
        if self.values.ndim == 2:
            return self
        return SubsetGradientTable(self.maskable, self.values.mean(axis=1))


def _check_cap(m: int, cap: int = MAX_ENUM):
    if m > cap:
        raise EnumerationCapExceeded(
            f"{m} maskable columns exceeds the enumeration cap of {cap}; use monte_carlo_bias"
        )


def subset_gradient_table(family: GlmFamily, imputer: Imputer, w, X, y, maskable: Sequence[int],
                          noise=None) -> SubsetGradientTable:
    maskable = tuple(int(j) for j in maskable)
    _check_cap(len(maskable))
    X = np.asarray(X, float)
    vals = np.empty((1 << len(maskable), X.shape[0], X.shape[1]))
    for s in range(len(vals)):
        vals[s] = subset_gradient(family, imputer, w, X, y, _subset_cols(s, maskable), noise)
    return SubsetGradientTable(maskable, vals)


def _mobius(values: np.ndarray, sign: float) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    m = int(len(out)).bit_length() - 1
    flat = out.reshape(len(out), -1)
    for i in range(m):
        v = flat.reshape(1 << (m - i - 1), 2, 1 << i, flat.shape[1])
        v[:, 1] += sign * v[:, 0]
    return out


def finite_differences(table: SubsetGradientTable) -> SubsetGradientTable:
    """``D_S = sum_{T subset S} (-1)^{|S|-|T|} G_T`` for every ``S``."""
    return SubsetGradientTable(table.maskable, _mobius(table.values, -1.0))


def reconstruct(diffs: SubsetGradientTable) -> SubsetGradientTable:
    """Inverse transform: ``G_A = sum_{S subset A} D_S``."""
    return SubsetGradientTable(diffs.maskable, _mobius(diffs.values, 1.0))


def _subset_products(lam_cols: np.ndarray, complement: bool) -> np.ndarray:
    """Row-wise products over subsets; ``lam_cols`` has shape ``(n, m)``.

    Returns ``(2^m, n)`` with ``prod_{j in S} lam_j`` (or the full Bernoulli
    pattern probability when ``complement``).
    """
    n, m = lam_cols.shape
    out = np.ones((1, n))
    for i in range(m):
        li = lam_cols[:, i]
        out = np.concatenate([out * (1 - li) if complement else out, out * li])
    return out


def noise_draws(imputer: Imputer, shape, draws: int = 8, seed: int = 0, tag: int = XI) -> list:
    """Fixed imputation-noise realizations; a single ``None`` for deterministic imputers."""
    if not imputer.uses_noise:
        return [None]
    rng = CounterRNG(seed)
    return [rng.grid_normal(tag, shape, level=r) for r in range(draws)]


def _row_chunks(n: int, per_row: int):
    step = max(1, _CELLS // max(per_row, 1))
    for a in range(0, n, step):
        yield slice(a, min(n, a + step))


def _exact_once(family, imputer, X, y, lam_cols, maskable, w, method, noise, joint):
    n = X.shape[0]
    m = len(maskable)
    acc = np.zeros(X.shape[1])
    for rows in _row_chunks(n, (1 << m) * X.shape[1]):
        nz = None if noise is None else noise[rows]
        table = subset_gradient_table(family, imputer, w, X[rows], y[rows], maskable, nz)
        if joint is not None:
            acc += np.einsum("s,snq->q", joint, table.values)
        elif method == "expansion":
            D = finite_differences(table).values
            rho = _subset_products(lam_cols[rows], complement=False)
            acc += np.einsum("sn,snq->q", rho, D)
        else:
            prob = _subset_products(lam_cols[rows], complement=True)
            acc += np.einsum("sn,snq->q", prob, table.values)
        acc -= table.values[0].sum(axis=0)
    return acc / n


def exact_bias(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, w, scale: float = 1.0, *,
               method: str = "expansion", noise=None, xi_draws: int = 8, xi_seed: int = 0,
               joint=None) -> BiasReport:
    """Exact ``E[g_hat(w)] - grad L(w)`` over independent masks at ``scale * p``.

    ``method="expansion"`` sums ``rho_S * D_S``; ``"enumeration"`` sums
    ``P(m | V) * G_{S(m)}`` directly.  ``joint`` optionally gives an explicit
    probability for each of the ``2^m`` patterns (dependent MCAR masks).
    """
    if method not in ("expansion", "enumeration"):
        raise ValueError(f"unknown method {method!r}")
    X, y = _unpack(data)
    maskable = [int(j) for j in mechanism.maskable]
    _check_cap(len(maskable))
    if joint is not None:
        _check_cap(len(maskable), MAX_JOINT)
        joint = np.asarray(joint, float)
        if joint.shape != (1 << len(maskable),) or abs(joint.sum() - 1) > 1e-12 or (joint < 0).any():
            raise ValueError("joint must be a probability vector over all mask patterns")
    lam_cols = mechanism.lam(X, scale)[:, maskable]
    draws = [noise] if noise is not None else noise_draws(imputer, X.shape, xi_draws, xi_seed)
    biases = np.array([_exact_once(family, imputer, X, y, lam_cols, maskable, w, method, nz, joint)
                       for nz in draws])
    spread = biases.std(axis=0, ddof=1) / np.sqrt(len(biases)) if len(biases) > 1 else None
    return BiasReport(biases.mean(axis=0), "enumerated", float(scale), xi_standard_error=spread)


def multilinear_coefficients(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, w, *,
                             noise=None, xi_draws: int = 8, xi_seed: int = 0) -> dict[frozenset, np.ndarray]:
    """``mu_S = mean over rows of (prod_{j in S} a_j(V)) * D_S`` for every subset ``S``."""
    X, y = _unpack(data)
    maskable = [int(j) for j in mechanism.maskable]
    _check_cap(len(maskable))
    a_cols = mechanism.intensity(X)[:, maskable]
    draws = [noise] if noise is not None else noise_draws(imputer, X.shape, xi_draws, xi_seed)
    mu = np.zeros((1 << len(maskable), X.shape[1]))
    for nz in draws:
        for rows in _row_chunks(X.shape[0], (1 << len(maskable)) * X.shape[1]):
            table = subset_gradient_table(family, imputer, w, X[rows], y[rows], maskable,
                                          None if nz is None else nz[rows])
            D = finite_differences(table).values
            mu += np.einsum("sn,snq->sq", _subset_products(a_cols[rows], complement=False), D)
    mu /= X.shape[0] * len(draws)
    return {frozenset(_subset_cols(s, maskable)): mu[s] for s in range(len(mu))}


def bias_from_coefficients(mu: dict[frozenset, np.ndarray], p, scale: float = 1.0) -> np.ndarray:
    """Evaluate ``sum_{S nonempty} (prod_{j in S} scale p_j) mu_S``."""
    p = np.asarray(p, float) * scale
    total = None
    for S, coef in mu.items():
        if not S:
            continue
        term = float(np.prod([p[j] for j in S])) * coef
        total = term if total is None else total + term
    return total if total is not None else np.zeros_like(next(iter(mu.values())))


def monte_carlo_bias(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, w, n_draws: int,
                     seed: int, scale: float = 1.0, chunk: int | None = None) -> BiasReport:
    """Sample-mean estimate of the bias over ``n_draws`` full-dataset mask (and noise) draws."""
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    X, y = _unpack(data)
    n, d = X.shape
    rng = CounterRNG(seed)
    lam = mechanism.lam(X, scale)
    full = row_gradients(family, w, X, y).mean(axis=0)
    chunk = chunk or max(1, _CELLS // (4 * n * d))
    total = np.zeros(d)
    total_sq = np.zeros(d)
    cols = np.arange(d)
    for a in range(0, n_draws, chunk):
        b = min(n_draws, a + chunk)
        rows = np.arange(a * n, b * n)
        Xt = np.tile(X, (b - a, 1))
        M = (rng.uniform(MASK, rows, cols) < np.tile(lam, (b - a, 1))).astype(np.uint8)
        nz = rng.normal(XI, rows, cols) if imputer.uses_noise else None
        g = row_gradients(family, w, impute(imputer, Xt, M, nz), np.tile(y, b - a))
        per_draw = g.reshape(b - a, n, d).mean(axis=1) - full
        total += per_draw.sum(axis=0)
        total_sq += (per_draw**2).sum(axis=0)
    mean = total / n_draws
    if n_draws > 1:
        var = np.maximum(total_sq / n_draws - mean**2, 0.0) * n_draws / (n_draws - 1)
        se = np.sqrt(var / n_draws)
    else:
        se = np.full(d, np.inf)
    return BiasReport(mean, "monte_carlo", float(scale), sample_count=n_draws, standard_error=se)


def ladder_expectation(family: GlmFamily, imputer: Imputer, data, maskable: Sequence[int],
                       intensities: Sequence[np.ndarray], weights, w, *, linked: bool = True,
                       noise=None) -> np.ndarray:
    """Exact expectation of ``sum_l weights[l] * g(x_l)`` over a nested mask ladder.

    ``intensities[l]`` is the ``(n, d)`` matrix of conditional missingness
    probabilities at level ``l`` (non-decreasing in ``l``).  Each column
    independently becomes missing at one level, or never.  With ``linked`` the
    top level is imputed once and lower levels restore their observed entries;
    otherwise each level is imputed separately with ``noise[l]``.
    """
    X, y = _unpack(data)
    maskable = [int(j) for j in maskable]
    _check_cap(len(maskable))
    k = len(intensities) - 1
    L = np.stack([np.asarray(lv, float)[:, maskable] for lv in intensities])  # (k+1, n, m)
    if (np.diff(L, axis=0) < -1e-15).any():
        raise ValueError("intensities must be non-decreasing along the ladder")
    # first-missing-level probabilities, last slot = never missing
    first = np.concatenate([L[:1], np.diff(L, axis=0), 1 - L[-1:]], axis=0)
    weights = np.asarray(weights, float)
    if linked:
        noises = noise
    else:
        noises = list(noise) if noise is not None else [None] * (k + 1)
    n, d = X.shape
    total = np.zeros(d)
    cache: dict = {}
    for z in itertools.product(range(k + 2), repeat=len(maskable)):
        prob = np.ones(n)
        for i, lev in enumerate(z):
            prob = prob * first[lev, :, i]
        if not prob.any():
            continue
        combo = np.zeros((n, d))
        if linked:
            top_cols = tuple(c for c, lev in zip(maskable, z) if lev <= k)
            if top_cols not in cache:
                M = np.zeros((n, d), np.uint8)
                M[:, list(top_cols)] = 1
                cache[top_cols] = impute(imputer, X, M, noises)
            top = cache[top_cols]
        for lev in range(k + 1):
            cols = [c for c, zl in zip(maskable, z) if zl <= lev]
            if linked:
                xl = X.copy()
                xl[:, cols] = top[:, cols]
            else:
                key = (lev, tuple(cols))
                if key not in cache:
                    M = np.zeros((n, d), np.uint8)
                    M[:, cols] = 1
                    cache[key] = impute(imputer, X, M, noises[lev])
                xl = cache[key]
            combo += weights[lev] * row_gradients(family, w, xl, y)
        total += prob @ combo
    return total / n


def ladder_bias(family: GlmFamily, imputer: Imputer, data, maskable, intensities, weights, w, *,
                linked: bool = True, noise=None) -> np.ndarray:
    """:func:`ladder_expectation` minus the complete-data risk gradient."""
    X, y = _unpack(data)
    expected = ladder_expectation(family, imputer, (X, y), maskable, intensities, weights, w,
                                  linked=linked, noise=noise)
    return expected - float(np.sum(weights)) * row_gradients(family, w, X, y).mean(axis=0)
