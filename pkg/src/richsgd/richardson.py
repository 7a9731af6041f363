"""Richardson-corrected gradients over a ladder of missingness scales."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .glm import GlmFamily, row_gradients
from .imputation import Imputer, linked_ladder
from .mechanisms import MechanismInfeasible, MechanismSpec, cascade_thin, plan_thinning, sample_mask, thin_with_keep
from .oracle import _unpack, ladder_bias, noise_draws
from .rng import THIN, XI, XI_ALT, CounterRNG

__all__ = [
    "RichardsonConfig",
    "PlugInMechanism",
    "vandermonde_weights",
    "feasible_factors",
    "richardson_gradient",
    "multi_order_gradient",
    "estimate_sample_gradient",
    "plugin_effective_intensity",
    "plugin_thin",
    "plugin_cascade",
    "richardson_exact_bias",
    "plugin_exact_bias",
    "gradient_variance",
    "monte_carlo_richardson_bias",
]

log = logging.getLogger(__name__)


def vandermonde_weights(factors: Sequence[float]) -> np.ndarray:
    """Weights with ``sum a_l = 1`` and ``sum a_l C_l^m = 0`` for ``m = 1..k``."""
    C = np.asarray(factors, float)
    if C.ndim != 1 or len(C) == 0:
        raise ValueError("factors must be a non-empty sequence")
    if C[0] != 1.0:
        raise ValueError("the first factor must be 1")
    if len(np.unique(C)) != len(C):
        raise np.linalg.LinAlgError("repeated factors make the Vandermonde system singular")
    if (np.diff(C) <= 0).any():
        raise ValueError("factors must be strictly increasing")
    k = len(C) - 1
    A = np.vander(C, k + 1, increasing=True).T  # A[m, l] = C_l^m
    rhs = np.zeros(k + 1)
    rhs[0] = 1.0
    return np.linalg.solve(A, rhs)


def feasible_factors(order: int, C: float = 2.0, max_lambda: float | None = None, backoff: float = 0.5) -> tuple:
    """Ladder ``C_l = C^l``, shrinking ``C - 1`` geometrically until ``C^k * max_lambda <= 1``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if order == 0:
        return (1.0,)
    base = float(C)
    if max_lambda:
        for _ in range(200):
            if base**order * max_lambda <= 1.0:
                break
            base = 1.0 + (base - 1.0) * backoff
        else:
            raise MechanismInfeasible(f"no feasible factor ladder for max intensity {max_lambda}")
        if base != C:
            log.info("factor ladder backed off from C=%g to C=%g (max intensity %.4g)", C, base, max_lambda)
    return tuple(base**ell for ell in range(order + 1))


@dataclass(frozen=True, eq=False)
class RichardsonConfig:
    factors: tuple
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.factors) - 1

    @classmethod
    def from_factors(cls, factors: Sequence[float]) -> "RichardsonConfig":
        factors = tuple(float(c) for c in factors)
        return cls(factors, vandermonde_weights(factors))

    @classmethod
    def geometric(cls, order: int, C: float = 2.0, max_lambda: float | None = None) -> "RichardsonConfig":
        return cls.from_factors(feasible_factors(order, C, max_lambda))

    def check(self, tol: float = 1e-10) -> None:
        C = np.asarray(self.factors)
        if abs(self.weights.sum() - 1) > tol:
            raise AssertionError("weights do not sum to one")
        for m in range(1, self.order + 1):
            if abs(self.weights @ C**m) > tol * max(1.0, np.abs(self.weights).max() * C[-1] ** m):
                raise AssertionError(f"moment {m} not cancelled")

    def feasible(self, lam: np.ndarray) -> bool:
        return bool((self.factors[-1] * np.asarray(lam) <= 1 + 1e-12).all())


def richardson_gradient(g_p, g_Cp, C: float) -> np.ndarray:
    if C <= 1:
        raise ValueError("C must exceed 1")
    return (C * np.asarray(g_p, float) - np.asarray(g_Cp, float)) / (C - 1)


def multi_order_gradient(gradients: Sequence, config: RichardsonConfig) -> np.ndarray:
    if len(gradients) != len(config.weights):
        raise ValueError(f"expected {len(config.weights)} level gradients, got {len(gradients)}")
    return np.tensordot(config.weights, np.asarray(gradients, float), axes=1)


def estimate_sample_gradient(family: GlmFamily, imputer: Imputer, X, y, masks: Sequence[np.ndarray],
                             config: RichardsonConfig, w, noise=None) -> np.ndarray:
    """Per-row Richardson gradients from a nested mask ladder (linked imputation)."""
    X = np.atleast_2d(np.asarray(X, float))
    y = np.atleast_1d(y)
    levels = linked_ladder(imputer, X, [np.atleast_2d(m) for m in masks], noise)
    grads = [row_gradients(family, w, xl, y) for xl in levels]
    return multi_order_gradient(grads, config)


def plugin_effective_intensity(lam, lam_hat, C: float):
    """Missingness probability after thinning with a plug-in intensity.

    ``C lam + (C - 1)(lam_hat - lam) / (1 - lam_hat)``.
    """
    lam = np.asarray(lam, float)
    lam_hat = np.asarray(lam_hat, float)
    if (lam < 0).any() or (lam >= 1).any() or (lam_hat < 0).any() or (lam_hat >= 1).any():
        raise MechanismInfeasible("intensities must lie in [0, 1)")
    if (C * lam_hat > 1 + 1e-12).any():
        raise MechanismInfeasible("C * lam_hat exceeds 1")
    out = C * lam + (C - 1) * (lam_hat - lam) / (1 - lam_hat)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PlugInMechanism:
    """Estimated intensities used for thinning; wraps anything with ``lam_hat(X)``."""

    estimate: object
    rho: float = 0.95

    def lam_hat(self, X) -> np.ndarray:
        lam = np.asarray(self.estimate.lam_hat(X), float)
        if (lam < 0).any() or (lam > self.rho).any():
            raise MechanismInfeasible(f"estimated intensity outside [0, {self.rho}]: max {lam.max():.4g}")
        return lam


def plugin_thin(mask_p, plug_in: PlugInMechanism, C: float, X, rng: CounterRNG, *, level: int = 1,
                epoch: int = 0, rows=None) -> np.ndarray:
    """Thin with keep-probability ``(1 - C lam_hat) / (1 - lam_hat)``."""
    X = np.asarray(X, float)
    plan = plan_thinning(plug_in.lam_hat(X), C)
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    u = rng.uniform(THIN, rows, np.arange(X.shape[1]), level=level, epoch=epoch)
    return thin_with_keep(mask_p, plan.keep, u)


def plugin_cascade(mask_p, plug_in: PlugInMechanism, factors: Sequence[float], X, rng: CounterRNG, *,
                   epoch: int = 0, rows=None) -> list[np.ndarray]:
    """Nested masks thinned with the plug-in intensities ``C_l * lam_hat``."""
    if len(factors) == 1:
        return [np.asarray(mask_p, np.uint8)]
    X = np.asarray(X, float)
    lam_hat = plug_in.lam_hat(X)
    plan_thinning(lam_hat, factors[-1])
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    cols = np.arange(X.shape[1])
    masks = [np.asarray(mask_p, np.uint8)]
    for level in range(1, len(factors)):
        plan = plan_thinning(factors[level - 1] * lam_hat, factors[level] / factors[level - 1])
        u = rng.uniform(THIN, rows, cols, level=level, epoch=epoch)
        masks.append(thin_with_keep(masks[-1], plan.keep, u))
    return masks


def richardson_exact_bias(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, w,
                          config: RichardsonConfig, scale: float = 1.0, *, linked: bool = True,
                          noise=None, xi_draws: int = 8, xi_seed: int = 0) -> np.ndarray:
    """Exact bias of the ladder estimator at ``scale * p``.

    Stochastic imputers are averaged over ``xi_draws`` fixed noise
    realizations. When ``linked`` is false each level gets its own
    independent realization.
    """
    X, y = _unpack(data)
    lam = mechanism.lam(X, scale)
    intensities = [c * lam for c in config.factors]
    if (intensities[-1] > 1 + 1e-12).any():
        raise MechanismInfeasible("top factor pushes an intensity above 1")
    if noise is not None:
        draws = [noise]
    else:
        draws = noise_draws(imputer, X.shape, xi_draws, xi_seed)
    out = []
    for r, nz in enumerate(draws):
        if not linked and nz is not None and not isinstance(nz, list):
            alt = CounterRNG(xi_seed)
            nz = [nz] + [alt.grid_normal(XI_ALT, X.shape, level=r, epoch=lev) for lev in range(1, config.order + 1)]
        out.append(ladder_bias(family, imputer, (X, y), mechanism.maskable, intensities, config.weights, w,
                               linked=linked, noise=nz))
    return np.mean(out, axis=0)


def plugin_exact_bias(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, lam_hat, C: float, w,
                      scale: float = 1.0, noise=None) -> np.ndarray:
    """Exact bias of the first-order Richardson gradient thinned with ``lam_hat``."""
    X, y = _unpack(data)
    lam = mechanism.lam(X, scale)
    eff = plugin_effective_intensity(lam, np.asarray(lam_hat, float), C)
    weights = vandermonde_weights((1.0, C))
    return ladder_bias(family, imputer, (X, y), mechanism.maskable, [lam, eff], weights, w, noise=noise)


def gradient_variance(samples) -> float:
    """Trace of the sample covariance (expected squared Euclidean deviation)."""
    s = np.asarray(samples, float)
    return float(((s - s.mean(axis=0)) ** 2).sum(axis=1).mean())


def monte_carlo_richardson_bias(family: GlmFamily, imputer: Imputer, data, mechanism: MechanismSpec, w,
                                config: RichardsonConfig, n_draws: int, seed: int,
                                scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample-mean bias of the linked ladder estimator and its per-coordinate standard error."""
    if n_draws < 2:
        raise ValueError("n_draws must be at least 2")
    X, y = _unpack(data)
    n, d = X.shape
    spec = mechanism.with_p(np.asarray(mechanism.p) * scale)
    rng = CounterRNG(seed)
    full = row_gradients(family, w, X, y).mean(axis=0)
    draws = np.empty((n_draws, d))
    rows_all = np.arange(n)
    for r in range(n_draws):
        rows = rows_all + r * n
        m0 = sample_mask(spec, X, rng, rows=rows)
        masks = cascade_thin(m0, spec, config.factors, X, rng, rows=rows)
        nz = rng.normal(XI, rows, np.arange(d)) if imputer.uses_noise else None
        levels = linked_ladder(imputer, X, masks, nz)
        g = multi_order_gradient([row_gradients(family, w, xl, y) for xl in levels], config)
        draws[r] = g.mean(axis=0) - full
    return draws.mean(axis=0), draws.std(axis=0, ddof=1) / np.sqrt(n_draws)
