"""Estimate a missingness mechanism from a mask and perturb the estimate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import as_mask, frozen
from .mechanisms import MechanismInfeasible

__all__ = ["MechanismEstimate", "estimate_p", "estimate_q", "estimate_mechanism", "perturb", "RHO"]

log = logging.getLogger(__name__)

RHO = 0.95


@dataclass(frozen=True, eq=False)
class MechanismEstimate:
    """``lam_hat_j(v) = p_hat_j * q_hat_j(v)``.

    ``q_hat_j(v) = (sigmoid(coef_j . [1, v]) / norm_j + shift_j) / (1 + shift_j)``
    where ``v`` are the always-observed columns. ``norm_j`` is the fitting-fold
    mean of the sigmoid so that ``q_hat_j`` averages to one there; ``shift_j``
    is non-zero only after :func:`perturb`.
    """

    p_hat: np.ndarray
    observed: tuple
    coef: np.ndarray
    norm: np.ndarray
    shift: np.ndarray
    counts: np.ndarray
    degenerate: np.ndarray

    @property
    def d(self) -> int:
        return len(self.p_hat)

    def _features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.column_stack([np.ones(X.shape[0]), X[:, list(self.observed)]])

    def q_hat(self, X) -> np.ndarray:
        Z = self._features(X)
        raw = expit(Z @ self.coef.T) / self.norm
        raw[:, self.degenerate] = 1.0
        return (raw + self.shift) / (1.0 + self.shift)

    def lam_hat(self, X) -> np.ndarray:
        return self.p_hat * self.q_hat(X)

    def to_dict(self) -> dict[str, str]:
        fmt = lambda a: ",".join(repr(float(x)) for x in np.ravel(a))  # noqa: E731
        return {
            "p_hat": fmt(self.p_hat),
            "observed": ",".join(str(j) for j in self.observed),
            "coef": fmt(self.coef),
            "norm": fmt(self.norm),
            "shift": fmt(self.shift),
            "degenerate": ",".join(str(int(b)) for b in self.degenerate),
        }


def estimate_p(mask) -> np.ndarray:
    """Column-wise empirical missingness frequency."""
    M = as_mask(mask)
    if M.shape[0] == 0:
        raise ValueError("empty mask")
    return M.mean(axis=0)


def _fit_logistic(Z, t, tol: float = 1e-6, max_iter: int = 200):
    """Unpenalized logistic regression by damped Newton steps, to gradient norm ``tol``."""
    beta = np.zeros(Z.shape[1])
    mean_t = t.mean()
    beta[0] = np.log(mean_t / (1 - mean_t))
    n = len(t)

    def nll(b):
        z = Z @ b
        return float(np.mean(np.logaddexp(0.0, z) - t * z))

    for _ in range(max_iter):
        mu = expit(Z @ beta)
        grad = Z.T @ (mu - t) / n
        if np.linalg.norm(grad) <= tol:
            return beta, True
        H = (Z * (mu * (1 - mu))[:, None]).T @ Z / n
        step = np.linalg.lstsq(H + 1e-12 * np.eye(len(beta)), grad, rcond=None)[0]
        f0, s = nll(beta), 1.0
        while nll(beta - s * step) > f0 - 1e-4 * s * (grad @ step) and s > 1e-10:
            s *= 0.5
        beta = beta - s * step
    return beta, False


def estimate_q(mask, X, observed: Sequence[int]) -> MechanismEstimate:
    """Fit a logistic intensity on the always-observed columns, one model per column."""
    M = as_mask(mask)
    X = np.asarray(X, float)
    observed = tuple(int(j) for j in observed)
    if M[:, list(observed)].any():
        raise ValueError("intensity covariates must be fully observed")
    n, d = M.shape
    p_hat = estimate_p(M)
    Z = np.column_stack([np.ones(n), X[:, list(observed)]])
    coef = np.zeros((d, Z.shape[1]))
    norm = np.ones(d)
    degenerate = np.zeros(d, bool)
    for j in range(d):
        t = M[:, j].astype(float)
        if t.min() == t.max():
            degenerate[j] = True
            continue
        beta, ok = _fit_logistic(Z, t)
        if not ok:
            log.warning("logistic intensity fit for column %d did not reach tolerance", j)
        coef[j] = beta
        norm[j] = expit(Z @ beta).mean()
    return MechanismEstimate(frozen(p_hat), observed, frozen(coef), frozen(norm), frozen(np.zeros(d)),
                             frozen(M.sum(axis=0)), frozen(degenerate))


def estimate_mechanism(mask, X, observed: Sequence[int] = ()) -> MechanismEstimate:
    return estimate_q(mask, X, observed)


def perturb(estimate: MechanismEstimate, delta_p: float, delta_q: float, rng: np.random.Generator,
            X=None, rho: float = RHO) -> MechanismEstimate:
    """Signed perturbation of the estimate on columns with ``p_hat > 0``.

    ``p_hat_j += delta_p * u_j`` and ``q_hat_j`` is shifted by ``delta_q * u'_j``
    and renormalized, with independent signs ``u, u'``. ``X`` (the fitting fold)
    is used for the feasibility check ``0 <= lam_hat <= rho``.
    """
    if delta_p < 0 or delta_q < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    active = estimate.p_hat > 0
    u = rng.choice((-1.0, 1.0), size=estimate.d)
    v = rng.choice((-1.0, 1.0), size=estimate.d)
    p_new = estimate.p_hat + np.where(active, delta_p * u, 0.0)
    # compose with any earlier shift: (q + s)/(1 + s) shifted by t gives shift s + t(1 + s)
    s = estimate.shift
    shift = np.where(active, s + delta_q * v * (1 + s), s)
    if (1 + shift <= 0).any():
        raise MechanismInfeasible("intensity shift makes the normalizer non-positive")
    out = replace(estimate, p_hat=frozen(p_new), shift=frozen(shift))
    if (p_new < 0).any() or (p_new > rho).any():
        raise MechanismInfeasible(f"perturbed p_hat leaves [0, {rho}]")
    if X is not None:
        lam = out.lam_hat(X)
        if (lam < 0).any() or (lam > rho).any():
            raise MechanismInfeasible(f"perturbed intensity leaves [0, {rho}]: range [{lam.min():.4g}, {lam.max():.4g}]")
    return out
