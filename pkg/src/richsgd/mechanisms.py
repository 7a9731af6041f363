"""Missingness mechanisms: sampling, calibration and Bernoulli thinning.

Two mechanism kinds are supported:

* ``hmcar``: column ``j`` is missing with probability ``p_j`` independently of
  the data.
* ``smar``: column ``j`` is missing with probability ``p_j * q_j(V)`` where
  ``V`` are the always-observed columns and
  ``q_j(v) = sigmoid(<weights_j, v> + bias_j) / scale_j`` with ``scale_j`` the
  mean of the sigmoid over a calibration sample, so that ``q_j`` averages to 1.

All masks are drawn from :class:`~richsgd.rng.CounterRNG` streams keyed by
(row, column, level, epoch), which makes every thinning level replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import as_mask, frozen
from .rng import MASK, THIN, CounterRNG

__all__ = [
    "MechanismInfeasible",
    "MechanismSpec",
    "ThinningPlan",
    "hmcar",
    "smar",
    "hetero_mcar",
    "calibrated_smar",
    "sample_mask",
    "plan_thinning",
    "thin_mask",
    "thin_with_keep",
    "cascade_thin",
    "marginal_intensity",
    "calibrate_mean_missingness",
    "co_missingness",
]

_FEAS_TOL = 1e-12


class MechanismInfeasible(ValueError):
    """An intensity or thinning factor leaves the admissible range."""


@dataclass(frozen=True, eq=False)
class MechanismSpec:
    kind: str
    p: np.ndarray
    observed: tuple[int, ...] = ()
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("hmcar", "smar"):
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        p = frozen(self.p, float)
        if p.ndim != 1:
            raise ValueError("p must be a vector")
        if (p < 0).any() or (p >= 1).any():
            raise MechanismInfeasible("every p_j must lie in [0, 1)")
        obs = tuple(sorted(int(j) for j in self.observed))
        for j in obs:
            if p[j] != 0:
                raise ValueError(f"always-observed column {j} has p_j={p[j]} != 0")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "observed", obs)
        if self.kind == "smar":
            if self.weights is None or self.bias is None or self.scale is None:
                raise ValueError("smar needs weights, bias and scale")
            W = frozen(self.weights, float).reshape(len(p), len(obs))
            object.__setattr__(self, "weights", W)
            object.__setattr__(self, "bias", frozen(self.bias, float))
            object.__setattr__(self, "scale", frozen(self.scale, float))

    @property
    def d(self) -> int:
        return len(self.p)

    @property
    def maskable(self) -> np.ndarray:
        return np.flatnonzero(self.p > 0)

    def intensity(self, X) -> np.ndarray:
        """Per-entry ``a_j(V_i)``; identically 1 under hMCAR."""
        X = np.asarray(X, float)
        if self.kind == "hmcar":
            return np.ones((X.shape[0], self.d))
        V = X[:, list(self.observed)]
        a = expit(V @ self.weights.T + self.bias) / self.scale
        a[:, list(self.observed)] = 1.0
        return a

    def lam(self, X, scale: float = 1.0) -> np.ndarray:
        """Conditional missingness probabilities ``scale * p_j * a_j(V_i)``."""
        lam = scale * self.p * self.intensity(X)
        if (lam >= 1).any():
            i, j = np.unravel_index(np.argmax(lam), lam.shape)
            raise MechanismInfeasible(f"intensity {lam[i, j]:.6g} >= 1 at row {i}, column {j}")
        return lam

    def with_p(self, p) -> "MechanismSpec":
        return MechanismSpec(self.kind, p, self.observed, self.weights, self.bias, self.scale)

    def to_dict(self) -> dict[str, str]:
        out = {"kind": self.kind, "p": _fmt(self.p), "observed": ",".join(map(str, self.observed))}
        if self.kind == "smar":
            out["weights"] = _fmt(self.weights.ravel())
            out["bias"] = _fmt(self.bias)
            out["scale"] = _fmt(self.scale)
        return out

    @classmethod
    def from_dict(cls, cfg: dict[str, str]) -> "MechanismSpec":
        p = _parse(cfg["p"])
        observed = tuple(int(s) for s in cfg.get("observed", "").split(",") if s.strip())
        if cfg["kind"] == "smar":
            return cls("smar", p, observed, _parse(cfg["weights"]), _parse(cfg["bias"]), _parse(cfg["scale"]))
        return cls(cfg["kind"], p, observed)


def _fmt(a) -> str:
    return ",".join(repr(float(x)) for x in np.ravel(a))


def _parse(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(",") if x.strip()], dtype=float)


def hmcar(p, observed: Sequence[int] = ()) -> MechanismSpec:
    return MechanismSpec("hmcar", p, tuple(observed))


def smar(X, observed: Sequence[int], weights, bias, p) -> MechanismSpec:
    """Build an sMAR mechanism, normalizing each ``q_j`` to mean 1 on ``X``."""
    X = np.asarray(X, float)
    obs = list(observed)
    W = np.asarray(weights, float).reshape(len(p), len(obs))
    b = np.asarray(bias, float)
    scale = expit(X[:, obs] @ W.T + b).mean(axis=0)
    return MechanismSpec("smar", p, tuple(obs), W, b, scale)


def hetero_mcar(d: int, target: float, rng: np.random.Generator, observed: Sequence[int] = ()) -> MechanismSpec:
    """Uniform raw scores on the maskable columns rescaled to mean ``target``."""
    raw = rng.uniform(0.0, 1.0, size=d)
    raw[list(observed)] = 0.0
    maskable = np.setdiff1d(np.arange(d), observed)
    p = raw * target / raw[maskable].mean()
    return hmcar(p, observed)


def calibrated_smar(X, target: float, rng: np.random.Generator, observed: Sequence[int] = (0, 1)) -> MechanismSpec:
    """Logistic sMAR: ``Q(u) = sigmoid(1.6 u - 0.3)`` with ``u = a_j X_1 + b_j X_2``.

    ``a_j, b_j`` are i.i.d. uniform on (0, 1); ``p`` is calibrated to an
    average missingness of ``target`` over the maskable entries.
    """
    X = np.asarray(X, float)
    d = X.shape[1]
    obs = list(observed)
    coef = rng.uniform(0.0, 1.0, size=(d, len(obs)))
    p = np.full(d, target)
    p[obs] = 0.0
    spec = smar(X, obs, 1.6 * coef, np.full(d, -0.3), p)
    return calibrate_mean_missingness(spec, X, target)


def marginal_intensity(spec: MechanismSpec, v, j: int) -> float:
    """``p_j * a_j(v)`` for a single row of always-observed values ``v``."""
    if spec.p[j] == 0:
        return 0.0
    if spec.kind == "hmcar":
        lam = float(spec.p[j])
    else:
        v = np.asarray(v, float)
        lam = float(spec.p[j] * expit(spec.weights[j] @ v + spec.bias[j]) / spec.scale[j])
    if not 0.0 <= lam < 1.0:
        raise MechanismInfeasible(f"intensity {lam} outside [0, 1) for column {j}")
    return lam


def co_missingness(spec: MechanismSpec, S, v) -> float:
    """Probability that every column in ``S`` is missing given ``v`` (independent mask)."""
    out = 1.0
    for j in S:
        out *= marginal_intensity(spec, v, j)
    return out


def calibrate_mean_missingness(spec: MechanismSpec, X, target: float) -> MechanismSpec:
    """Rescale ``p`` so the mean of ``lambda_j(V_i)`` over maskable entries is ``target``.

    Intensities are re-normalized to sample mean 1 on ``X`` first.
    """
    if not 0.0 <= target < 1.0:
        raise ValueError("target must lie in [0, 1)")
    X = np.asarray(X, float)
    if spec.kind == "smar":
        spec = smar(X, spec.observed, spec.weights, spec.bias, spec.p)
    maskable = np.setdiff1d(np.arange(spec.d), spec.observed)
    if target == 0.0:
        return spec.with_p(np.zeros(spec.d))
    p = np.array(spec.p)
    current = p[maskable].mean()
    if current == 0.0:
        p[maskable] = 1.0
        current = 1.0
    p = p * (target / current)
    a_max = spec.intensity(X).max(axis=0)
    if (p * a_max >= 1).any():
        j = int(np.argmax(p * a_max))
        raise MechanismInfeasible(
            f"target {target} needs intensity {p[j] * a_max[j]:.4g} >= 1 on column {j}"
        )
    return spec.with_p(p)


def sample_mask(spec: MechanismSpec, X, rng: CounterRNG, *, rows=None, epoch: int = 0) -> np.ndarray:
    """Independent Bernoulli mask with ``P(M_ij = 1 | V_i) = lambda_j(V_i)``."""
    X = np.asarray(X, float)
    lam = spec.lam(X)
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    u = rng.uniform(MASK, rows, np.arange(spec.d), epoch=epoch)
    return (u < lam).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ThinningPlan:
    """Keep-probabilities for one thinning step from intensity ``base*lam`` to ``factor*base*lam``."""

    factor: float
    keep: np.ndarray = field(repr=False)


def plan_thinning(lam_current, factor: float) -> ThinningPlan:
    """Eagerly validate ``factor * lam <= 1`` and build keep-probabilities.

    ``keep = (1 - factor * lam) / (1 - lam)``.
    """
    if factor <= 1:
        raise ValueError(f"thinning factor must exceed 1, got {factor}")
    lam = np.asarray(lam_current, float)
    target = factor * lam
    if (target > 1 + _FEAS_TOL).any():
        i, j = np.unravel_index(np.argmax(target), target.shape)
        raise MechanismInfeasible(
            f"thinning factor {factor} infeasible on column {j}: intensity {target[i, j]:.6g} > 1"
        )
    keep = np.clip((1.0 - target) / (1.0 - lam), 0.0, 1.0)
    return ThinningPlan(float(factor), frozen(keep))


def thin_with_keep(mask, keep, u) -> np.ndarray:
    """``M' = 1 - (1 - M) * r`` with ``r = [u < keep]``."""
    mask = as_mask(mask)
    r = (np.asarray(u) < keep).astype(np.uint8)
    return 1 - (1 - mask) * r


def thin_mask(mask_p, spec: MechanismSpec, C: float, X, rng: CounterRNG, *,
              level: int = 1, epoch: int = 0, rows=None) -> np.ndarray:
    """Further-thin a mask at scale ``p`` to scale ``C p``."""
    X = np.asarray(X, float)
    plan = plan_thinning(spec.lam(X), C)
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    u = rng.uniform(THIN, rows, np.arange(spec.d), level=level, epoch=epoch)
    return thin_with_keep(mask_p, plan.keep, u)


def cascade_thin(mask_p, spec: MechanismSpec, factors: Sequence[float], X, rng: CounterRNG, *,
                 epoch: int = 0, rows=None) -> list[np.ndarray]:
    """Nested masks at scales ``C_0 p, ..., C_k p`` with ``C_0 = 1``."""
    factors = [float(c) for c in factors]
    if factors[0] != 1.0 or any(b <= a for a, b in zip(factors, factors[1:])):
        raise ValueError("factors must start at 1 and be strictly increasing")
    if len(factors) == 1:
        return [as_mask(mask_p)]
    X = np.asarray(X, float)
    lam = spec.lam(X)
    plan_thinning(lam, factors[-1])  # fail fast on the top level
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    cols = np.arange(spec.d)
    masks = [as_mask(mask_p)]
    for level in range(1, len(factors)):
        plan = plan_thinning(factors[level - 1] * lam, factors[level] / factors[level - 1])
        u = rng.uniform(THIN, rows, cols, level=level, epoch=epoch)
        masks.append(thin_with_keep(masks[-1], plan.keep, u))
    return masks
