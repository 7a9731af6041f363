"""SGD driver with pluggable gradient estimators, step schedules and metrics."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ObservedDataset
from .glm import GlmFamily, row_gradients, row_losses
from .imputation import Imputer, impute, linked_ladder
from .mechanisms import MechanismSpec, cascade_thin
from .richardson import PlugInMechanism, RichardsonConfig, plugin_cascade
from .rng import SHUFFLE, XI, CounterRNG

__all__ = [
    "StepSchedule",
    "RunRecord",
    "SgdDiverged",
    "GradientEstimator",
    "LevelEstimator",
    "complete_estimator",
    "imputed_estimator",
    "richardson_estimator",
    "run_sgd",
    "run_richardson_sgd",
    "reference_parameter",
    "pmse",
    "schedule_bound",
    "calibrate_learning_rate",
    "LR_GRID",
]

log = logging.getLogger(__name__)

LR_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


class SgdDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """``inverse_time``: ``eta_i = c / (i + gamma)``; ``constant``: ``eta_i = eta``."""

    kind: str = "constant"
    c: float = 1.0
    gamma: float = 1.0
    eta: float = 1e-2

    def __post_init__(self):
        if self.kind == "inverse_time":
            if self.c <= 0 or self.gamma <= 0:
                raise ValueError("inverse_time needs c > 0 and gamma > 0")
        elif self.kind == "constant":
            if self.eta <= 0:
                raise ValueError("constant step must be positive")
        else:
            raise ValueError(f"unknown schedule {self.kind!r}")

    def __call__(self, i: int) -> float:
        if self.kind == "constant":
            return self.eta
        return self.c / (i + self.gamma)

    @property
    def eta0(self) -> float:
        return self(0)


def schedule_bound(family: GlmFamily, X) -> float | None:
    """Largest safe initial step ``alpha / (6 beta^2)`` for the linear family, else ``None``.

    ``alpha`` and ``beta`` are the extreme eigenvalues of ``S_n + ridge I``.
    """
    if family.kind != "linear":
        return None
    X = np.asarray(X, float)
    ev = np.linalg.eigvalsh(X.T @ X / X.shape[0]) + family.ridge
    return float(ev[0] / (6 * ev[-1] ** 2))


@dataclass(frozen=True, eq=False)
class RunRecord:
    method: str
    seed: int
    iterates: np.ndarray
    pmse: np.ndarray
    test_loss: np.ndarray
    wall_ms: float
    epoch_ms: tuple = ()

    def __post_init__(self):
        if not len(self.iterates) == len(self.pmse) == len(self.test_loss):
            raise ValueError("trajectory lengths differ")

    @property
    def epochs(self) -> int:
        return len(self.pmse) - 1

    @property
    def final_pmse(self) -> float:
        return float(self.pmse[-1])


def pmse(w, w_star) -> float:
    w = np.asarray(w, float)
    w_star = np.asarray(w_star, float)
    if w.shape != w_star.shape:
        raise ValueError(f"dimension mismatch: {w.shape} vs {w_star.shape}")
    return float(np.sum((w - w_star) ** 2) / w.size)


class GradientEstimator:
    """Minibatch gradient oracle: ``begin_epoch`` then ``gradient(w, rows)``."""

    def begin_epoch(self, epoch: int) -> None:  # pragma: no cover - interface
        pass

    def gradient(self, w, rows) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(eq=False)
class LevelEstimator(GradientEstimator):
    """``sum_l weights[l] * mean_i g(w; levels[l][i], y_i)`` with per-epoch levels.

    ``build(epoch)`` returns the completed covariate matrices; masks and
    imputations do not depend on ``w`` so they are built once per epoch.
    """

    family: GlmFamily
    y: np.ndarray
    build: Callable[[int], Sequence[np.ndarray]]
    weights: np.ndarray
    levels: list = field(default_factory=list, repr=False)

    def begin_epoch(self, epoch: int) -> None:
        self.levels = [np.asarray(x, float) for x in self.build(epoch)]
        if len(self.levels) != len(self.weights):
            raise ValueError("level count does not match weights")

    def gradient(self, w, rows) -> np.ndarray:
        y = self.y[rows]
        g = 0.0
        for a, x in zip(self.weights, self.levels):
            g = g + a * row_gradients(self.family, w, x[rows], y).mean(axis=0)
        return g


def complete_estimator(family: GlmFamily, data: ObservedDataset) -> LevelEstimator:
    X = np.asarray(data.oracle_values(), float)
    return LevelEstimator(family, data.responses, lambda epoch: [X], np.ones(1))


def _learner_view(data: ObservedDataset) -> np.ndarray:
    return np.where(data.mask.astype(bool), 0.0, data.values)


def _noise(imputer: Imputer, rng: CounterRNG, shape, epoch: int):
    return rng.grid_normal(XI, shape, epoch=epoch) if imputer.uses_noise else None


def imputed_estimator(family: GlmFamily, data: ObservedDataset, imputer: Imputer, seed: int) -> LevelEstimator:
    """Plain SGD on imputed data; stochastic imputers redraw their noise each epoch."""
    X = _learner_view(data)
    rng = CounterRNG(seed)
    cache: dict = {}

    def build(epoch):
        if not imputer.uses_noise:
            if "x" not in cache:
                cache["x"] = impute(imputer, X, data.mask)
            return [cache["x"]]
        return [impute(imputer, X, data.mask, _noise(imputer, rng, X.shape, epoch))]

    return LevelEstimator(family, data.responses, build, np.ones(1))


def richardson_estimator(family: GlmFamily, data: ObservedDataset, imputer: Imputer,
                         mechanism: MechanismSpec | PlugInMechanism, config: RichardsonConfig,
                         seed: int) -> LevelEstimator:
    """Cascade-thin the observed mask, impute once at the top level, restore downward.

    Thinning bits and imputation noise are redrawn every epoch; the observed
    mask itself is fixed.
    """
    X = _learner_view(data)
    rng = CounterRNG(seed)
    rows = np.arange(data.n)

    def build(epoch):
        if isinstance(mechanism, PlugInMechanism):
            masks = plugin_cascade(data.mask, mechanism, config.factors, X, rng, epoch=epoch, rows=rows)
        else:
            masks = cascade_thin(data.mask, mechanism, config.factors, X, rng, epoch=epoch, rows=rows)
        return linked_ladder(imputer, X, masks, _noise(imputer, rng, X.shape, epoch))

    return LevelEstimator(family, data.responses, build, np.asarray(config.weights, float))


def run_sgd(family: GlmFamily, estimator: GradientEstimator, n: int, schedule: StepSchedule, epochs: int,
            batch: int, seed: int, w0=None, *, w_star=None, test=None, method: str = "",
            eta_max: float | None = None, d: int | None = None) -> RunRecord:
    """``w <- w - eta_i * mean minibatch gradient`` over shuffled passes.

    Each epoch visits every index exactly once in an order keyed by
    ``(seed, epoch)``. ``test`` is an ``(X, y)`` pair of complete data for the
    unpenalized test loss. ``eta_max`` bounds the initial inverse-time step.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if schedule.kind == "inverse_time":
        if eta_max is None:
            warnings.warn("no step bound available; inverse-time schedule not checked", stacklevel=2)
        elif schedule.eta0 > eta_max * (1 + 1e-12):
            raise ValueError(f"initial step {schedule.eta0:.4g} exceeds the safe bound {eta_max:.4g}")
    if w0 is None:
        if d is None and w_star is None:
            raise ValueError("need w0, d or w_star to size the parameter")
        w0 = np.zeros(d if d is not None else len(w_star))
    w = np.array(w0, dtype=float)
    plain = GlmFamily(family.kind)
    rng = CounterRNG(seed)

    def metrics(w):
        e = pmse(w, w_star) if w_star is not None else np.nan
        t = float(row_losses(plain, w, *test).mean()) if test is not None else np.nan
        return e, t

    iterates = [w.copy()]
    e, t = metrics(w)
    errs, losses = [e], [t]
    start = time.perf_counter()
    epoch_ms = []
    step = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        estimator.begin_epoch(epoch)
        order = rng.generator(SHUFFLE, epoch).permutation(n)
        seen = np.zeros(n, np.int64)
        for a in range(0, n, batch):
            rows = order[a:a + batch]
            seen[rows] += 1
            w = w - schedule(step) * estimator.gradient(w, rows)
            step += 1
            if not np.isfinite(w).all():
                raise SgdDiverged(f"{method or 'sgd'}: non-finite iterate at epoch {epoch}, step {step}")
        if not (seen == 1).all():
            raise AssertionError("pass did not visit every sample exactly once")
        iterates.append(w.copy())
        with np.errstate(over="ignore", invalid="ignore"):
            e, t = metrics(w)
        if np.isinf(e) or np.isinf(t):
            raise SgdDiverged(f"{method or 'sgd'}: metrics overflow at epoch {epoch}")
        errs.append(e)
        losses.append(t)
        epoch_ms.append((time.perf_counter() - t0) * 1e3)
    wall = (time.perf_counter() - start) * 1e3
    return RunRecord(method, int(seed), np.array(iterates), np.array(errs), np.array(losses), wall, tuple(epoch_ms))


def run_richardson_sgd(family: GlmFamily, imputer: Imputer, mechanism: MechanismSpec | PlugInMechanism,
                       config: RichardsonConfig, data: ObservedDataset, schedule: StepSchedule, epochs: int,
                       batch: int, seed: int, w0=None, **kw) -> RunRecord:
    est = richardson_estimator(family, data, imputer, mechanism, config, seed)
    kw.setdefault("method", f"richardson-{config.order}")
    return run_sgd(family, est, data.n, schedule, epochs, batch, seed, w0, d=data.d, **kw)


def _objective(family: GlmFamily, w, X, y):
    return float(row_losses(family, w, X, y).mean()), row_gradients(family, w, X, y).mean(axis=0)


def reference_parameter(family: GlmFamily, X, y, ridge: float | None = None, *, w0=None, tol: float = 1e-9,
                        max_iter: int = 200_000) -> np.ndarray:
    """Ridge-penalized empirical risk minimizer by gradient descent with backtracking."""
    if ridge is not None:
        family = GlmFamily(family.kind, ridge)
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, float)
    f, g = _objective(family, w, X, y)
    eta = 1.0
    for _ in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        while True:
            cand = w - eta * g
            fc, gc = _objective(family, cand, X, y)
            if fc <= f - 0.5 * eta * gn**2 or eta < 1e-14:
                break
            eta *= 0.5
        w, f, g = cand, fc, gc
        eta *= 2.0
    else:
        raise RuntimeError(f"reference parameter did not converge: gradient norm {np.linalg.norm(g):.3g}")
    if family.kind == "linear":
        n = X.shape[0]
        closed = np.linalg.solve(X.T @ X / n + family.ridge * np.eye(X.shape[1]), X.T @ y / n)
        if np.max(np.abs(closed - w)) > 1e-8:
            raise AssertionError("gradient descent disagrees with the closed-form ridge solution")
    return w


def calibrate_learning_rate(family: GlmFamily, data: ObservedDataset, w_star, epochs: int, batch: int, seed: int,
                            base: float = 1e-2, grid: Sequence[float] = LR_GRID) -> tuple[float, dict]:
    """Pick the constant step from ``base * grid`` minimizing final PMSE on complete data."""
    scores = {}
    for m in grid:
        eta = base * m
        try:
            rec = run_sgd(family, complete_estimator(family, data), data.n, StepSchedule("constant", eta=eta),
                          epochs, batch, seed, w_star=w_star, method="calibration")
            scores[eta] = rec.final_pmse
        except SgdDiverged:
            scores[eta] = np.inf
    best = min(scores, key=lambda k: (scores[k], k))
    log.info("learning-rate grid %s -> %g", scores, best)
    return best, scores
