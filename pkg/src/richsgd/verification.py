"""Executable bias identities, each reduced to measured values against tolerances.

All expectations are exact sums over masks on a finite empirical measure, so
the tolerances are numerical rather than statistical.
"""

from __future__ import annotations

import json
import operator
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .glm import GlmFamily, first_order_operator_column, row_gradients
from .imputation import fit_imputer, linked_ladder
from .mechanisms import cascade_thin, hmcar, sample_mask
from .oracle import exact_bias
from .richardson import (
    RichardsonConfig,
    gradient_variance,
    multi_order_gradient,
    plugin_exact_bias,
    richardson_exact_bias,
)
from .rng import CounterRNG

__all__ = [
    "Criterion",
    "TheoremCheck",
    "sample_conditional_bias_closed_form",
    "check_sample_conditional_bias_linear",
    "check_first_order_operator",
    "check_plugin_bound_shape",
    "measure_variance_inflation",
    "run_all",
    "write_verdict",
]

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Criterion:
    label: str
    value: float
    op: str
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and _OPS[self.op](self.value, self.threshold))


@dataclass(frozen=True)
class TheoremCheck:
    name: str
    inputs: dict
    criteria: tuple
    measured: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        out["criteria"] = [dict(asdict(c), passed=c.passed) for c in self.criteria]
        return out


def sample_conditional_bias_closed_form(x, y, w, p) -> np.ndarray:
    """Zero-imputed squared-loss gradient bias given one row, independent hMCAR masks."""
    x, w, p = (np.asarray(a, float) for a in (x, w, p))
    pair = p[:, None] + p[None, :] - p[:, None] * p[None, :]
    np.fill_diagonal(pair, 0.0)
    return -p * x**2 * w - x * (pair @ (x * w)) + p * y * x


def check_sample_conditional_bias_linear(seed: int = 0, instances: int = 50, d: int = 4) -> TheoremCheck:
    rng = np.random.default_rng([seed, 11])
    fam = GlmFamily("linear")
    imp = fit_imputer("zero", (np.zeros((1, d)), np.zeros((1, d))))
    errs = []
    for _ in range(instances):
        x, w = rng.standard_normal(d), rng.standard_normal(d)
        y = float(rng.standard_normal())
        p = rng.uniform(0.0, 0.9, d)
        enum = exact_bias(fam, imp, (x[None, :], np.array([y])), hmcar(p), w, method="enumeration").bias
        errs.append(float(np.max(np.abs(enum - sample_conditional_bias_closed_form(x, y, w, p)))))
    return TheoremCheck(
        "sample_conditional_bias_linear",
        {"family": "linear", "imputer": "zero", "d": d, "instances": instances, "seed": seed},
        (Criterion("max_abs_error", max(errs), "<", 1e-10),),
        {"errors": errs},
    )


def _instance(family: str, seed: int, n: int = 40, d: int = 4):
    rng = np.random.default_rng([seed, 23, d])
    L = np.linalg.cholesky(0.5 ** np.abs(np.subtract.outer(np.arange(d), np.arange(d))))
    X = rng.standard_normal((n, d)) @ L.T
    w = rng.standard_normal(d) * 0.5
    z = X @ w
    if family == "linear":
        y = z + rng.standard_normal(n)
    elif family == "logistic":
        y = np.where(rng.random(n) < 1 / (1 + np.exp(-z)), 1.0, -1.0)
    else:
        y = rng.poisson(np.exp(z)).astype(float)
    return X, y, w


def check_first_order_operator(seed: int = 0) -> TheoremCheck:
    """Residual ``bias(t p) - t A p`` has vanishing constant and linear terms in ``t``.

    The residual is a polynomial of degree ``d_miss`` in ``t``; it is fitted
    exactly at that degree and its two lowest coefficients are reported.
    """
    p = np.array([0.10, 0.15, 0.08, 0.12])
    d = len(p)
    mech = hmcar(p)
    ts = np.linspace(0.1, 1.0, 10)
    V = np.vander(ts, d + 1, increasing=True)
    crit, measured = [], {}
    for family in ("linear", "logistic", "poisson"):
        X, y, w = _instance(family, seed)
        fam = GlmFamily(family)
        for kind in ("zero", "mean"):
            imp = fit_imputer(kind, (X, np.zeros(X.shape)))
            A = np.column_stack([first_order_operator_column(fam, imp, (X, y), mech, w, j) for j in range(d)])
            res = np.array([exact_bias(fam, imp, (X, y), mech, w, t).bias - t * (A @ p) for t in ts])
            coef = np.linalg.lstsq(V, res, rcond=None)[0]
            key = f"{family}/{kind}"
            measured[key] = {"constant": float(np.abs(coef[0]).max()), "linear": float(np.abs(coef[1]).max())}
            crit.append(Criterion(f"{key} |constant|", measured[key]["constant"], "<", 1e-9))
            crit.append(Criterion(f"{key} |linear|", measured[key]["linear"], "<", 1e-9))
            if family == "linear" and kind == "zero":
                S = X.T @ X / len(X)
                off = S - np.diag(np.diag(S))
                q = p * (off @ (p * w))
                gap = float(np.abs(res[-1] - q).max())
                measured["linear/zero closed-form gap"] = gap
                crit.append(Criterion("linear/zero residual vs closed form", gap, "<", 1e-10))
    X, y, w = _instance("logistic", seed)
    zero = float(np.abs(exact_bias(GlmFamily("logistic"), fit_imputer("mean", (X, np.zeros(X.shape))), (X, y),
                                   mech, w, 0.0).bias).max())
    crit.append(Criterion("residual at p = 0", zero, "<", 1e-14))
    return TheoremCheck("first_order_operator", {"p": p.tolist(), "scales": ts.tolist(), "seed": seed},
                        tuple(crit), measured)


def check_plugin_bound_shape(seed: int = 0, p0: float = 0.05, C: float = 2.0) -> TheoremCheck:
    """Plug-in Richardson bias under hMCAR as the estimated rate drifts by ``delta_p``."""
    d = 2
    X, y, w = _instance("logistic", seed, n=60, d=d)
    fam = GlmFamily("logistic")
    imp = fit_imputer("zero", (X, np.zeros(X.shape)))
    mech = hmcar(np.full(d, p0))
    lam = mech.lam(X)
    deltas = np.array([0.0, 0.02, 0.04, 0.06, 0.08, 0.10])
    bias = [plugin_exact_bias(fam, imp, (X, y), mech, lam + dp, C, w) for dp in deltas]
    exact = richardson_exact_bias(fam, imp, (X, y), mech, w, RichardsonConfig.from_factors((1.0, C)))
    eq0 = float(np.abs(bias[0] - exact).max())
    incr = np.array([np.linalg.norm(b - bias[0]) / dp for b, dp in zip(bias[1:], deltas[1:])])
    ratio = float(incr.max() / incr.min())
    A = np.column_stack([first_order_operator_column(fam, imp, (X, y), mech, w, j) for j in range(d)])
    dp = deltas[1]
    e = (C - 1) * dp / (1 - (p0 + dp))
    predicted = -(A @ np.full(d, e)) / (C - 1)
    diff = bias[1] - bias[0]
    cosine = float(diff @ predicted / (np.linalg.norm(diff) * np.linalg.norm(predicted)))
    norms = [float(np.linalg.norm(b)) for b in bias]
    return TheoremCheck(
        "plugin_bound_shape",
        {"family": "logistic", "imputer": "zero", "d": d, "p": p0, "C": C, "deltas": deltas.tolist(), "seed": seed},
        (
            Criterion("delta_p = 0 vs exact-mechanism Richardson", eq0, "<", 1e-12),
            Criterion("max/min of bias increment per unit delta_p", ratio, "<=", 1.5),
            Criterion("cosine(observed shift, -A e / (C - 1))", cosine, ">", 0.9),
        ),
        {"bias_norms": norms, "increments": incr.tolist()},
    )


def measure_variance_inflation(seed: int = 0, max_order: int = 3, C: float = 1.5,
                               reps: int = 2000) -> TheoremCheck:
    """Per-row gradient variance of the order-k estimator relative to the plain one, k <= ``max_order``.

    All orders share one sampled mask cascade with factors ``C^l`` so the
    ratios differ only through the weights. Growth is reported, not asserted.
    """
    p = np.array([0.10, 0.15, 0.08, 0.12])
    X, y, w = _instance("logistic", seed)
    fam = GlmFamily("logistic")
    imp = fit_imputer("mean", (X, np.zeros(X.shape)))
    mech = hmcar(p)
    Xt, yt = np.tile(X, (reps, 1)), np.tile(y, reps)
    rng = CounterRNG(seed)
    factors = [C**ell for ell in range(max_order + 1)]
    masks = cascade_thin(sample_mask(mech, Xt, rng), mech, factors, Xt, rng)
    grads = [row_gradients(fam, w, xl, yt) for xl in linked_ladder(imp, Xt, masks)]
    base = gradient_variance(grads[0])
    ratios, weight_l1 = {}, {}
    for k in range(1, max_order + 1):
        cfg = RichardsonConfig.from_factors(factors[: k + 1])
        ratios[k] = gradient_variance(multi_order_gradient(grads[: k + 1], cfg)) / base
        weight_l1[k] = float(np.abs(cfg.weights).sum())
    return TheoremCheck(
        "variance_inflation",
        {"family": "logistic", "imputer": "mean", "p": p.tolist(), "C": C, "reps": reps, "seed": seed},
        (Criterion("min variance ratio over k", min(ratios.values()), ">=", 1.0),),
        {"variance_ratio": {str(k): v for k, v in ratios.items()},
         "weight_l1": {str(k): v for k, v in weight_l1.items()}},
    )


def run_all(seed: int = 0) -> list[TheoremCheck]:
    return [check_sample_conditional_bias_linear(seed), check_first_order_operator(seed),
            check_plugin_bound_shape(seed), measure_variance_inflation(seed)]


def write_verdict(checks, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"all_passed": all(c.verdict for c in checks), "checks": [c.to_dict() for c in checks]}
    path.write_text(json.dumps(payload, indent=2, default=float) + "\n", encoding="utf-8")
