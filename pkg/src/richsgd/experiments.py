"""Experiment orchestration: training grids, bias sweeps and plug-in robustness tables."""

from __future__ import annotations

import csv
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, ConfigError
from .core import ObservedDataset
from .data import SYNTHETIC, SyntheticSpec, generate_synthetic, load_csv, standardize, train_test_split
from .glm import GlmFamily
from .imputation import KINDS, fit_imputer
from .mech_estimation import estimate_q, perturb
from .mechanisms import MechanismInfeasible, MechanismSpec, calibrated_smar, hetero_mcar, hmcar, sample_mask
from .oracle import MAX_ENUM, exact_bias, monte_carlo_bias
from .richardson import (
    PlugInMechanism,
    RichardsonConfig,
    monte_carlo_richardson_bias,
    richardson_exact_bias,
)
from .rng import PERTURB, CounterRNG
from .sgd import (
    RunRecord,
    SgdDiverged,
    StepSchedule,
    calibrate_learning_rate,
    complete_estimator,
    imputed_estimator,
    reference_parameter,
    run_richardson_sgd,
    run_sgd,
    schedule_bound,
)

__all__ = [
    "HEADER",
    "Method",
    "Prepared",
    "ExperimentResult",
    "parse_method",
    "prepare",
    "execute",
    "run_experiment",
    "write_results",
    "summarize",
    "loglog_slope",
    "bias_sweep",
    "robustness",
    "fmt",
]

log = logging.getLogger(__name__)

HEADER = ("run_id", "seed", "family", "dataset", "mechanism", "imputer", "method", "order", "epoch", "pmse",
          "test_loss", "wall_ms")
EXACT_ZERO = 1e-8
_ALIASES = {"mice": "iterative_ridge"}


def fmt(x) -> str:
    """Floats with 17 significant digits; integers and strings verbatim."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass(frozen=True)
class Method:
    name: str
    kind: str  # complete | imputed | richardson | plugin
    imputer: str = "none"
    order: int = 0


def parse_method(name: str, default_order: int = 1) -> Method:
    if name == "complete":
        return Method(name, "complete")
    m = re.fullmatch(r"(rich|plugin)(\d*)-(\w+)", name)
    if m:
        prefix, k, imp = m.groups()
        kind = "richardson" if prefix == "rich" else "plugin"
        order = int(k) if k else default_order
        if order < 1:
            raise ConfigError(f"method {name!r}: order must be at least 1")
    else:
        kind, order, imp = "imputed", 0, name
    if _ALIASES.get(imp, imp) not in KINDS:
        raise ConfigError(f"method {name!r}: unknown imputer {imp!r}")
    return Method(name, kind, imp, order)


@dataclass(frozen=True, eq=False)
class Prepared:
    family: GlmFamily
    train: ObservedDataset
    test: tuple
    w_star: np.ndarray
    mechanism: MechanismSpec
    eta: float
    lr_scores: dict = field(default_factory=dict)


def _family(cfg: Config) -> GlmFamily:
    try:
        return GlmFamily(cfg.text("experiment.family"), cfg.number("experiment.ridge"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _observed_cols(cfg: Config) -> tuple:
    """Always-observed columns; the config lists them 1-based, internal indices are 0-based."""
    obs = cfg.integers("mechanism.observed")
    if not obs and cfg.text("mechanism.kind") == "smar":
        obs = [1, 2]
    if any(j < 1 for j in obs):
        raise ConfigError("mechanism.observed uses 1-based column positions")
    return tuple(j - 1 for j in obs)


def build_mechanism(cfg: Config, X, seed: int) -> MechanismSpec:
    kind = cfg.text("mechanism.kind")
    mean = cfg.number("mechanism.mean")
    obs = _observed_cols(cfg)
    d = X.shape[1]
    rng = np.random.default_rng([seed, 0x3EC])
    if kind == "hmcar":
        p = np.full(d, mean)
        p[list(obs)] = 0.0
        return hmcar(p, obs)
    if kind == "hetero_mcar":
        return hetero_mcar(d, mean, rng, obs)
    if kind == "smar":
        return calibrated_smar(X, mean, rng, obs)
    raise ConfigError(f"unknown mechanism kind {kind!r}")


def _load_real(cfg: Config, family: GlmFamily):
    path = cfg.text("data.path")
    resp, na = cfg.text("data.response"), cfg.text("data.na_token")
    full = load_csv(path, resp, na)
    if full.mask.any():
        raise ConfigError(f"{path}: experiment data must be complete; missingness is introduced by the mechanism")
    if cfg.text("data.test_path"):
        test = load_csv(cfg.text("data.test_path"), resp, na)
        train = full
    else:
        n_train = cfg.integer("experiment.n_train")
        if not 0 < n_train < full.n:
            raise ConfigError("experiment.n_train must leave a non-empty test fold")
        train, test = full.subset(np.arange(n_train)), full.subset(np.arange(n_train, full.n))
    train, test, _ = standardize(train, test, zscore_response=family.kind == "linear")
    ytr, yte = train.responses, test.responses
    if family.kind == "poisson":
        # rescale counts to mean about 2, round half to even
        scale = 2.0 / max(float(ytr.mean()), 1e-12)
        ytr, yte = np.round(ytr * scale), np.round(yte * scale)
    family.validate_responses(ytr)
    Xtr, Xte = train.values, test.values
    w_star = reference_parameter(family, Xtr, ytr)
    return Xtr, ytr, (Xte, yte), w_star


def prepare(cfg: Config, seed: int) -> Prepared:
    """Data, mechanism, observed mask and calibrated step for one seed."""
    family = _family(cfg)
    if cfg.text("data.path"):
        Xtr, ytr, test, w_star = _load_real(cfg, family)
    else:
        name = cfg.text("experiment.dataset")
        if name not in SYNTHETIC:
            raise ConfigError(f"unknown dataset {name!r}; set data.path for CSV input")
        spec = SYNTHETIC[name]
        if spec.family != family.kind:
            raise ConfigError(f"dataset {name} is a {spec.family} dataset, not {family.kind}")
        n_train, n_test = cfg.integer("experiment.n_train"), cfg.integer("experiment.n_test")
        X, y, w_star = generate_synthetic(spec, seed, n=n_train + n_test)
        (Xtr, ytr), test = train_test_split(X, y, n_train)
    mech = build_mechanism(cfg, Xtr, seed)
    mask = sample_mask(mech, Xtr, CounterRNG(seed))
    train = ObservedDataset(Xtr, mask, ytr, frozenset(mech.observed))
    eta, scores = np.nan, {}
    if cfg.text("schedule.kind") == "constant":
        if cfg.text("schedule.eta") == "auto":
            eta, scores = calibrate_learning_rate(family, train, w_star, cfg.integer("experiment.epochs"),
                                                  cfg.integer("experiment.batch"), seed,
                                                  base=cfg.number("schedule.lr_base"))
        else:
            eta = cfg.number("schedule.eta")
    return Prepared(family, train, test, np.asarray(w_star), mech, float(eta), scores)


def _schedule(cfg: Config, prep: Prepared) -> tuple[StepSchedule, float | None]:
    kind = cfg.text("schedule.kind")
    try:
        if kind == "constant":
            return StepSchedule("constant", eta=prep.eta), None
        sched = StepSchedule(kind, c=cfg.number("schedule.c"), gamma=cfg.number("schedule.gamma"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bound = cfg.number("schedule.eta_max") if cfg.text("schedule.eta_max") else schedule_bound(prep.family,
                                                                                             prep.train.values)
    return sched, bound


def _imputer(cfg: Config, kind: str, train: ObservedDataset):
    return fit_imputer(_ALIASES.get(kind, kind), train, k=cfg.integer("imputer.k"),
                       rounds=cfg.integer("imputer.rounds"), stochastic=cfg.flag("imputer.stochastic"))


def _ladder(cfg: Config, order: int, lam) -> RichardsonConfig:
    return RichardsonConfig.geometric(order, cfg.number("richardson.C"), float(np.max(lam)))


def plug_in_for(cfg: Config, prep: Prepared, seed: int, delta_p: float, delta_q: float) -> PlugInMechanism:
    view = np.where(prep.train.mask.astype(bool), 0.0, prep.train.values)
    est = estimate_q(prep.train.mask, view, prep.mechanism.observed)
    est = perturb(est, delta_p, delta_q, CounterRNG(seed).generator(PERTURB), X=view)
    return PlugInMechanism(est)


def execute(cfg: Config, seed: int, method: Method, prep: Prepared) -> RunRecord:
    sched, bound = _schedule(cfg, prep)
    epochs, batch = cfg.integer("experiment.epochs"), cfg.integer("experiment.batch")
    kw = dict(w_star=prep.w_star, test=prep.test, method=method.name, eta_max=bound)
    fam, train = prep.family, prep.train
    if method.kind == "complete":
        return run_sgd(fam, complete_estimator(fam, train), train.n, sched, epochs, batch, seed, d=train.d, **kw)
    imp = _imputer(cfg, method.imputer, train)
    if method.kind == "imputed":
        return run_sgd(fam, imputed_estimator(fam, train, imp, seed), train.n, sched, epochs, batch, seed,
                       d=train.d, **kw)
    if method.kind == "richardson":
        mech = prep.mechanism
        ladder = _ladder(cfg, method.order, mech.lam(train.values))
    else:
        mech = plug_in_for(cfg, prep, seed, cfg.number("plugin.delta_p"), cfg.number("plugin.delta_q"))
        ladder = _ladder(cfg, method.order, mech.lam_hat(np.where(train.mask.astype(bool), 0.0, train.values)))
    return run_richardson_sgd(fam, imp, mech, ladder, train, sched, epochs, batch, seed, **kw)


@dataclass
class ExperimentResult:
    rows: list
    records: dict
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _seed_job(args):
    values, seed, methods, base_id = args
    cfg = Config(values)
    out, failures = [], []
    try:
        prep = prepare(cfg, seed)
    except (ValueError, RuntimeError) as exc:
        return [], [(base_id + i, seed, m, f"{type(exc).__name__}: {exc}") for i, m in enumerate(methods)]
    for i, name in enumerate(methods):
        method = parse_method(name, cfg.integer("richardson.order"))
        try:
            out.append((base_id + i, execute(cfg, seed, method, prep)))
        except (SgdDiverged, MechanismInfeasible, ValueError, RuntimeError) as exc:
            failures.append((base_id + i, seed, name, f"{type(exc).__name__}: {exc}"))
    return out, failures


def run_experiment(cfg: Config, threads: int = 1) -> ExperimentResult:
    """Every (seed, method) pair; rows in run_id order regardless of worker count."""
    methods = cfg.items("experiment.methods")
    for m in methods:
        parse_method(m, cfg.integer("richardson.order"))
    seeds = cfg.integers("experiment.seeds")
    if not seeds:
        raise ConfigError("experiment.seeds is empty")
    jobs = [(cfg.values, s, methods, i * len(methods)) for i, s in enumerate(seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_seed_job, jobs))
    else:
        results = [_seed_job(j) for j in jobs]
    records, failures = {}, []
    for out, fails in results:
        records.update(dict(out))
        failures.extend(fails)
    timing = cfg.flag("experiment.timing")
    dataset = Path(cfg.text("data.path")).stem if cfg.text("data.path") else cfg.text("experiment.dataset")
    rows = []
    for run_id in sorted(records):
        rec = records[run_id]
        method = parse_method(rec.method, cfg.integer("richardson.order"))
        wall = np.concatenate([[0.0], np.cumsum(rec.epoch_ms)]) if timing else np.zeros(rec.epochs + 1)
        for e in range(rec.epochs + 1):
            rows.append((run_id, rec.seed, cfg.text("experiment.family"), dataset, cfg.text("mechanism.kind"),
                         method.imputer, method.name, method.order, e, float(rec.pmse[e]),
                         float(rec.test_loss[e]), float(wall[e])))
    failures.sort()
    return ExperimentResult(rows, records, failures)


def summarize(result: ExperimentResult) -> list[tuple]:
    """Per method: runs, failures, mean and sd of final PMSE and test loss."""
    by: dict[str, list] = {}
    for rec in result.records.values():
        by.setdefault(rec.method, []).append((rec.pmse[-1], rec.test_loss[-1]))
    failed: dict[str, int] = {}
    for f in result.failures:
        failed[f[2]] = failed.get(f[2], 0) + 1
    out = []
    for name in sorted(set(by) | set(failed)):
        vals = np.array(by.get(name, []), float).reshape(-1, 2)
        sd = vals.std(axis=0, ddof=1) if len(vals) > 1 else np.zeros(2)
        mean = vals.mean(axis=0) if len(vals) else np.full(2, np.nan)
        out.append((name, len(vals), failed.get(name, 0), mean[0], sd[0], mean[1], sd[1]))
    return out


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def write_results(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    _write_csv(out / "results.csv", HEADER, result.rows)
    _write_csv(out / "summary.csv",
               ("method", "runs", "failed", "pmse_mean", "pmse_sd", "test_loss_mean", "test_loss_sd"),
               summarize(result))
    if result.failures:
        _write_csv(out / "failures.csv", ("run_id", "seed", "method", "error"), result.failures)


def loglog_slope(scales, norms) -> float:
    """Ordinary least-squares slope of ``log norm`` against ``log scale``."""
    x, y = np.log(np.asarray(scales, float)), np.log(np.asarray(norms, float))
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


@dataclass
class SweepResult:
    rows: list  # (order, linking, scale, bias_norm, method)
    slopes: list  # (order, linking, slope or nan, exact_zero)


def sweep_instance(cfg: Config, seed: int):
    """Small complete dataset with correlated covariates for bias sweeps."""
    family = _family(cfg)
    p = np.asarray(cfg.numbers("sweep.p"))
    norm = {"linear": 1.0, "logistic": 2.0, "poisson": float(np.sqrt(1.4))}[family.kind]
    spec = SyntheticSpec("sweep", family.kind, len(p), n=cfg.integer("sweep.n"), cov="ar", rho=0.5, w_norm=norm)
    X, y, w_star = generate_synthetic(spec, seed)
    return family, X, y, w_star, hmcar(p)


def bias_sweep(cfg: Config, seed: int = 0) -> SweepResult:
    """Bias norm at ``w_star`` over the scale grid for each estimator order."""
    family, X, y, w_star, mech = sweep_instance(cfg, seed)
    kind = _ALIASES.get(cfg.text("sweep.imputer"), cfg.text("sweep.imputer"))
    # imputer fitted on an independent auxiliary draw of the same design
    _, Xa, _, _, _ = sweep_instance(cfg, seed + 10_000)
    imp = fit_imputer(kind, (Xa, np.zeros(Xa.shape, np.uint8)), k=cfg.integer("imputer.k"),
                      rounds=cfg.integer("imputer.rounds"), stochastic=cfg.flag("imputer.stochastic"))
    scales = cfg.numbers("sweep.scales")
    linking = cfg.text("sweep.linking")
    links = {"linked": [True], "unlinked": [False], "both": [True, False]}.get(linking)
    if links is None:
        raise ConfigError(f"sweep.linking must be linked, unlinked or both, got {linking!r}")
    enumerate_ok = len(mech.maskable) <= MAX_ENUM
    draws, mc = cfg.integer("sweep.xi_draws"), cfg.integer("sweep.mc_draws")
    lam_top = float(np.max(mech.p)) * max(scales)
    rows, slopes = [], []
    for order in cfg.integers("sweep.orders"):
        for linked in (links if order > 0 else [True]):
            tag = "linked" if linked else "unlinked"
            norms = []
            ladder = RichardsonConfig.geometric(order, cfg.number("richardson.C"), lam_top) if order else None
            for t in scales:
                if order == 0:
                    if enumerate_ok:
                        b = exact_bias(family, imp, (X, y), mech, w_star, t, xi_draws=draws, xi_seed=seed).bias
                    else:
                        b = monte_carlo_bias(family, imp, (X, y), mech, w_star, mc, seed, t).bias
                elif enumerate_ok:
                    b = richardson_exact_bias(family, imp, (X, y), mech, w_star, ladder, t, linked=linked,
                                              xi_draws=draws, xi_seed=seed)
                else:
                    if not linked:
                        raise ConfigError("unlinked sweeps need enumeration (too many maskable columns)")
                    b = monte_carlo_richardson_bias(family, imp, (X, y), mech, w_star, ladder, mc, seed, t)[0]
                norms.append(float(np.linalg.norm(b)))
                rows.append((order, tag, float(t), norms[-1], "enumerated" if enumerate_ok else "monte_carlo"))
            zero = max(norms) < EXACT_ZERO
            slopes.append((order, tag, np.nan if zero else loglog_slope(scales, norms), zero))
    return SweepResult(rows, slopes)


def write_sweep(result: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    _write_csv(out / "sweep.csv", ("order", "linking", "scale", "bias_norm", "method"), result.rows)
    _write_csv(out / "slopes.csv", ("order", "linking", "slope", "exact_zero"),
               [(o, lk, s, str(z).lower()) for o, lk, s, z in result.slopes])


def robustness(cfg: Config, threads: int = 1) -> list[tuple]:
    """Plug-in Richardson final PMSE over the perturbation grid, paired with plain imputation."""
    deltas = cfg.numbers("robustness.deltas")
    seeds = cfg.integers("experiment.seeds")
    imp_kind = _ALIASES.get(cfg.text("sweep.imputer"), cfg.text("sweep.imputer"))
    jobs = [(cfg.values, s, deltas, imp_kind) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_robust_job, jobs))
    else:
        parts = [_robust_job(j) for j in jobs]
    return [row for part in parts for row in part]


def _robust_job(args):
    values, seed, deltas, imp_kind = args
    cfg = Config(values)
    prep = prepare(cfg, seed)
    order = cfg.integer("richardson.order")
    base = execute(cfg, seed, parse_method(imp_kind, order), prep).final_pmse
    rows = []
    for dp in deltas:
        for dq in deltas:
            cell = cfg.override({"plugin.delta_p": dp, "plugin.delta_q": dq})
            try:
                rec = execute(cell, seed, parse_method(f"plugin{order}-{imp_kind}", order), prep)
                rows.append((seed, dp, dq, "ok", rec.final_pmse, base))
            except (MechanismInfeasible, SgdDiverged) as exc:
                log.info("robustness cell (%g, %g) seed %d failed: %s", dp, dq, seed, exc)
                rows.append((seed, dp, dq, "infeasible", np.nan, base))
    return rows


def robustness_table(rows: list[tuple]) -> list[tuple]:
    """Per cell: feasible runs, wins over plain imputation, mean and sd of PMSE."""
    cells: dict = {}
    for seed, dp, dq, status, val, base in rows:
        cells.setdefault((dp, dq), []).append((status, val, base))
    out = []
    for (dp, dq), items in sorted(cells.items()):
        ok = [(v, b) for s, v, b in items if s == "ok"]
        vals = np.array([v for v, _ in ok])
        wins = sum(v < b for v, b in ok)
        mean = float(vals.mean()) if len(vals) else np.nan
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else np.nan
        out.append((dp, dq, len(items), len(ok), wins, mean, sd))
    return out


def write_robustness(rows: list[tuple], out_dir) -> None:
    out = Path(out_dir)
    _write_csv(out / "robustness.csv", ("seed", "delta_p", "delta_q", "status", "pmse_plugin", "pmse_plain"), rows)
    _write_csv(out / "robustness_summary.csv",
               ("delta_p", "delta_q", "runs", "feasible", "wins", "pmse_mean", "pmse_sd"), robustness_table(rows))
