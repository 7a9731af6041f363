"""Command-line entry point: ``richsgd <subcommand> [--config PATH] [--seed N] [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .core import ObservedDataset
from .data import save_csv
from .experiments import (
    bias_sweep,
    prepare,
    robustness,
    robustness_table,
    run_experiment,
    summarize,
    write_results,
    write_robustness,
    write_sweep,
)
from .mech_estimation import estimate_q

log = logging.getLogger("richsgd")

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="richsgd", description="Richardson-extrapolated SGD with missing data")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("generate", "write a synthetic dataset with missing entries to CSV"),
        ("train", "run the SGD experiment grid and write results.csv"),
        ("bias-sweep", "bias norm against missingness scale, with log-log slopes"),
        ("estimate-mech", "estimate the missingness mechanism from a masked dataset"),
        ("robustness", "plug-in Richardson over a grid of mechanism perturbations"),
        ("verify", "run the theorem checks and write a verdict file"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override experiment.seeds with one seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    return ap


def _resolve(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.override({"experiment.seeds": args.seed})
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def _seed(cfg: Config) -> int:
    return cfg.integers("experiment.seeds")[0]


def cmd_generate(cfg: Config, out: Path, threads: int) -> int:
    seed = _seed(cfg)
    prep = prepare(cfg.override({"schedule.eta": "0.01"}), seed)
    save_csv(out / "train.csv", prep.train)
    Xte, yte = prep.test
    save_csv(out / "test.csv", ObservedDataset.complete(Xte, yte))
    (out / "w_star.txt").write_text("".join(f"{v!r}\n" for v in map(float, prep.w_star)))
    (out / "mechanism.cfg").write_text("".join(f"{k}={v}\n" for k, v in prep.mechanism.to_dict().items()))
    log.info("wrote %d training rows (%.3f missing) to %s", prep.train.n, prep.train.mask.mean(), out)
    return EXIT_OK


def cmd_train(cfg: Config, out: Path, threads: int) -> int:
    result = run_experiment(cfg, threads)
    write_results(result, out)
    for name, runs, failed, pm, ps, tm, ts in summarize(result):
        print(f"{name:>16s}  runs={runs} failed={failed}  pmse={pm:.4g} +/- {ps:.2g}  test_loss={tm:.4g} +/- {ts:.2g}")
    for f in result.failures:
        log.error("run %d (seed %d, %s) failed: %s", *f)
    return EXIT_OK if result.ok else EXIT_RUN


def cmd_bias_sweep(cfg: Config, out: Path, threads: int) -> int:
    res = bias_sweep(cfg, _seed(cfg))
    write_sweep(res, out)
    for order, tag, slope, zero in res.slopes:
        print(f"order {order} ({tag}): " + ("exact zero" if zero else f"slope {slope:.3f}"))
    return EXIT_OK


def cmd_estimate_mech(cfg: Config, out: Path, threads: int) -> int:
    seed = _seed(cfg)
    prep = prepare(cfg.override({"schedule.eta": "0.01"}), seed)
    view = np.where(prep.train.mask.astype(bool), 0.0, prep.train.values)
    est = estimate_q(prep.train.mask, view, prep.mechanism.observed)
    lam_true = prep.mechanism.lam(prep.train.values)
    rms = float(np.sqrt(np.mean((est.lam_hat(view) - lam_true) ** 2)))
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.cfg").write_text("".join(f"{k}={v}\n" for k, v in est.to_dict().items()))
    print(f"lambda_hat RMS error vs generating mechanism: {rms:.4g}")
    if est.degenerate.any():
        print(f"degenerate columns (q_hat = 1): {np.flatnonzero(est.degenerate).tolist()}")
    return EXIT_OK


def cmd_robustness(cfg: Config, out: Path, threads: int) -> int:
    rows = robustness(cfg, threads)
    write_robustness(rows, out)
    for dp, dq, runs, ok, wins, mean, sd in robustness_table(rows):
        print(f"delta_p={dp:<5g} delta_q={dq:<5g} feasible={ok}/{runs} wins={wins} pmse={mean:.4g} +/- {sd:.2g}")
    return EXIT_OK


def cmd_verify(cfg: Config, out: Path, threads: int) -> int:
    from .verification import run_all, write_verdict

    checks = run_all()
    write_verdict(checks, out / "verdict.json")
    for c in checks:
        print(f"{'PASS' if c.verdict else 'FAIL'}  {c.name}")
    return EXIT_OK if all(c.verdict for c in checks) else EXIT_RUN


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "bias-sweep": cmd_bias_sweep,
    "estimate-mech": cmd_estimate_mech,
    "robustness": cmd_robustness,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "resolved.cfg").write_text(cfg.dump(), encoding="utf-8")
        log.info("resolved config:\n%s", cfg.dump().rstrip())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
