"""Flat ``section.key=value`` configuration with typed accessors."""

from __future__ import annotations

from pathlib import Path

__all__ = ["ConfigError", "Config", "DEFAULTS", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, str] = {
    "experiment.family": "linear",
    "experiment.dataset": "synth_a_linear",
    "experiment.n_train": "2000",
    "experiment.n_test": "1000",
    "experiment.methods": "complete,zero,rich-zero",
    "experiment.seeds": "0",
    "experiment.epochs": "5",
    "experiment.batch": "64",
    "experiment.ridge": "0.001",
    "experiment.timing": "true",
    "data.path": "",
    "data.test_path": "",
    "data.response": "y",
    "data.na_token": "NA",
    "mechanism.kind": "hmcar",
    "mechanism.mean": "0.2",
    "mechanism.observed": "",
    "imputer.k": "5",
    "imputer.rounds": "5",
    "imputer.stochastic": "false",
    "richardson.order": "1",
    "richardson.C": "2",
    "plugin.delta_p": "0",
    "plugin.delta_q": "0",
    "schedule.kind": "constant",
    "schedule.eta": "auto",
    "schedule.c": "1",
    "schedule.gamma": "0",
    "schedule.eta_max": "",
    "schedule.lr_base": "0.01",
    "sweep.n": "200",
    "sweep.p": "0.10,0.15,0.08,0.12",
    "sweep.scales": "0.2,0.4,0.6,0.8,1.0",
    "sweep.orders": "0,1,2",
    "sweep.imputer": "zero",
    "sweep.linking": "linked",
    "sweep.xi_draws": "8",
    "sweep.mc_draws": "2000",
    "robustness.deltas": "0,0.05,0.1,0.15,0.2,0.3",
}


class Config:
    """Resolved configuration: defaults overlaid with user values."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = str(v).strip()

    def override(self, updates: dict) -> "Config":
        vals = dict(self.values)
        vals.update({k: str(v) for k, v in updates.items()})
        return Config(vals)

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def text(self, key: str) -> str:
        return self.values[key]

    def integer(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def number(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def flag(self, key: str) -> bool:
        v = self.values[key].lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be true or false, got {self.values[key]!r}")

    def numbers(self, key: str) -> list[float]:
        v = self.values[key]
        try:
            return [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key} must be a comma-separated list of numbers") from None

    def integers(self, key: str) -> list[int]:
        v = self.values[key]
        try:
            return [int(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key} must be a comma-separated list of integers") from None

    def items(self, key: str) -> list[str]:
        return [x.strip() for x in self.values[key].split(",") if x.strip()]

    def dump(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))


def parse_config(text: str) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return Config(values)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        return parse_config(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
