import pytest

from richsgd.config import DEFAULTS, Config, ConfigError, load_config, parse_config


def test_defaults_are_materialized():
    cfg = Config()
    assert cfg.dump().count("\n") == len(DEFAULTS)
    assert cfg.integer("experiment.batch") == 64 and cfg.number("experiment.ridge") == 1e-3


def test_parse_with_comments_and_whitespace():
    cfg = parse_config("# header\nexperiment.epochs = 3  # trailing\n\nmechanism.kind=smar\n")
    assert cfg.integer("experiment.epochs") == 3 and cfg.text("mechanism.kind") == "smar"


def test_typed_accessors():
    cfg = Config({"experiment.seeds": "1, 2,3", "sweep.scales": "0.5,1", "experiment.timing": "no",
                  "experiment.methods": "complete, zero"})
    assert cfg.integers("experiment.seeds") == [1, 2, 3]
    assert cfg.numbers("sweep.scales") == [0.5, 1.0]
    assert cfg.flag("experiment.timing") is False
    assert cfg.items("experiment.methods") == ["complete", "zero"]


@pytest.mark.parametrize("text", ["nonsense.key=1", "no equals sign"])
def test_bad_lines(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_bad_values():
    cfg = Config({"experiment.epochs": "five", "experiment.timing": "maybe", "sweep.p": "a,b"})
    with pytest.raises(ConfigError):
        cfg.integer("experiment.epochs")
    with pytest.raises(ConfigError):
        cfg.flag("experiment.timing")
    with pytest.raises(ConfigError):
        cfg.numbers("sweep.p")


def test_override_and_dump_round_trip(tmp_path):
    cfg = Config().override({"experiment.seeds": 4})
    path = tmp_path / "c.cfg"
    path.write_text(cfg.dump())
    assert load_config(path).values == cfg.values
    assert load_config(None).values == Config().values
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
