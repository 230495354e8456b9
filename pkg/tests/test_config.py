from pathlib import Path

import pytest

from chvox.config import ConfigError, ScenarioConfig, format_config, load_config, parse_config

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.kappa_value == cfg.h**2 and cfg.sigma_value is None
    assert cfg.time_pieces() == [(1.0, 1e-3)]


def test_parse_comments_and_types():
    cfg = parse_config("# header\nscenario = spinodal\nN = 8  # edge\nbeta=1\nstop_when_stationary = yes\n")
    assert cfg.scenario == "spinodal" and cfg.N == 8 and cfg.beta == 1
    assert cfg.stop_when_stationary is True


def test_schedule_and_levels():
    cfg = parse_config("schedule = 1:0.01, 11:0.1\nlevels = 1,2, 3\n")
    assert cfg.time_pieces() == [(1.0, 0.01), (11.0, 0.1)]
    assert cfg.level_list() == [1, 2, 3]


@pytest.mark.parametrize("text", [
    "N = eight", "colour = red", "p = 5", "beta = 2", "tau = 0", "no equals sign",
    "scenario = waves", "schedule = 1-0.1", "stop_when_stationary = maybe",
])
def test_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_roundtrip_idempotent(path):
    cfg = load_config(path)
    once = format_config(cfg)
    again = format_config(parse_config(once))
    assert once == again
    assert parse_config(once) == cfg


def test_relative_mask_resolves_against_config(tmp_path):
    (tmp_path / "c.cfg").write_text("mask = m.mask\nvelocity = file:v.txt\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.mask == str(tmp_path / "m.mask")
    assert cfg.velocity == "file:" + str(tmp_path / "v.txt")
