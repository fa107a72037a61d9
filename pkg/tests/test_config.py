from __future__ import annotations

from pathlib import Path

import pytest

from core.config import ConfigError, dump_config, load_experiment_config, parse_override, read_config_file
from core.schemas import ExperimentConfig, OpponentKind, RolloutPolicy


def test_defaults_are_full_scale():
    cfg = ExperimentConfig()
    assert cfg.num_workers == 24
    assert cfg.t_max == 20
    assert cfg.seeds == [1, 2, 3]
    assert cfg.loss_spec().gamma == 0.999
    assert cfg.adam_config().eps == 1e-5
    assert cfg.search_config().rollout_budget == 75


def test_file_then_overrides_then_explicit(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('num_workers = 4\nopponent = "rule_based"\nt_max = 10\n', encoding="utf-8")
    cfg = load_experiment_config(path, ["t_max=7", "rollout_policy=policy_head"], seeds=[9], num_workers=None)
    assert cfg.num_workers == 4
    assert cfg.opponent == OpponentKind.RULE_BASED
    assert cfg.t_max == 7
    assert cfg.rollout_policy == RolloutPolicy.POLICY_HEAD
    assert cfg.seeds == [9]


def test_parse_override_types():
    assert parse_override("learning_rate=1e-3") == {"learning_rate": 1e-3}
    assert parse_override("log_wall_clock=false") == {"log_wall_clock": False}
    assert parse_override("seeds=[4, 5]") == {"seeds": [4, 5]}
    assert parse_override("opponent=static") == {"opponent": "static"}
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")
    with pytest.raises(ConfigError):
        parse_override("=3")


@pytest.mark.parametrize(
    "body, message",
    [
        ("[train]\nt_max = 3\n", "flat"),
        ("t_max = \n", "TOML"),
        ("bogus_key = 1\n", "unknown"),
        ("num_workers = 2\nnum_demonstrators = 2\n", "validation"),
        ("seeds = []\n", "validation"),
        ("seeds = [1, -2]\n", "non-negative"),
    ],
)
def test_bad_configs(tmp_path, body, message):
    path = tmp_path / "bad.toml"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(ConfigError, match=message):
        load_experiment_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "nope.toml")


def test_dump_round_trips(tmp_path):
    cfg = ExperimentConfig(num_workers=3, num_demonstrators=1, wall_clock_budget_s=60.0)
    path = tmp_path / "dumped.toml"
    path.write_text(dump_config(cfg), encoding="utf-8")
    assert load_experiment_config(path) == cfg


@pytest.mark.parametrize("name", ["desk_static", "desk_static_a3c", "full_static", "full_rule_based",
                                  "demonstrators_3", "demonstrators_6", "policy_head_rollouts"])
def test_shipped_presets_load(name):
    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.toml"
    load_experiment_config(path)
