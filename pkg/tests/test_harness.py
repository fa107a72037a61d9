from __future__ import annotations

import json
import os
from pathlib import Path

import pandas as pd
import pytest
from pydantic import ValidationError

from core.checkpoint import save_checkpoint
from core.config import load_experiment_config
from core.environment import Action
from core.harness import (
    CONFIG_FILE,
    CURVE_FILE,
    METRICS_FILE,
    REPORT_FILE,
    EvalError,
    compare_runs,
    episodes_to_threshold,
    game_seed,
    learning_curve,
    load_episodes,
    parse_agent_spec,
    play_game,
    read_eval_report,
    run_eval,
    run_eval_stream,
    run_training,
    seed_dir,
    trace_game,
)
from core.network import init_params
from core.schemas import EvalConfig, EvalReport, OpponentKind
from core.telemetry import MetricsWriter


def test_report_identity_and_mean_reward():
    report = EvalReport.from_counts(agent="mcts75", opponent=OpponentKind.STATIC, wins=88, losses=4, ties=108)
    assert report.games == 200
    assert report.mean_reward == pytest.approx(-0.12)
    assert report.win_rate == pytest.approx(0.44)


def test_report_rejects_inconsistent_counts():
    with pytest.raises(ValidationError):
        EvalReport(agent="x", opponent="static", games=10, wins=3, losses=3, ties=3, mean_reward=-0.3)
    with pytest.raises(ValidationError):
        EvalReport(agent="x", opponent="static", games=3, wins=1, losses=1, ties=1, mean_reward=0.5)


@pytest.mark.parametrize(
    "text, kind, budget",
    [("mcts75", "mcts", 75), ("MCTS150", "mcts", 150), ("rule", "rule_based", None), ("static", "static", None)],
)
def test_parse_agent_spec(text, kind, budget):
    spec = parse_agent_spec(text)
    assert spec.kind == kind
    assert spec.rollout_budget == budget


@pytest.mark.parametrize("text", ["", "mcts", "mcts0", "checkpoint:", "alphazero"])
def test_bad_agent_spec(text):
    with pytest.raises(EvalError):
        parse_agent_spec(text)


def test_static_vs_static_is_all_ties(tmp_path):
    config = EvalConfig(agent="static", games=4, max_steps=30, board_size=6)
    report = run_eval(config, tmp_path)
    assert (report.wins, report.losses, report.ties) == (0, 0, 4)
    assert report.mean_reward == -1.0

    lines = (tmp_path / REPORT_FILE).read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["record"] == "summary"
    assert len(lines) == 5
    assert read_eval_report(tmp_path / REPORT_FILE) == report


def test_stream_reports_running_tally():
    config = EvalConfig(agent="static", games=3, max_steps=20, board_size=6)
    events = list(_drain(run_eval_stream(config)))
    assert [e["completed"] for e in events] == [1, 2, 3]
    assert events[-1]["ties"] == 3
    assert all(e["type"] == "game_finished" for e in events)


def _drain(gen):
    while True:
        try:
            yield next(gen)
        except StopIteration:
            return


def test_replays_are_written(tmp_path):
    config = EvalConfig(agent="rule", games=2, max_steps=30, board_size=6, save_replays=True)
    run_eval(config, tmp_path)
    assert sorted(p.name for p in (tmp_path / "replays").iterdir()) == ["game_0000.replay", "game_0001.replay"]


def test_games_use_distinct_reproducible_boards():
    config = EvalConfig(agent="rule", opponent="rule_based", games=2, max_steps=60, board_size=6)
    spec = parse_agent_spec(config.agent)
    a = play_game(config, spec, 0)
    b = play_game(config, spec, 0)
    assert a == b
    assert a.board_seed == game_seed(config.seed, 0) != game_seed(config.seed, 1)


def test_trace_records_every_planned_move():
    config = EvalConfig(agent="mcts6", games=1, max_steps=12, board_size=6)
    frame = trace_game(config, 0)
    played = play_game(config, parse_agent_spec(config.agent), 0)
    assert len(frame) == played.length
    assert frame["timestep"].tolist() == list(range(played.length))
    assert [[Action[a], Action[o]] for a, o in zip(frame["action"], frame["opponent_action"])] == played.actions
    for visits, q, action in zip(frame["visits"], frame["q"], frame["action"]):
        assert sum(visits) == 6
        assert len(q) == len(Action)
        assert visits.index(max(visits)) == Action[action]
    assert frame.attrs["result"] == played.result


def test_trace_of_a_rule_agent_has_no_search_columns():
    frame = trace_game({"agent": "rule", "max_steps": 5, "board_size": 6})
    assert len(frame) == 5
    assert frame["visits"].isna().all()


def test_checkpoint_agent_is_deterministic(tmp_path):
    path = save_checkpoint(tmp_path / "net.bin", init_params(0, 6))
    config = EvalConfig(agent=f"checkpoint:{path}", games=3, max_steps=40, board_size=6)
    first = run_eval(config, tmp_path / "a")
    second = run_eval(config, tmp_path / "b")
    assert first == second
    assert (tmp_path / "a" / REPORT_FILE).read_bytes() == (tmp_path / "b" / REPORT_FILE).read_bytes()


def test_checkpoint_for_another_board_size(tmp_path):
    path = save_checkpoint(tmp_path / "net.bin", init_params(0, 6))
    config = EvalConfig(agent=f"checkpoint:{path}", games=1, board_size=8)
    with pytest.raises(EvalError, match="architecture"):
        run_eval(config)


def test_dict_config_is_validated():
    with pytest.raises(EvalError):
        run_eval({"agent": "static", "games": 0})


def _write_episodes(path, rewards, kind="model_free"):
    with MetricsWriter(path) as w:
        for i, r in enumerate(rewards):
            w.write({"record": "episode", "worker_kind": kind, "episode_index": i, "episode_reward": r})


def test_learning_curve_buckets_and_seed_spread(tmp_path):
    _write_episodes(tmp_path / "a.jsonl", [-1, -1, 1, 1, 1])
    _write_episodes(tmp_path / "b.jsonl", [1, 1, -1, -1])
    frames = {1: load_episodes(tmp_path / "a.jsonl"), 2: load_episodes(tmp_path / "b.jsonl")}
    curve = learning_curve(frames, bucket=2)
    assert list(curve.columns) == ["episode_bucket", "mean_reward", "std_reward", "seeds"]
    assert curve["episode_bucket"].tolist() == [2, 4, 6]
    assert curve["mean_reward"].tolist() == [0.0, 0.0, 1.0]
    assert curve["std_reward"].tolist() == [1.0, 1.0, 0.0]
    assert curve["seeds"].tolist() == [2, 2, 1]


def test_demonstrator_episodes_are_not_on_the_x_axis(tmp_path):
    path = tmp_path / METRICS_FILE
    _write_episodes(path, [1, 1])
    with MetricsWriter(path) as w:
        w.write({"record": "episode", "worker_kind": "demonstrator", "episode_index": 0, "episode_reward": -1})
    frame = load_episodes(path)
    assert frame["episode"].tolist() == [1, 2]


def test_episodes_to_threshold():
    frame = pd.DataFrame({"episode": range(1, 11), "episode_reward": [-1] * 5 + [1] * 5})
    assert episodes_to_threshold(frame, threshold=0.0, window=4) == 7
    assert episodes_to_threshold(frame, threshold=0.0, window=20) is None
    assert episodes_to_threshold(frame, threshold=2.0, window=4) is None


def _write_run(run_dir, per_seed):
    for seed, rewards in per_seed.items():
        path = seed_dir(run_dir, seed) / METRICS_FILE
        path.parent.mkdir(parents=True)
        _write_episodes(path, rewards)


def test_compare_runs_takes_the_median_over_seeds(tmp_path):
    never = [-1] * 10
    _write_run(tmp_path / "a", {1: [-1] * 5 + [1] * 5, 2: [-1] * 7 + [1] * 4, 3: never})
    _write_run(tmp_path / "b", {1: [-1] * 6 + [1] * 4, 2: never, 3: never})
    cmp = compare_runs(tmp_path / "a", tmp_path / "b", threshold=0.0, window=4)
    assert cmp.a == {1: 7, 2: 9, 3: None}
    assert cmp.b == {1: 8, 2: None, 3: None}
    assert cmp.median_a == 9.0
    assert cmp.median_b is None
    assert cmp.a_strictly_earlier
    assert not cmp.neither_reached
    assert json.loads(json.dumps(cmp.to_record()))["a"] == {"1": 7, "2": 9, "3": None}

    same = compare_runs(tmp_path / "a", tmp_path / "a", threshold=0.0, window=4)
    assert not same.a_strictly_earlier


def test_compare_runs_when_neither_reaches(tmp_path):
    _write_run(tmp_path / "a", {1: [-1] * 10})
    _write_run(tmp_path / "b", {4: [-1] * 10})
    cmp = compare_runs(tmp_path / "a", tmp_path / "b", threshold=0.0, window=4)
    assert cmp.neither_reached
    assert not cmp.a_strictly_earlier


def test_compare_runs_needs_seed_directories(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(EvalError, match="seed_"):
        compare_runs(tmp_path / "empty", tmp_path / "empty")


def test_tiny_training_run_is_reproducible(tmp_path):
    config = dict(
        board_size=6,
        max_steps=30,
        num_workers=1,
        t_max=5,
        seeds=[1, 2],
        episode_budget=2,
        checkpoint_every=3,
        curve_bucket=1,
        log_wall_clock=False,
    )
    run_a = run_training(config, tmp_path / "a")
    run_training(config, tmp_path / "b")

    for seed in (1, 2):
        a = seed_dir(tmp_path / "a", seed)
        b = seed_dir(tmp_path / "b", seed)
        assert (a / METRICS_FILE).read_bytes() == (b / METRICS_FILE).read_bytes()
        assert (a / "final.bin").read_bytes() == (b / "final.bin").read_bytes()
    assert (tmp_path / "a" / CONFIG_FILE).is_file()
    curve = pd.read_csv(tmp_path / "a" / CURVE_FILE)
    assert curve["episode_bucket"].tolist() == [1, 2]
    assert curve["seeds"].tolist() == [2, 2]
    assert run_a.outcomes[1].model_free_episodes == 2


@pytest.mark.slow
def test_mcts75_against_static_band():
    report = run_eval(EvalConfig(agent="mcts75", games=200, seed=1, workers=os.cpu_count() or 4))
    assert report.loss_rate <= 0.10
    assert report.win_rate >= 0.25
    assert report.mean_reward >= -0.45


@pytest.mark.slow
def test_more_rollouts_are_not_worse():
    low = run_eval(EvalConfig(agent="mcts75", games=200, seed=1, workers=os.cpu_count() or 4))
    high = run_eval(EvalConfig(agent="mcts150", games=200, seed=1, workers=os.cpu_count() or 4))
    assert high.mean_reward >= low.mean_reward - 0.05


@pytest.mark.slow
@pytest.mark.parametrize(
    "preset, demonstrators",
    [("demonstrators_3", 3), ("demonstrators_6", 6), ("policy_head_rollouts", 1)],
)
def test_ablation_presets_smoke_run(tmp_path, preset, demonstrators):
    path = Path(__file__).resolve().parents[1] / "configs" / f"{preset}.toml"
    config = load_experiment_config(path, ["episode_budget=50", "seeds=[1]", "log_wall_clock=false"])
    assert config.num_demonstrators == demonstrators
    run = run_training(config, tmp_path / preset)

    outcome = run.outcomes[1]
    assert outcome.model_free_episodes >= 50
    assert outcome.stats.skipped == 0
    frame = load_episodes(seed_dir(tmp_path / preset, 1) / METRICS_FILE)
    assert len(frame) == outcome.model_free_episodes
    assert frame["episode_reward"].between(-1.0, 1.0).all()
    assert (seed_dir(tmp_path / preset, 1) / "final.bin").is_file()
