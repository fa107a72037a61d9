from __future__ import annotations

import json

import pytest

from core.cli import main
from core.harness import REPORT_FILE
from core.telemetry import MetricsWriter


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["train", "--no-such-flag"])
    assert info.value.code == 2


@pytest.mark.parametrize("command", [["train"], ["eval"]])
@pytest.mark.parametrize("seed", ["-1", "seven"])
def test_bad_seed_is_a_usage_error(tmp_path, capsys, command, seed):
    with pytest.raises(SystemExit) as info:
        main([*command, "--seed", seed, "--out-dir", str(tmp_path / "run")])
    assert info.value.code == 2
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_missing_config_fails_without_output(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--config", str(tmp_path / "missing.toml"), "--out-dir", str(out)])
    assert code == 1
    assert "not found" in capsys.readouterr().err
    assert not out.exists()


def test_bad_override_fails(tmp_path, capsys):
    code = main(["train", "--set", "t_max=0", "--out-dir", str(tmp_path / "run")])
    assert code == 1
    assert "t_max" in capsys.readouterr().err


def test_eval_prints_report_and_writes_jsonl(tmp_path, capsys):
    code = main([
        "eval", "--agent", "static", "--games", "2", "--board-size", "6",
        "--max-steps", "25", "--save-replays", "--out-dir", str(tmp_path),
    ])
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["ties"] == 2
    assert report["mean_reward"] == -1.0
    assert (tmp_path / REPORT_FILE).is_file()
    assert len(list((tmp_path / "replays").glob("*.replay"))) == 2


def test_eval_with_unknown_agent(tmp_path, capsys):
    code = main(["eval", "--agent", "alphazero", "--games", "1", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "unknown agent spec" in capsys.readouterr().err


def test_replay_prints_frames(tmp_path, capsys):
    main([
        "eval", "--agent", "rule", "--games", "1", "--board-size", "6",
        "--max-steps", "20", "--save-replays", "--out-dir", str(tmp_path),
    ])
    capsys.readouterr()
    path = tmp_path / "replays" / "game_0000.replay"
    assert main(["replay", str(path), "--every", "5"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("t=0")
    assert "terminal" in out


def test_replay_of_missing_file(tmp_path):
    assert main(["replay", str(tmp_path / "nope.replay")]) == 1


def test_train_tiny_run(tmp_path, capsys):
    out = tmp_path / "train"
    code = main([
        "train", "--seed", "5", "--out-dir", str(out),
        "--set", "board_size=6", "--set", "max_steps=20", "--set", "num_workers=1",
        "--set", "episode_budget=1", "--set", "t_max=5",
    ])
    assert code == 0
    assert (out / "seed_5" / "final.bin").is_file()
    assert "last bucket" in capsys.readouterr().out


def test_compare_prints_medians(tmp_path, capsys):
    for run, seed, rewards in [("a", 1, [-1, 1, 1]), ("b", 1, [-1, -1, -1])]:
        path = tmp_path / run / f"seed_{seed}" / "metrics.jsonl"
        path.parent.mkdir(parents=True)
        with MetricsWriter(path) as w:
            for i, r in enumerate(rewards):
                w.write({"record": "episode", "worker_kind": "model_free", "episode_index": i, "episode_reward": r})
    code = main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--threshold", "0", "--window", "2"])
    assert code == 0
    record = json.loads(capsys.readouterr().out)
    assert record["median_a"] == 2.0
    assert record["median_b"] is None
    assert record["a_strictly_earlier"] is True
    assert main(["compare", str(tmp_path / "b"), str(tmp_path / "b"), "--window", "2"]) == 1


@pytest.mark.slow
def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "7/7 checks passed" in capsys.readouterr().out
