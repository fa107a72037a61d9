# core/cli.py
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from core.checkpoint import CheckpointError
from core.config import ConfigError, load_experiment_config, parse_override
from core.environment import GameError
from core.harness import EvalError, compare_runs, run_eval_stream, run_training, trace_game
from core.replay import ReplayError, format_replay, read_replay
from core.schemas import EvalConfig
from core.selftest import run_selftest
from core.telemetry import configure_logging
from core.trainer import TrainerError

logger = logging.getLogger("pi_a3c.cli")

KNOWN_ERRORS = (
    ConfigError,
    EvalError,
    CheckpointError,
    ReplayError,
    TrainerError,
    GameError,
)


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative, got {value}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pi-a3c",
        description="Planner-imitation A3C on Mini-Pommerman: training, evaluation and replays.",
    )
    parser.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one run per seed")
    train.add_argument("--config", type=Path, help="flat TOML experiment config")
    train.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    train.add_argument(
        "--seed", type=_seed, default=None,
        help="train this single seed instead of the configured list (default: the config's seeds)",
    )
    train.add_argument("--out-dir", type=Path, default=Path("runs/train"))

    ev = sub.add_parser("eval", help="play an evaluation tournament")
    ev.add_argument("--agent", default="mcts75", help="mcts<N>, checkpoint:<path>, rule or static")
    ev.add_argument("--opponent", default="static", choices=["static", "rule_based"])
    ev.add_argument("--games", type=int, default=200)
    ev.add_argument("--seed", type=_seed, default=1)
    ev.add_argument("--workers", type=int, default=1, help="process-pool size for games")
    ev.add_argument("--board-size", type=int, default=8)
    ev.add_argument("--max-steps", type=int, default=800)
    ev.add_argument("--save-replays", action="store_true")
    ev.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override one eval config key (repeatable)")
    ev.add_argument("--out-dir", type=Path, default=Path("runs/eval"))

    rp = sub.add_parser("replay", help="re-derive and print a stored episode")
    rp.add_argument("path", type=Path)
    rp.add_argument("--every", type=int, default=1, help="print every n-th frame")
    rp.add_argument("--limit", type=int, default=None, help="stop after this many frames")

    tr = sub.add_parser("trace", help="per-move root visits and Q-values of one evaluation game")
    tr.add_argument("--agent", default="mcts75")
    tr.add_argument("--opponent", default="static", choices=["static", "rule_based"])
    tr.add_argument("--seed", type=_seed, default=1)
    tr.add_argument("--game", type=int, default=0, help="game index within the tournament")
    tr.add_argument("--board-size", type=int, default=8)
    tr.add_argument("--max-steps", type=int, default=800)

    cmp = sub.add_parser("compare", help="episodes-to-threshold of two training runs")
    cmp.add_argument("run_a", type=Path, help="training out-dir, e.g. the planner-imitation run")
    cmp.add_argument("run_b", type=Path, help="training out-dir to compare against")
    cmp.add_argument("--threshold", type=float, default=-0.5)
    cmp.add_argument("--window", type=int, default=200)

    sub.add_parser("selftest", help="environment invariants, loss values and gradient checks")
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    config = load_experiment_config(
        args.config,
        args.overrides,
        seeds=[args.seed] if args.seed is not None else None,
    )
    run = run_training(config, args.out_dir)
    print(f"wrote {run.out_dir}")
    if not run.curve.empty:
        last = run.curve.iloc[-1]
        print(
            f"last bucket: episodes={int(last['episode_bucket'])} "
            f"mean_reward={last['mean_reward']:.4f} std_reward={last['std_reward']:.4f}"
        )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    values = {
        "agent": args.agent,
        "opponent": args.opponent,
        "games": args.games,
        "seed": args.seed,
        "workers": args.workers,
        "board_size": args.board_size,
        "max_steps": args.max_steps,
        "save_replays": args.save_replays,
    }
    for item in args.overrides:
        values.update(parse_override(item))
    try:
        config = EvalConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"eval config validation failed: {e}") from e

    stream = run_eval_stream(config, args.out_dir)
    while True:
        try:
            event = next(stream)
        except StopIteration as stop:
            report = stop.value
            break
        logger.debug("game %s/%s: %s", event["completed"], event["games"], event["game"]["result"])
    print(report.model_dump_json())
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    if args.every < 1:
        raise ReplayError("--every must be at least 1")
    print(format_replay(read_replay(args.path), every=args.every, limit=args.limit))
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    if args.game < 0:
        raise EvalError("--game must be non-negative")
    frame = trace_game(
        {
            "agent": args.agent,
            "opponent": args.opponent,
            "seed": args.seed,
            "board_size": args.board_size,
            "max_steps": args.max_steps,
        },
        args.game,
    )
    print(frame.to_string(index=False))
    print(f"result={frame.attrs['result']} suicide={frame.attrs['suicide']}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    if args.window < 1:
        raise EvalError("--window must be at least 1")
    comparison = compare_runs(args.run_a, args.run_b, args.threshold, args.window)
    print(json.dumps(comparison.to_record()))
    return 0 if not comparison.neither_reached else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2
    configure_logging(args.log_level.upper())
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "trace":
            return _cmd_trace(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return run_selftest()
    except KNOWN_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
