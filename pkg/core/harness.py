# core/harness.py
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, Generator, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from core.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from core.config import dump_config
from core.environment import Action, GameState, generate_board, step
from core.features import encode
from core.mcts import SearchResult, search
from core.network import NetParams, forward, init_params
from core.opponents import make_opponent, static_policy
from core.replay import EpisodeRecord, write_replay
from core.schemas import EvalConfig, EvalReport, ExperimentConfig, OpponentKind, SearchConfig, WorkerKind
from core.telemetry import MetricsWriter, read_records
from core.trainer import EpisodeSummary, GlobalStore, TrainingOutcome, WorkerUpdate, run_workers

logger = logging.getLogger("pi_a3c.harness")

METRICS_FILE = "metrics.jsonl"
CURVE_FILE = "learning_curve.csv"
REPORT_FILE = "eval_report.jsonl"
CONFIG_FILE = "config.toml"

AgentPolicy = Callable[[GameState, int, np.random.Generator], Action]


class EvalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Agent specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    kind: str  # "mcts" | "checkpoint" | "rule_based" | "static"
    rollout_budget: Optional[int] = None
    path: Optional[str] = None

    @property
    def label(self) -> str:
        if self.kind == "mcts":
            return f"mcts{self.rollout_budget}"
        if self.kind == "checkpoint":
            return f"checkpoint:{self.path}"
        return self.kind


_MCTS_SPEC = re.compile(r"^mcts(\d+)$")


def parse_agent_spec(text: str) -> AgentSpec:
    """`mcts<N>`, `checkpoint:<path>`, `rule` / `rule_based`, `static`."""
    raw = (text or "").strip()
    m = _MCTS_SPEC.match(raw.lower())
    if m:
        budget = int(m.group(1))
        if budget < 1:
            raise EvalError("mcts rollout budget must be at least 1")
        return AgentSpec(kind="mcts", rollout_budget=budget)
    if raw.lower().startswith("checkpoint:"):
        path = raw.split(":", 1)[1].strip()
        if not path:
            raise EvalError("checkpoint agent needs a path: checkpoint:<path>")
        return AgentSpec(kind="checkpoint", path=path)
    if raw.lower() in ("rule", "rule_based", "rulebased"):
        return AgentSpec(kind="rule_based")
    if raw.lower() == "static":
        return AgentSpec(kind="static")
    raise EvalError(f"unknown agent spec {text!r}; use mcts<N>, checkpoint:<path>, rule or static")


def _policy_agent(params: NetParams) -> AgentPolicy:
    def act(state: GameState, agent_id: int, rng: np.random.Generator) -> Action:
        p = forward(params, encode(state, agent_id)).policy.astype(np.float64)
        return Action(int(rng.choice(len(p), p=p / p.sum())))

    return act


class MctsAgent:
    """Plans every move from scratch; keeps the last search for per-move traces."""

    def __init__(self, search_cfg: SearchConfig) -> None:
        self.search_cfg = search_cfg
        self.last: Optional[SearchResult] = None

    def __call__(self, state: GameState, agent_id: int, rng: np.random.Generator) -> Action:
        self.last = search(state, self.search_cfg, None, rng, agent_id=agent_id)
        logger.debug(
            "t=%s seat=%s action=%s visits=%s q=%s",
            state.timestep, agent_id, Action(self.last.action).name,
            self.last.visits.tolist(), np.round(self.last.q, 3).tolist(),
        )
        return Action(self.last.action)


def build_agent(spec: AgentSpec, config: EvalConfig, params: Optional[NetParams] = None) -> AgentPolicy:
    if spec.kind == "mcts":
        return MctsAgent(config.search_config(spec.rollout_budget or 1))
    if spec.kind == "checkpoint":
        if params is None:
            raise EvalError("checkpoint agent built without parameters")
        return _policy_agent(params)
    if spec.kind == "rule_based":
        return make_opponent(OpponentKind.RULE_BASED, config.safety_slack)
    if spec.kind == "static":
        return static_policy
    raise EvalError(f"unknown agent kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def game_seed(seed: int, game_index: int) -> int:
    return int(np.random.SeedSequence([seed, game_index]).generate_state(1)[0])


@dataclass
class GameRecord:
    game_index: int
    board_seed: int
    result: str  # win | loss | tie, from the evaluated agent's seat
    reward: float
    length: int
    outcome: str
    suicide: bool
    opponent_suicide: bool
    actions: List[List[int]] = field(default_factory=list, repr=False)

    def to_record(self) -> Dict[str, Any]:
        return {
            "record": "game",
            "game_index": self.game_index,
            "board_seed": self.board_seed,
            "result": self.result,
            "reward": self.reward,
            "length": self.length,
            "outcome": self.outcome,
            "suicide": self.suicide,
            "opponent_suicide": self.opponent_suicide,
        }


MoveCallback = Callable[[Dict[str, Any]], None]


def play_game(
    config: EvalConfig,
    spec: AgentSpec,
    game_index: int,
    params: Optional[NetParams] = None,
    on_move: Optional[MoveCallback] = None,
) -> GameRecord:
    """
    One game on a fresh board; the evaluated agent sits in seat 0.
    on_move receives one record per joint step, with the root visits and
    Q-values when the agent plans.
    """
    board_seed = game_seed(config.seed, game_index)
    state = generate_board(board_seed, config.board_size, config.game_config())
    agent = build_agent(spec, config, params)
    opponent = make_opponent(config.opponent, config.safety_slack)
    agent_rng = np.random.default_rng([config.seed, game_index, 1])
    opp_rng = np.random.default_rng([config.seed, game_index, 2])

    actions: List[List[int]] = []
    deaths: Dict[int, int] = {}
    while not state.terminal:
        joint = (int(agent(state, 0, agent_rng)), int(opponent(state, 1, opp_rng)))
        res = step(state, joint)
        if on_move is not None:
            planned = getattr(agent, "last", None)
            on_move({
                "timestep": state.timestep,
                "position": state.agents[0].position,
                "action": Action(joint[0]).name,
                "opponent_action": Action(joint[1]).name,
                "visits": planned.visits.tolist() if planned is not None else None,
                "q": planned.q.tolist() if planned is not None else None,
                "deaths": dict(res.deaths),
            })
        actions.append(list(joint))
        deaths = res.deaths
        state = res.next_state

    winner = state.outcome.winner if state.outcome else None
    result = "tie" if winner is None else ("win" if winner == 0 else "loss")
    return GameRecord(
        game_index=game_index,
        board_seed=board_seed,
        result=result,
        reward=1.0 if result == "win" else -1.0,
        length=state.timestep,
        outcome=state.outcome.label() if state.outcome else "tie",
        suicide=result == "loss" and deaths.get(0) == 0,
        opponent_suicide=result == "win" and deaths.get(1) == 1,
        actions=actions,
    )


def _load_agent_params(spec: AgentSpec, config: EvalConfig) -> Optional[NetParams]:
    if spec.kind != "checkpoint":
        return None
    try:
        return load_checkpoint(spec.path, expected_board_size=config.board_size)
    except CheckpointError as e:
        raise EvalError(str(e)) from e


def _coerce_eval_config(config: Union[EvalConfig, Dict[str, Any]]) -> EvalConfig:
    if isinstance(config, EvalConfig):
        return config
    try:
        return EvalConfig(**config)
    except ValidationError as e:
        raise EvalError(f"eval config validation failed: {e}") from e


def _iter_games(config: EvalConfig, spec: AgentSpec, params: Optional[NetParams]) -> Iterable[GameRecord]:
    indices = range(config.games)
    if config.workers <= 1:
        for i in indices:
            yield play_game(config, spec, i, params)
        return
    fn = partial(play_game, config, spec, params=params)
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        # map yields in game order
        yield from pool.map(fn, indices)


def trace_game(
    config: Union[EvalConfig, Dict[str, Any]],
    game_index: int = 0,
) -> pd.DataFrame:
    """Replay one tournament game and return its per-move records, one row per joint step."""
    cfg = _coerce_eval_config(config)
    spec = parse_agent_spec(cfg.agent)
    rows: List[Dict[str, Any]] = []
    record = play_game(cfg, spec, game_index, _load_agent_params(spec, cfg), on_move=rows.append)
    frame = pd.DataFrame.from_records(rows)
    frame.attrs["result"] = record.result
    frame.attrs["suicide"] = record.suicide
    return frame


def run_eval_stream(
    config: Union[EvalConfig, Dict[str, Any]],
    out_dir: Optional[Union[str, Path]] = None,
) -> Generator[Dict[str, Any], None, EvalReport]:
    """
    Play the tournament and yield one event per finished game.
    The EvalReport is the generator's return value.
    """
    cfg = _coerce_eval_config(config)
    spec = parse_agent_spec(cfg.agent)
    params = _load_agent_params(spec, cfg)
    logger.info(
        "eval agent=%s opponent=%s games=%s seed=%s workers=%s",
        spec.label, cfg.opponent.value, cfg.games, cfg.seed, cfg.workers,
    )

    out_path = Path(out_dir) if out_dir is not None else None
    games: List[GameRecord] = []
    wins = losses = ties = suicides = 0
    for rec in _iter_games(cfg, spec, params):
        games.append(rec)
        if rec.result == "win":
            wins += 1
        elif rec.result == "loss":
            losses += 1
            suicides += int(rec.suicide)
        else:
            ties += 1
        if out_path is not None and cfg.save_replays:
            write_replay(
                out_path / "replays" / f"game_{rec.game_index:04d}.replay",
                EpisodeRecord(
                    seed=rec.board_seed,
                    game=cfg.game_config(),
                    actions=[(a, b) for a, b in rec.actions],
                    meta={"agent": spec.label, "opponent": cfg.opponent.value, "game_index": rec.game_index},
                ),
            )
        yield {
            "type": "game_finished",
            "game": rec.to_record(),
            "completed": len(games),
            "games": cfg.games,
            "wins": wins,
            "losses": losses,
            "ties": ties,
        }

    report = EvalReport.from_counts(
        agent=spec.label,
        opponent=cfg.opponent,
        wins=wins,
        losses=losses,
        ties=ties,
        suicides=suicides,
        seed=cfg.seed,
    )
    if out_path is not None:
        write_eval_report(out_path / REPORT_FILE, report, games)
    logger.info(
        "eval done: wins=%s losses=%s (suicides=%s) ties=%s mean_reward=%.4f",
        wins, losses, suicides, ties, report.mean_reward,
    )
    return report


def run_eval(
    config: Union[EvalConfig, Dict[str, Any]],
    out_dir: Optional[Union[str, Path]] = None,
) -> EvalReport:
    stream = run_eval_stream(config, out_dir)
    while True:
        try:
            next(stream)
        except StopIteration as stop:
            return stop.value


def write_eval_report(path: Union[str, Path], report: EvalReport, games: List[GameRecord]) -> Path:
    """Summary line first, then one record per game."""
    path = Path(path)
    if path.exists():
        path.unlink()
    with MetricsWriter(path) as writer:
        writer.write({"record": "summary", **report.model_dump(mode="json")})
        for g in games:
            writer.write(g.to_record())
    return path


def read_eval_report(path: Union[str, Path]) -> EvalReport:
    summaries = read_records(path, "summary")
    if not summaries:
        raise EvalError(f"{path} holds no summary record")
    data = {k: v for k, v in summaries[0].items() if k != "record"}
    try:
        return EvalReport(**data)
    except ValidationError as e:
        raise EvalError(f"invalid eval report {path}: {e}") from e


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingRun:
    out_dir: Path
    outcomes: Dict[int, TrainingOutcome]
    curve: pd.DataFrame


def seed_dir(out_dir: Union[str, Path], seed: int) -> Path:
    return Path(out_dir) / f"seed_{seed}"


def _train_one_seed(
    config: ExperimentConfig,
    seed: int,
    out: Path,
    on_episode: Optional[Callable[[int, EpisodeSummary], None]],
) -> TrainingOutcome:
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / METRICS_FILE
    if metrics_path.exists():
        metrics_path.unlink()
    for stale in out.glob("checkpoint_*.bin"):
        stale.unlink()

    store = GlobalStore(init_params(seed, config.board_size), config.adam_config())

    with MetricsWriter(metrics_path) as writer:

        def episode_cb(summary: EpisodeSummary) -> None:
            rec = {"record": "episode", "seed": seed, **summary.to_record()}
            if not config.log_wall_clock:
                rec["wall_clock_s"] = 0.0
            writer.write(rec)
            if on_episode is not None:
                on_episode(seed, summary)

        def update_cb(update: WorkerUpdate) -> None:
            if update.version % config.checkpoint_every == 0:
                params, version = store.snapshot()
                save_checkpoint(out / f"checkpoint_{version:08d}.bin", params)

        outcome = run_workers(
            config, store, master_seed=seed, on_episode=episode_cb, on_update=update_cb
        )
        writer.write({
            "record": "summary",
            "seed": seed,
            "global_version": outcome.version,
            "applied": outcome.stats.applied,
            "skipped": outcome.stats.skipped,
            "model_free_episodes": outcome.model_free_episodes,
            "demonstrator_episodes": outcome.demonstrator_episodes,
        })

    save_checkpoint(out / "final.bin", outcome.params)
    logger.info(
        "seed %s done: version=%s model_free_episodes=%s skipped=%s max_staleness=%s",
        seed, outcome.version, outcome.model_free_episodes, outcome.stats.skipped,
        outcome.stats.max_staleness,
    )
    return outcome


def run_training(
    config: Union[ExperimentConfig, Dict[str, Any]],
    out_dir: Union[str, Path],
    *,
    on_episode: Optional[Callable[[int, EpisodeSummary], None]] = None,
) -> TrainingRun:
    """
    Train once per seed and write seed_<s>/metrics.jsonl, checkpoints and
    final.bin, plus config.toml and learning_curve.csv in out_dir.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig(**config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(dump_config(config), encoding="utf-8")

    outcomes: Dict[int, TrainingOutcome] = {}
    for seed in config.seeds:
        outcomes[seed] = _train_one_seed(config, seed, seed_dir(out, seed), on_episode)

    curve = learning_curve(
        {s: load_episodes(seed_dir(out, s) / METRICS_FILE) for s in config.seeds},
        bucket=config.curve_bucket,
    )
    curve.to_csv(out / CURVE_FILE, index=False, float_format="%.6f")
    return TrainingRun(out_dir=out, outcomes=outcomes, curve=curve)


# ---------------------------------------------------------------------------
# Learning curves
# ---------------------------------------------------------------------------

def load_episodes(metrics_path: Union[str, Path]) -> pd.DataFrame:
    """
    Model-free episodes in completion order, numbered from 1 in column
    `episode`; this count is the learning-curve x-axis.
    """
    records = read_records(metrics_path, "episode")
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return pd.DataFrame(columns=["episode", "episode_reward"])
    frame = frame[frame["worker_kind"] == WorkerKind.MODEL_FREE.value].reset_index(drop=True)
    frame.insert(0, "episode", np.arange(1, len(frame) + 1))
    return frame


def learning_curve(frames: Dict[int, pd.DataFrame], bucket: int = 100) -> pd.DataFrame:
    """
    Mean episodic reward per bucket of `bucket` model-free episodes for each
    seed, then mean and population std over seeds. `episode_bucket` is the
    episode count at the end of the bucket; `seeds` counts the seeds that
    reached it.
    """
    per_seed = []
    for seed, frame in frames.items():
        if frame.empty:
            continue
        b = (frame["episode"] - 1) // bucket
        means = frame.groupby(b)["episode_reward"].mean()
        per_seed.append(pd.DataFrame({"bucket": means.index, "seed": seed, "reward": means.values}))
    if not per_seed:
        return pd.DataFrame(columns=["episode_bucket", "mean_reward", "std_reward", "seeds"])
    long = pd.concat(per_seed, ignore_index=True)
    grouped = long.groupby("bucket")["reward"]
    curve = pd.DataFrame({
        "episode_bucket": (grouped.mean().index.to_numpy() + 1) * bucket,
        "mean_reward": grouped.mean().values,
        "std_reward": grouped.std(ddof=0).fillna(0.0).values,
        "seeds": grouped.count().values,
    })
    return curve.reset_index(drop=True)


def episodes_to_threshold(frame: pd.DataFrame, threshold: float = -0.5, window: int = 200) -> Optional[int]:
    """First model-free episode count at which the trailing `window` mean reaches `threshold`."""
    if len(frame) < window:
        return None
    rolling = frame["episode_reward"].rolling(window).mean()
    hits = np.flatnonzero(rolling.to_numpy() >= threshold)
    return int(frame["episode"].iloc[hits[0]]) if hits.size else None


@dataclass
class RunComparison:
    """Episodes-to-threshold per seed for two training runs; None means never reached."""

    threshold: float
    window: int
    a: Dict[int, Optional[int]]
    b: Dict[int, Optional[int]]

    @staticmethod
    def _median(per_seed: Dict[int, Optional[int]]) -> Optional[float]:
        if not per_seed:
            return None
        values = [math.inf if v is None else float(v) for v in per_seed.values()]
        median = float(np.median(values))
        return None if math.isinf(median) else median

    @property
    def median_a(self) -> Optional[float]:
        return self._median(self.a)

    @property
    def median_b(self) -> Optional[float]:
        return self._median(self.b)

    @property
    def a_strictly_earlier(self) -> bool:
        ma, mb = self.median_a, self.median_b
        return ma is not None and (mb is None or ma < mb)

    @property
    def neither_reached(self) -> bool:
        return self.median_a is None and self.median_b is None

    def to_record(self) -> Dict[str, Any]:
        return {
            "record": "comparison",
            "threshold": self.threshold,
            "window": self.window,
            "a": {str(s): v for s, v in self.a.items()},
            "b": {str(s): v for s, v in self.b.items()},
            "median_a": self.median_a,
            "median_b": self.median_b,
            "a_strictly_earlier": self.a_strictly_earlier,
        }


def _seed_thresholds(run_dir: Path, threshold: float, window: int) -> Dict[int, Optional[int]]:
    dirs = sorted(
        (int(m.group(1)), p)
        for p in run_dir.glob("seed_*")
        if p.is_dir() and (m := re.fullmatch(r"seed_(\d+)", p.name))
    )
    if not dirs:
        raise EvalError(f"{run_dir} holds no seed_<n> directories")
    return {
        seed: episodes_to_threshold(load_episodes(p / METRICS_FILE), threshold, window)
        for seed, p in dirs
    }


def compare_runs(
    run_a: Union[str, Path],
    run_b: Union[str, Path],
    threshold: float = -0.5,
    window: int = 200,
) -> RunComparison:
    """
    Median over seeds of the model-free episode count at which each run's
    trailing-window reward first reaches `threshold`. A seed that never
    reaches it counts as infinitely late.
    """
    comparison = RunComparison(
        threshold=threshold,
        window=window,
        a=_seed_thresholds(Path(run_a), threshold, window),
        b=_seed_thresholds(Path(run_b), threshold, window),
    )
    logger.info(
        "compare %s vs %s: median_a=%s median_b=%s a_strictly_earlier=%s",
        run_a, run_b, comparison.median_a, comparison.median_b, comparison.a_strictly_earlier,
    )
    return comparison
