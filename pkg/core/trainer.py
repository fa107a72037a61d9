# core/trainer.py
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Generator, List, Optional, Tuple, Union

import numpy as np

from core.environment import NUM_ACTIONS, GameError, GameState, generate_board, step
from core.features import encode
from core.losses import (
    LossComponents,
    LossComputationError,
    Trajectory,
    a3c_loss,
    compute_advantages,
    pi_a3c_loss,
    planner_imitation_loss,
)
from core.mcts import search
from core.network import (
    AdamState,
    Gradients,
    NetParams,
    adam_init,
    adam_step,
    forward,
    loss_and_grad,
)
from core.opponents import make_opponent
from core.schemas import AdamConfig, ExperimentConfig, RolloutPolicy, WorkerKind

logger = logging.getLogger("pi_a3c.trainer")

__all__ = [
    "EpisodeSummary",
    "GlobalStore",
    "StoreStats",
    "TrainerError",
    "TrainingOutcome",
    "Trajectory",
    "WorkerUpdate",
    "a3c_loss",
    "apply_gradients",
    "compute_advantages",
    "episode_seed",
    "pi_a3c_loss",
    "planner_imitation_loss",
    "run_workers",
    "worker_kind",
    "worker_loop",
]


class TrainerError(RuntimeError):
    pass


@dataclass
class StoreStats:
    applied: int = 0
    skipped: int = 0
    max_staleness: int = 0


class GlobalStore:
    """
    Shared parameters and optimizer. apply_gradients is serialized by a lock;
    snapshots are immutable NetParams, so readers never see a half-applied update.
    """

    def __init__(self, params: NetParams, adam: Optional[AdamConfig] = None) -> None:
        self._lock = threading.Lock()
        self._params = params
        self._opt: AdamState = adam_init(params.flat.size, adam)
        self._version = 0
        self.stats = StoreStats()

    @property
    def version(self) -> int:
        return self._version

    def snapshot(self) -> Tuple[NetParams, int]:
        with self._lock:
            return self._params, self._version

    def apply_gradients(self, grads: Gradients, *, based_on: Optional[int] = None) -> int:
        if not np.isfinite(grads.flat).all():
            with self._lock:
                self.stats.skipped += 1
                logger.warning("non-finite gradient rejected (skipped=%s)", self.stats.skipped)
                return self._version
        with self._lock:
            self._opt, self._params = adam_step(self._opt, self._params, grads)
            self._version += 1
            self.stats.applied += 1
            if based_on is not None:
                self.stats.max_staleness = max(self.stats.max_staleness, self._version - 1 - based_on)
            return self._version


def apply_gradients(store: GlobalStore, grads: Gradients) -> int:
    return store.apply_gradients(grads)


@dataclass
class WorkerUpdate:
    worker_id: int
    trajectory: Trajectory
    gradients: Gradients
    losses: LossComponents
    based_on: int
    version: int


@dataclass
class EpisodeSummary:
    worker_id: int
    worker_kind: WorkerKind
    episode_index: int
    episode_seed: int
    episode_reward: float
    episode_length: int
    outcome: str
    suicide: bool
    global_version: int
    wall_clock_s: float
    losses: Optional[Dict[str, Optional[float]]] = None

    def to_record(self) -> Dict[str, object]:
        return {
            "wall_clock_s": round(self.wall_clock_s, 3),
            "global_version": self.global_version,
            "worker_id": self.worker_id,
            "worker_kind": self.worker_kind.value,
            "episode_index": self.episode_index,
            "episode_seed": self.episode_seed,
            "episode_reward": self.episode_reward,
            "episode_length": self.episode_length,
            "outcome": self.outcome,
            "suicide": self.suicide,
            "losses": self.losses,
        }


WorkerEvent = Union[WorkerUpdate, EpisodeSummary]


def worker_kind(worker_id: int, num_demonstrators: int) -> WorkerKind:
    return WorkerKind.DEMONSTRATOR if worker_id < num_demonstrators else WorkerKind.MODEL_FREE


def episode_seed(master_seed: int, worker_id: int, episode_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, worker_id, episode_index]).generate_state(1)[0])


def _sample(policy: np.ndarray, rng: np.random.Generator) -> int:
    p = np.asarray(policy, dtype=np.float64)
    return int(rng.choice(NUM_ACTIONS, p=p / p.sum()))


def worker_loop(
    worker_id: int,
    kind: WorkerKind,
    config: ExperimentConfig,
    store: GlobalStore,
    *,
    master_seed: int,
    stop: Optional[threading.Event] = None,
    clock: Callable[[], float] = time.monotonic,
    started_at: Optional[float] = None,
) -> Generator[WorkerEvent, None, None]:
    """
    Actor-learner loop of one worker. Each segment: pull the latest snapshot,
    act for up to t_max steps, compute the loss on that snapshot, submit the
    gradient. Demonstrators act with the planner and add the imitation loss.
    """
    stop = stop or threading.Event()
    started_at = clock() if started_at is None else started_at
    game_cfg = config.game_config()
    search_cfg = config.search_config()
    loss_spec = config.loss_spec()
    opponent = make_opponent(config.opponent, config.safety_slack)
    rng = np.random.default_rng([master_seed, worker_id, 0])
    opp_rng = np.random.default_rng([master_seed, worker_id, 1])
    demonstrator = kind == WorkerKind.DEMONSTRATOR
    use_net_in_search = search_cfg.rollout_policy == RolloutPolicy.POLICY_HEAD

    episode_index = 0
    seed = episode_seed(master_seed, worker_id, episode_index)
    state: GameState = generate_board(seed, game_cfg.board_size, game_cfg)
    ep_reward, ep_length = 0.0, 0
    last_losses: Optional[LossComponents] = None

    def next_episode() -> None:
        nonlocal episode_index, seed, state, ep_reward, ep_length
        episode_index += 1
        seed = episode_seed(master_seed, worker_id, episode_index)
        state = generate_board(seed, game_cfg.board_size, game_cfg)
        ep_reward, ep_length = 0.0, 0

    while not stop.is_set():
        params, based_on = store.snapshot()
        feats: List[np.ndarray] = []
        actions: List[int] = []
        rewards: List[float] = []
        values: List[float] = []
        policies: List[np.ndarray] = []
        planner: List[int] = []
        terminal = False
        suicide = False
        aborted = False

        try:
            for _ in range(config.t_max):
                x = encode(state, 0)
                out = forward(params, x)
                if demonstrator:
                    result = search(
                        state,
                        search_cfg,
                        net=params if use_net_in_search else None,
                        rng=rng,
                        agent_id=0,
                    )
                    action = result.action
                    planner.append(action)
                else:
                    action = _sample(out.policy, rng)
                opp_action = int(opponent(state, 1, opp_rng))
                res = step(state, (action, opp_action))
                feats.append(x)
                actions.append(action)
                rewards.append(res.rewards[0])
                values.append(float(out.value))
                policies.append(out.policy)
                ep_reward += res.rewards[0]
                ep_length += 1
                state = res.next_state
                if res.terminal:
                    terminal = True
                    suicide = res.deaths.get(0) == 0
                    break
        except GameError:
            logger.exception("worker %s: episode %s aborted", worker_id, episode_index)
            aborted = True

        if aborted or not actions:
            next_episode()
            continue

        bootstrap = 0.0 if terminal else float(forward(params, encode(state, 0)).value)
        traj = Trajectory(
            features=np.stack(feats),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=np.asarray(rewards, dtype=np.float64),
            values=np.asarray(values, dtype=np.float64),
            policies=np.stack(policies),
            bootstrap_value=bootstrap,
            terminal=terminal,
            demonstrator=demonstrator,
            planner_actions=np.eye(NUM_ACTIONS)[planner] if demonstrator else None,
            worker_id=worker_id,
            params_version=based_on,
        )
        try:
            losses, grads = loss_and_grad(params, traj, loss_spec)
        except LossComputationError as e:
            logger.error("worker %s: update skipped, %s", worker_id, e)
            version = store.version
        else:
            if config.jitter_s > 0:
                time.sleep(float(rng.uniform(0.0, config.jitter_s)))
            version = store.apply_gradients(grads, based_on=based_on)
            last_losses = losses
            yield WorkerUpdate(worker_id, traj, grads, losses, based_on, version)

        if terminal:
            outcome = state.outcome.label() if state.outcome else "tie"
            yield EpisodeSummary(
                worker_id=worker_id,
                worker_kind=kind,
                episode_index=episode_index,
                episode_seed=seed,
                episode_reward=ep_reward,
                episode_length=ep_length,
                outcome=outcome,
                suicide=suicide,
                global_version=version,
                wall_clock_s=clock() - started_at,
                losses=last_losses.to_dict() if last_losses else None,
            )
            next_episode()


@dataclass
class TrainingOutcome:
    params: NetParams
    version: int
    stats: StoreStats
    model_free_episodes: int
    demonstrator_episodes: int
    updates: int
    elapsed_s: float
    errors: List[str] = field(default_factory=list)


def run_workers(
    config: ExperimentConfig,
    store: GlobalStore,
    *,
    master_seed: int,
    on_episode: Optional[Callable[[EpisodeSummary], None]] = None,
    on_update: Optional[Callable[[WorkerUpdate], None]] = None,
) -> TrainingOutcome:
    """
    Run num_workers workers against one store until the model-free episode
    budget or the wall-clock budget is exhausted. A single worker runs in the
    calling thread, which keeps seeded runs reproducible.
    """
    stop = threading.Event()
    counter_lock = threading.Lock()
    counts = {"model_free": 0, "demonstrator": 0, "updates": 0}
    errors: List[str] = []
    started = time.monotonic()

    def budget_spent() -> bool:
        if config.episode_budget is not None and counts["model_free"] >= config.episode_budget:
            return True
        if config.wall_clock_budget_s is not None and time.monotonic() - started >= config.wall_clock_budget_s:
            return True
        return False

    def consume(worker_id: int) -> None:
        kind = worker_kind(worker_id, config.num_demonstrators)
        try:
            for event in worker_loop(
                worker_id, kind, config, store, master_seed=master_seed, stop=stop, started_at=started
            ):
                with counter_lock:
                    if isinstance(event, WorkerUpdate):
                        counts["updates"] += 1
                        if on_update is not None:
                            on_update(event)
                    else:
                        counts[event.worker_kind.value] += 1
                        if on_episode is not None:
                            on_episode(event)
                    if budget_spent():
                        stop.set()
        except Exception as e:  # surfaced after join
            logger.exception("worker %s crashed", worker_id)
            with counter_lock:
                errors.append(f"worker {worker_id}: {e}")
            stop.set()

    logger.info(
        "training seed=%s workers=%s demonstrators=%s opponent=%s",
        master_seed, config.num_workers, config.num_demonstrators, config.opponent.value,
    )
    if config.num_workers == 1:
        consume(0)
    else:
        threads = [
            threading.Thread(target=consume, args=(wid,), name=f"worker-{wid}", daemon=True)
            for wid in range(config.num_workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    params, version = store.snapshot()
    outcome = TrainingOutcome(
        params=params,
        version=version,
        stats=store.stats,
        model_free_episodes=counts["model_free"],
        demonstrator_episodes=counts["demonstrator"],
        updates=counts["updates"],
        elapsed_s=time.monotonic() - started,
        errors=errors,
    )
    if errors:
        raise TrainerError("; ".join(errors))
    return outcome
