# core/mcts.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, List, Optional, Protocol, Tuple

import numpy as np

from core.environment import NUM_ACTIONS, Action, GameState, step
from core.features import encode
from core.network import NetParams, forward
from core.schemas import RolloutPolicy, SearchConfig

logger = logging.getLogger("pi_a3c.mcts")


class SearchError(RuntimeError):
    pass


class SearchModel(Protocol):
    """What the planner needs from a game: terminal test, reward, joint step."""

    num_actions: int

    def is_terminal(self, state: Any) -> bool: ...

    def reward(self, state: Any, agent_id: int) -> float: ...

    def sample_opponent(self, state: Any, agent_id: int, rng: np.random.Generator) -> int: ...

    def step(self, state: Any, action: int, opponent_action: int, agent_id: int) -> Any: ...

    def policy(self, state: Any, net: NetParams, agent_id: int) -> np.ndarray: ...


OpponentModel = Callable[[GameState, int, np.random.Generator], Action]


class PommermanModel:
    """The environment seen from one planning seat; the opponent acts uniformly at random by default."""

    num_actions = NUM_ACTIONS

    def __init__(self, opponent: Optional[OpponentModel] = None) -> None:
        self._opponent = opponent

    def is_terminal(self, state: GameState) -> bool:
        return state.terminal

    def reward(self, state: GameState, agent_id: int) -> float:
        if state.outcome is None:
            return 0.0
        return 1.0 if state.outcome.winner == agent_id else -1.0

    def sample_opponent(self, state: GameState, agent_id: int, rng: np.random.Generator) -> int:
        if self._opponent is not None:
            return int(self._opponent(state, 1 - agent_id, rng))
        return int(rng.integers(NUM_ACTIONS))

    def step(self, state: GameState, action: int, opponent_action: int, agent_id: int) -> GameState:
        actions = (action, opponent_action) if agent_id == 0 else (opponent_action, action)
        return step(state, actions).next_state

    def policy(self, state: GameState, net: NetParams, agent_id: int) -> np.ndarray:
        return forward(net, encode(state, agent_id)).policy


@dataclass
class SearchNode:
    state: Any
    depth: int = 0
    visits: int = 0  # n(s) = sum of edge visits
    edge_visits: np.ndarray = field(default_factory=lambda: np.zeros(NUM_ACTIONS, dtype=np.int64))
    q: np.ndarray = field(default_factory=lambda: np.zeros(NUM_ACTIONS, dtype=np.float64))
    children: List[Optional["SearchNode"]] = field(default_factory=lambda: [None] * NUM_ACTIONS)


@dataclass(frozen=True)
class SearchResult:
    action: int
    visits: np.ndarray
    q: np.ndarray
    iterations: int
    max_depth: int

    def __iter__(self) -> Iterator[Any]:
        # allows `action, visits = search(...)`
        yield self.action
        yield self.visits


def ucb1(q: float, n_parent: int, n_child: int, c: float) -> float:
    if n_child == 0:
        return math.inf
    return q + c * math.sqrt(math.log(n_parent) / n_child)


def _select(node: SearchNode, c: float) -> int:
    unvisited = np.flatnonzero(node.edge_visits == 0)
    if unvisited.size:
        return int(unvisited[0])
    scores = node.q + c * np.sqrt(math.log(node.visits) / node.edge_visits)
    return int(np.argmax(scores))


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    p = np.asarray(probs, dtype=np.float64)
    return int(rng.choice(len(p), p=p / p.sum()))


def rollout(
    leaf_state: Any,
    config: SearchConfig,
    net: Optional[NetParams] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    agent_id: int = 0,
    model: Optional[SearchModel] = None,
) -> float:
    """
    Play out at most rollout_depth_limit joint steps. Returns the planner's
    terminal reward, or 0 when the depth limit is hit first.
    """
    model = model or PommermanModel()
    rng = rng if rng is not None else np.random.default_rng()
    biased = config.rollout_policy == RolloutPolicy.POLICY_HEAD
    if biased and net is None:
        raise SearchError("policy-head rollouts need network parameters")

    state = leaf_state
    for _ in range(config.rollout_depth_limit):
        if model.is_terminal(state):
            break
        if biased:
            action = _sample(model.policy(state, net, agent_id), rng)
        else:
            action = int(rng.integers(model.num_actions))
        state = model.step(state, action, model.sample_opponent(state, agent_id, rng), agent_id)
    if model.is_terminal(state):
        return model.reward(state, agent_id)
    return 0.0


def _backpropagate(path: List[Tuple[SearchNode, int]], value: float) -> None:
    for node, a in path:
        node.visits += 1
        node.edge_visits[a] += 1
        node.q[a] += (value - node.q[a]) / node.edge_visits[a]


def search(
    root_state: Any,
    config: SearchConfig,
    net: Optional[NetParams] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    agent_id: int = 0,
    model: Optional[SearchModel] = None,
) -> SearchResult:
    """
    UCT with exactly rollout_budget iterations. Children are keyed by the
    planner's action; the opponent action sampled on first expansion is
    frozen into the child state. The returned action is the most visited
    root edge (lowest ordinal on ties).
    """
    model = model or PommermanModel()
    rng = rng if rng is not None else np.random.default_rng()
    if model.is_terminal(root_state):
        raise SearchError("cannot search from a terminal state")
    if config.rollout_policy == RolloutPolicy.POLICY_HEAD and net is None:
        raise SearchError("policy-head rollouts need network parameters")

    root = SearchNode(state=root_state)
    max_depth = 0
    for _ in range(config.rollout_budget):
        node = root
        path: List[Tuple[SearchNode, int]] = []
        while True:
            if model.is_terminal(node.state):
                value = model.reward(node.state, agent_id)
                break
            if node.depth >= config.max_tree_depth:
                value = rollout(node.state, config, net, rng, agent_id=agent_id, model=model)
                break
            a = _select(node, config.exploration_c)
            opponent_action = model.sample_opponent(node.state, agent_id, rng)
            path.append((node, a))
            child = node.children[a]
            if child is None:
                child = SearchNode(
                    state=model.step(node.state, a, opponent_action, agent_id),
                    depth=node.depth + 1,
                )
                node.children[a] = child
                max_depth = max(max_depth, child.depth)
                value = rollout(child.state, config, net, rng, agent_id=agent_id, model=model)
                break
            node = child
        _backpropagate(path, value)

    visits = root.edge_visits.copy()
    return SearchResult(
        action=int(np.argmax(visits)),
        visits=visits,
        q=root.q.copy(),
        iterations=config.rollout_budget,
        max_depth=max_depth,
    )
