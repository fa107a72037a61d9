# core/opponents.py
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from core.environment import (
    DIRECTIONS,
    MOVE_ACTIONS,
    NUM_ACTIONS,
    Action,
    CellKind,
    GameState,
    Position,
    _blast,
)
from core.schemas import OpponentKind

logger = logging.getLogger("pi_a3c.opponents")


Policy = Callable[[GameState, int, np.random.Generator], Action]


def static_policy(state: GameState, agent_id: int, rng: Optional[np.random.Generator] = None) -> Action:
    return Action.STOP


def random_policy(state: GameState, agent_id: int, rng: np.random.Generator) -> Action:
    return Action(int(rng.integers(NUM_ACTIONS)))


@dataclass(frozen=True)
class DangerMap:
    # cell -> turns until the earliest explosion covering it (chains included)
    explode_in: Dict[Position, int]
    flames: FrozenSet[Position]

    def in_zone(self, pos: Position) -> bool:
        return pos in self.explode_in

    def deadly_at(self, pos: Position, k: int) -> bool:
        """True if standing on pos after k more steps means death."""
        if pos in self.flames:
            return True
        f = self.explode_in.get(pos)
        return f is not None and f <= k <= f + 1


def danger_map(state: GameState, extra_bomb: Optional[Tuple[Position, int, int]] = None) -> DangerMap:
    """
    Pending blast zones. A bomb caught in another bomb's cross inherits the
    earlier fuse. extra_bomb=(position, fuse, radius) adds a hypothetical bomb.
    """
    bombs = [(b.position, b.fuse_remaining, b.blast_radius) for b in state.bombs]
    if extra_bomb is not None:
        bombs.append(extra_bomb)
    flames = state.flame_cells()
    fuses = [fuse if pos not in flames else 1 for pos, fuse, _ in bombs]
    crosses = [_blast(state.board, pos, radius) for pos, _, radius in bombs]

    changed = True
    while changed:
        changed = False
        for i, cells in enumerate(crosses):
            for j, (pos, _, _) in enumerate(bombs):
                if j != i and pos in cells and fuses[i] < fuses[j]:
                    fuses[j] = fuses[i]
                    changed = True

    explode_in: Dict[Position, int] = {}
    for cells, fuse in zip(crosses, fuses):
        for c in cells:
            if c not in explode_in or fuse < explode_in[c]:
                explode_in[c] = fuse
    return DangerMap(explode_in=explode_in, flames=flames)


def _walkable(state: GameState, pos: Position, bombs: FrozenSet[Position], blocked: FrozenSet[Position]) -> bool:
    return (
        state.in_bounds(pos)
        and state.board[pos] == CellKind.PASSAGE
        and pos not in bombs
        and pos not in blocked
    )


def dijkstra(
    state: GameState,
    start: Position,
    danger: DangerMap,
    blocked: FrozenSet[Position] = frozenset(),
    extra_bombs: FrozenSet[Position] = frozenset(),
) -> Tuple[Dict[Position, int], Dict[Position, Position]]:
    """
    Unit-cost shortest paths from start. A cell is entered only if it is
    walkable and standing there at that arrival time is not deadly.
    """
    bombs = frozenset(b.position for b in state.bombs) | extra_bombs
    dist: Dict[Position, int] = {start: 0}
    prev: Dict[Position, Position] = {}
    counter = 0
    frontier: List[Tuple[int, int, Position]] = [(0, counter, start)]
    while frontier:
        d, _, cur = heapq.heappop(frontier)
        if d > dist.get(cur, d):
            continue
        for act in MOVE_ACTIONS:
            dr, dc = DIRECTIONS[act]
            nxt = (cur[0] + dr, cur[1] + dc)
            nd = d + 1
            if not _walkable(state, nxt, bombs, blocked) or danger.deadly_at(nxt, nd):
                continue
            if nd < dist.get(nxt, 1 << 30):
                dist[nxt] = nd
                prev[nxt] = cur
                counter += 1
                heapq.heappush(frontier, (nd, counter, nxt))
    return dist, prev


def _first_step(start: Position, goal: Position, prev: Dict[Position, Position]) -> Action:
    cur = goal
    while prev.get(cur) != start:
        cur = prev[cur]
    delta = (cur[0] - start[0], cur[1] - start[1])
    for act, d in DIRECTIONS.items():
        if d == delta:
            return act
    return Action.STOP


def _nearest(dist: Dict[Position, int], accept: Callable[[Position], bool]) -> Optional[Position]:
    best: Optional[Tuple[int, Position]] = None
    for pos, d in dist.items():
        if accept(pos) and (best is None or (d, pos) < best):
            best = (d, pos)
    return best[1] if best else None


def in_line_of_fire(state: GameState, pos: Position, target: Position, radius: int) -> bool:
    """Same row or column, at most `radius` cells away, nothing but open passage between."""
    if pos == target or (pos[0] != target[0] and pos[1] != target[1]):
        return False
    gap = abs(pos[0] - target[0]) + abs(pos[1] - target[1])
    if gap > radius:
        return False
    dr = (target[0] > pos[0]) - (target[0] < pos[0])
    dc = (target[1] > pos[1]) - (target[1] < pos[1])
    bombs = {b.position for b in state.bombs}
    for k in range(1, gap):
        cell = (pos[0] + k * dr, pos[1] + k * dc)
        if state.board[cell] != CellKind.PASSAGE or cell in bombs:
            return False
    return True


def _can_escape_own_bomb(state: GameState, agent_id: int, blocked: FrozenSet[Position]) -> bool:
    me = state.agents[agent_id]
    fuse = state.config.bomb_life
    danger = danger_map(state, extra_bomb=(me.position, fuse, me.blast_radius))
    dist, _ = dijkstra(state, me.position, danger, blocked, extra_bombs=frozenset({me.position}))
    return any(not danger.in_zone(p) and d < fuse for p, d in dist.items())


def rule_based_policy(
    state: GameState,
    agent_id: int,
    rng: np.random.Generator,
    *,
    safety_slack: int = 2,
) -> Action:
    """
    Priority cascade: flee pending blasts, bomb a lined-up opponent, fetch the
    nearest power-up, bomb adjacent wood half of the time, else wander safely.
    A neighbouring cell counts as threatened when its fuse is at most its
    distance plus safety_slack; the agent never waits on a pending blast zone.
    """
    me = state.agents[agent_id]
    opp = state.agents[1 - agent_id]
    pos = me.position
    blocked = frozenset({opp.position}) if opp.alive else frozenset()
    danger = danger_map(state)
    dist, prev = dijkstra(state, pos, danger, blocked)

    # (1) danger avoidance
    threatened = danger.in_zone(pos) or any(
        danger.in_zone(p) and danger.explode_in[p] <= d + safety_slack
        for p, d in dist.items()
        if d == 1
    )
    if threatened:
        safe = _nearest(dist, lambda p: not danger.in_zone(p))
        if safe is None:
            logger.debug("agent %s has no safe cell at t=%s", agent_id, state.timestep)
            return Action.STOP
        if safe == pos:
            return Action.STOP
        return _first_step(pos, safe, prev)

    has_bomb_here = state.bomb_at(pos) is not None

    # (2) opponent lined up within blast radius
    if (
        opp.alive
        and me.ammo > 0
        and not has_bomb_here
        and in_line_of_fire(state, pos, opp.position, me.blast_radius)
        and _can_escape_own_bomb(state, agent_id, blocked)
    ):
        return Action.BOMB

    # (3) nearest reachable power-up
    powerups = state.powerups
    target = _nearest(
        dist,
        lambda p: p != pos and powerups[p] != 0 and not danger.in_zone(p),
    )
    if target is not None:
        return _first_step(pos, target, prev)

    # (4) adjacent wood
    if me.ammo > 0 and not has_bomb_here:
        near_wood = any(
            state.in_bounds((pos[0] + dr, pos[1] + dc)) and state.board[pos[0] + dr, pos[1] + dc] == CellKind.WOOD
            for dr, dc in DIRECTIONS.values()
        )
        if near_wood and rng.random() < 0.5 and _can_escape_own_bomb(state, agent_id, blocked):
            return Action.BOMB

    # (5) random safe move
    moves = [
        act
        for act in MOVE_ACTIONS
        if dist.get((pos[0] + DIRECTIONS[act][0], pos[1] + DIRECTIONS[act][1])) == 1
        and not danger.in_zone((pos[0] + DIRECTIONS[act][0], pos[1] + DIRECTIONS[act][1]))
    ]
    moves.append(Action.STOP)
    return moves[int(rng.integers(len(moves)))]


def make_opponent(kind: OpponentKind, safety_slack: int = 2) -> Policy:
    if kind == OpponentKind.STATIC:
        return static_policy
    if kind == OpponentKind.RULE_BASED:
        return partial(rule_based_policy, safety_slack=safety_slack)
    raise ValueError(f"unknown opponent kind: {kind}")
