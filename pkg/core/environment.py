# core/environment.py
from __future__ import annotations

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from core.schemas import GameConfig

logger = logging.getLogger("pi_a3c.environment")

Position = Tuple[int, int]
NUM_AGENTS = 2


class GameError(RuntimeError):
    pass


class BoardGenerationError(GameError):
    pass


class IllegalStepError(GameError):
    pass


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STOP = 4
    BOMB = 5


NUM_ACTIONS = len(Action)
MOVE_ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)
DIRECTIONS: Dict[Action, Position] = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class CellKind(IntEnum):
    PASSAGE = 0
    RIGID = 1
    WOOD = 2


class PowerUp(IntEnum):
    EXTRA_BOMB = 1
    BLAST_RADIUS = 2
    KICK = 3


@dataclass(frozen=True)
class Cell:
    kind: CellKind
    powerup: Optional[PowerUp] = None


@dataclass(frozen=True)
class Bomb:
    position: Position
    fuse_remaining: int
    blast_radius: int
    owner: int
    moving_dir: Optional[Action] = None


@dataclass(frozen=True)
class Flame:
    position: Position
    life_remaining: int
    # agent whose bomb produced the flame; used to attribute suicides
    owner: int = -1


@dataclass(frozen=True)
class AgentAttr:
    position: Position
    alive: bool = True
    ammo: int = 1
    blast_radius: int = 2
    can_kick: bool = False


@dataclass(frozen=True)
class Outcome:
    winner: Optional[int] = None

    @property
    def is_tie(self) -> bool:
        return self.winner is None

    def label(self) -> str:
        return "tie" if self.winner is None else f"win:{self.winner}"


@dataclass(frozen=True, eq=False)
class GameState:
    """
    Complete world state. Arrays are read-only and shared between successive
    states until an explosion or a pickup changes them.
    """

    board: np.ndarray
    powerups: np.ndarray
    bombs: Tuple[Bomb, ...]
    flames: Tuple[Flame, ...]
    agents: Tuple[AgentAttr, ...]
    timestep: int
    seed: int
    config: GameConfig
    terminal: bool = False
    outcome: Optional[Outcome] = None

    @property
    def size(self) -> int:
        return int(self.board.shape[0])

    def cell(self, pos: Position) -> Cell:
        kind = CellKind(int(self.board[pos]))
        p = int(self.powerups[pos])
        return Cell(kind=kind, powerup=PowerUp(p) if p else None)

    def bomb_at(self, pos: Position) -> Optional[Bomb]:
        for b in self.bombs:
            if b.position == pos:
                return b
        return None

    def flame_cells(self) -> FrozenSet[Position]:
        return frozenset(f.position for f in self.flames)

    def in_bounds(self, pos: Position) -> bool:
        n = self.size
        return 0 <= pos[0] < n and 0 <= pos[1] < n

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.board.astype(np.int8).tobytes())
        h.update(self.powerups.astype(np.int8).tobytes())
        h.update(repr((self.bombs, self.flames, self.agents, self.timestep, self.seed,
                       self.terminal, self.outcome)).encode("utf-8"))
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GameState):
            return NotImplemented
        return self.fingerprint() == other.fingerprint()

    def __hash__(self) -> int:
        return hash(self.fingerprint())


@dataclass(frozen=True)
class StepResult:
    next_state: GameState
    rewards: Tuple[float, float]
    terminal: bool
    outcome: Optional[Outcome]
    # victim id -> id of the agent whose flame killed it
    deaths: Dict[int, int] = field(default_factory=dict)
    explosions: Tuple[Tuple[Bomb, FrozenSet[Position]], ...] = ()


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _corners(size: int) -> List[Position]:
    return [(0, 0), (0, size - 1), (size - 1, 0), (size - 1, size - 1)]


def _add(pos: Position, d: Position) -> Position:
    return (pos[0] + d[0], pos[1] + d[1])


# ---------------------------------------------------------------------------
# Board generation
# ---------------------------------------------------------------------------

def passage_path_exists(board: np.ndarray, start: Position, goal: Position) -> bool:
    """Flood fill over non-Rigid cells (Wood counts as traversable)."""
    n = board.shape[0]
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            return True
        for d in DIRECTIONS.values():
            nxt = (cur[0] + d[0], cur[1] + d[1])
            if 0 <= nxt[0] < n and 0 <= nxt[1] < n and nxt not in seen and board[nxt] != CellKind.RIGID:
                seen.add(nxt)
                queue.append(nxt)
    return False


def _layout(rng: np.random.Generator, cfg: GameConfig) -> Tuple[np.ndarray, np.ndarray, List[Position]]:
    n = cfg.board_size
    board = np.zeros((n, n), dtype=np.int8)

    reserved: Set[Position] = set()
    for (r, c) in _corners(n):
        reserved.add((r, c))
        reserved.add((r, 1 if c == 0 else n - 2))
        reserved.add((1 if r == 0 else n - 2, c))

    # symmetric about the main diagonal
    for r in range(n):
        for c in range(r, n):
            if (r, c) in reserved or (c, r) in reserved:
                continue
            u = rng.random()
            if u < cfg.rigid_fraction:
                kind = CellKind.RIGID
            elif u < cfg.rigid_fraction + cfg.wood_fraction:
                kind = CellKind.WOOD
            else:
                kind = CellKind.PASSAGE
            board[r, c] = kind
            board[c, r] = kind

    powerups = np.zeros((n, n), dtype=np.int8)
    wood = np.argwhere(board == CellKind.WOOD)
    n_hidden = int(round(cfg.powerup_fraction * len(wood)))
    if n_hidden:
        picks = rng.choice(len(wood), size=n_hidden, replace=False)
        kinds = rng.integers(1, len(PowerUp) + 1, size=n_hidden)
        for idx, kind in zip(picks, kinds):
            r, c = wood[idx]
            powerups[r, c] = kind

    corners = _corners(n)
    chosen = rng.choice(len(corners), size=NUM_AGENTS, replace=False)
    starts = [corners[int(i)] for i in chosen]
    return board, powerups, starts


def generate_board(seed: int, size: int = 8, config: Optional[GameConfig] = None) -> GameState:
    """
    Build a fresh episode. Identical (seed, size, config) gives a bit-identical state.
    If the flood-fill check fails the layout is redrawn from the sub-seed [seed, attempt].
    """
    if size < 6:
        raise BoardGenerationError(f"board size must be at least 6, got {size}")
    cfg = (config or GameConfig()).model_copy(update={"board_size": size})

    for attempt in range(cfg.max_generation_retries):
        rng = np.random.default_rng(seed if attempt == 0 else [seed, attempt])
        board, powerups, starts = _layout(rng, cfg)
        if passage_path_exists(board, starts[0], starts[1]):
            if attempt:
                logger.debug("board seed=%s connected after %s retries", seed, attempt)
            agents = tuple(
                AgentAttr(
                    position=pos,
                    alive=True,
                    ammo=cfg.initial_ammo,
                    blast_radius=cfg.initial_blast_radius,
                    can_kick=False,
                )
                for pos in starts
            )
            return GameState(
                board=_frozen(board),
                powerups=_frozen(powerups),
                bombs=(),
                flames=(),
                agents=agents,
                timestep=0,
                seed=int(seed),
                config=cfg,
            )

    raise BoardGenerationError(
        f"no connected board for seed={seed} after {cfg.max_generation_retries} attempts"
    )


_ASCII_KIND = {".": CellKind.PASSAGE, "#": CellKind.RIGID, "+": CellKind.WOOD}
_ASCII_POWERUP = {"e": PowerUp.EXTRA_BOMB, "r": PowerUp.BLAST_RADIUS, "k": PowerUp.KICK}


def from_ascii(
    rows: Sequence[str],
    *,
    agents: Optional[Sequence[AgentAttr]] = None,
    bombs: Sequence[Bomb] = (),
    flames: Sequence[Flame] = (),
    timestep: int = 0,
    config: Optional[GameConfig] = None,
) -> GameState:
    """
    Hand-built state for scenarios: '.' passage, '#' rigid, '+' wood,
    'e'/'r'/'k' power-up on a passage, '0'/'1' agent start on a passage.
    """
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise GameError("ascii board must be square")
    board = np.zeros((n, n), dtype=np.int8)
    powerups = np.zeros((n, n), dtype=np.int8)
    found: Dict[int, Position] = {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch in _ASCII_KIND:
                board[r, c] = _ASCII_KIND[ch]
            elif ch in _ASCII_POWERUP:
                powerups[r, c] = _ASCII_POWERUP[ch]
            elif ch in "01":
                found[int(ch)] = (r, c)
            else:
                raise GameError(f"unknown board character {ch!r}")
    cfg = (config or GameConfig()).model_copy(update={"board_size": n})
    if agents is None:
        if len(found) != NUM_AGENTS:
            raise GameError("ascii board must place agents '0' and '1'")
        agents = [
            AgentAttr(position=found[i], ammo=cfg.initial_ammo, blast_radius=cfg.initial_blast_radius)
            for i in range(NUM_AGENTS)
        ]
    return GameState(
        board=_frozen(board),
        powerups=_frozen(powerups),
        bombs=tuple(bombs),
        flames=tuple(flames),
        agents=tuple(agents),
        timestep=timestep,
        seed=0,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def _blast(board: np.ndarray, origin: Position, radius: int) -> FrozenSet[Position]:
    n = board.shape[0]
    cells = {origin}
    for d in DIRECTIONS.values():
        r, c = origin
        for _ in range(radius - 1):
            r, c = r + d[0], c + d[1]
            if not (0 <= r < n and 0 <= c < n):
                break
            kind = board[r, c]
            if kind == CellKind.RIGID:
                break
            cells.add((r, c))
            if kind == CellKind.WOOD:
                break
    return frozenset(cells)


def blast_cells(state: GameState, bomb: Bomb) -> FrozenSet[Position]:
    """Cross of reach blast_radius-1 around the bomb; Rigid blocks, Wood burns and blocks."""
    return _blast(state.board, bomb.position, bomb.blast_radius)


def observe(state: GameState, agent_id: int) -> GameState:
    # full observability: the agent sees the whole state
    if agent_id not in range(NUM_AGENTS):
        raise GameError(f"agent_id must be 0 or 1, got {agent_id}")
    return state


def _coerce_actions(actions: Sequence[object]) -> Tuple[Action, Action]:
    if len(actions) != NUM_AGENTS:
        raise IllegalStepError(f"expected {NUM_AGENTS} actions, got {len(actions)}")
    out = []
    for a in actions:
        try:
            idx = int(a)  # type: ignore[arg-type]
        except (TypeError, ValueError) as e:
            raise IllegalStepError(f"malformed action {a!r}") from e
        if idx != a or not 0 <= idx < NUM_ACTIONS:
            raise IllegalStepError(f"action index out of range: {a!r}")
        out.append(Action(idx))
    return out[0], out[1]


def step(state: GameState, actions: Sequence[object]) -> StepResult:
    if state.terminal:
        raise IllegalStepError("cannot step a terminal state")
    acts = _coerce_actions(actions)
    cfg = state.config
    n = state.size
    board = state.board
    powerups = state.powerups
    agents: List[AgentAttr] = list(state.agents)

    # (1) flame decay
    flames: Dict[Position, Flame] = {
        f.position: Flame(f.position, f.life_remaining - 1, f.owner)
        for f in state.flames
        if f.life_remaining > 1
    }

    # (2) fuses, explosions and chain reactions
    bombs = [replace(b, fuse_remaining=b.fuse_remaining - 1) for b in state.bombs]
    pending = deque(
        i for i, b in enumerate(bombs) if b.fuse_remaining <= 0 or b.position in flames
    )
    exploded: Set[int] = set()
    explosions: List[Tuple[Bomb, FrozenSet[Position]]] = []
    while pending:
        i = pending.popleft()
        if i in exploded:
            continue
        exploded.add(i)
        bomb = bombs[i]
        cells = _blast(board, bomb.position, bomb.blast_radius)
        explosions.append((bomb, cells))
        for j, other in enumerate(bombs):
            if j not in exploded and other.position in cells:
                pending.append(j)

    if explosions:
        new_board = board.copy()
        new_powerups = powerups.copy()
        for bomb, cells in explosions:
            owner = agents[bomb.owner]
            agents[bomb.owner] = replace(owner, ammo=owner.ammo + 1)
            for cell in cells:
                flames[cell] = Flame(cell, cfg.flame_life, bomb.owner)
                if board[cell] == CellKind.WOOD:
                    new_board[cell] = CellKind.PASSAGE
                else:
                    new_powerups[cell] = 0
        if not np.array_equal(new_board, board):
            board = _frozen(new_board)
        if not np.array_equal(new_powerups, powerups):
            powerups = _frozen(new_powerups)
        bombs = [b for i, b in enumerate(bombs) if i not in exploded]

    bomb_index = {b.position: i for i, b in enumerate(bombs)}

    # (3) movement with collision resolution
    current = [a.position for a in agents]
    intended = list(current)
    kicks: Dict[int, int] = {}
    for i, (agent, act) in enumerate(zip(agents, acts)):
        if not agent.alive or act not in DIRECTIONS:
            continue
        d = DIRECTIONS[act]
        target = _add(agent.position, d)
        if not (0 <= target[0] < n and 0 <= target[1] < n) or board[target] != CellKind.PASSAGE:
            continue
        if target in bomb_index:
            if not agent.can_kick:
                continue
            beyond = _add(target, d)
            if (
                not (0 <= beyond[0] < n and 0 <= beyond[1] < n)
                or board[beyond] != CellKind.PASSAGE
                or beyond in bomb_index
                or any(a.alive and a.position == beyond for a in agents)
            ):
                continue
            kicks[i] = bomb_index[target]
        intended[i] = target

    if agents[0].alive and agents[1].alive:
        moved = [intended[i] != current[i] for i in range(NUM_AGENTS)]
        # same target, a swap, or entering the cell the opponent keeps: nobody moves
        if intended[0] == intended[1] or (intended[0] == current[1] and intended[1] == current[0]
                                           and all(moved)):
            intended = list(current)
        for i in list(kicks):
            if intended[i] == current[i]:
                del kicks[i]
    agents = [replace(a, position=p) if a.position != p else a for a, p in zip(agents, intended)]

    # (4) bomb placement
    for i, (agent, act) in enumerate(zip(agents, acts)):
        if act != Action.BOMB or not agent.alive or agent.ammo <= 0:
            continue
        if agent.position in bomb_index:
            continue
        bombs.append(Bomb(agent.position, cfg.bomb_life, agent.blast_radius, owner=i))
        bomb_index[agent.position] = len(bombs) - 1
        agents[i] = replace(agent, ammo=agent.ammo - 1)

    # (5) kicked and sliding bombs
    for i, b_idx in kicks.items():
        bombs[b_idx] = replace(bombs[b_idx], moving_dir=acts[i])
    if any(b.moving_dir is not None for b in bombs):
        occupied = {b.position for b in bombs}
        for k, b in enumerate(bombs):
            if b.moving_dir is None:
                continue
            nxt = _add(b.position, DIRECTIONS[b.moving_dir])
            if (
                0 <= nxt[0] < n and 0 <= nxt[1] < n
                and board[nxt] == CellKind.PASSAGE
                and nxt not in occupied
                and not any(a.alive and a.position == nxt for a in agents)
            ):
                occupied.discard(b.position)
                occupied.add(nxt)
                bombs[k] = replace(b, position=nxt)
            else:
                bombs[k] = replace(b, moving_dir=None)

    # (6) power-up pickup
    for i, agent in enumerate(agents):
        if not agent.alive:
            continue
        kind = int(powerups[agent.position])
        if not kind:
            continue
        if kind == PowerUp.EXTRA_BOMB:
            agents[i] = replace(agent, ammo=agent.ammo + 1)
        elif kind == PowerUp.BLAST_RADIUS:
            agents[i] = replace(agent, blast_radius=agent.blast_radius + 1)
        else:
            agents[i] = replace(agent, can_kick=True)
        updated = powerups.copy()
        updated[agent.position] = 0
        powerups = _frozen(updated)

    # (7) death check
    deaths: Dict[int, int] = {}
    for i, agent in enumerate(agents):
        if agent.alive and agent.position in flames:
            deaths[i] = flames[agent.position].owner
            agents[i] = replace(agent, alive=False)

    # (8) clock and terminal check
    timestep = state.timestep + 1
    alive = [a.alive for a in agents]
    outcome: Optional[Outcome] = None
    rewards = (0.0, 0.0)
    if not all(alive):
        if any(alive):
            winner = alive.index(True)
            outcome = Outcome(winner=winner)
            rewards = (1.0, -1.0) if winner == 0 else (-1.0, 1.0)
        else:
            outcome = Outcome()
            rewards = (-1.0, -1.0)
    elif timestep >= cfg.max_steps:
        outcome = Outcome()
        rewards = (-1.0, -1.0)
    terminal = outcome is not None

    next_state = GameState(
        board=board,
        powerups=powerups,
        bombs=tuple(bombs),
        flames=tuple(flames[p] for p in sorted(flames)),
        agents=tuple(agents),
        timestep=timestep,
        seed=state.seed,
        config=cfg,
        terminal=terminal,
        outcome=outcome,
    )
    return StepResult(
        next_state=next_state,
        rewards=rewards,
        terminal=terminal,
        outcome=outcome,
        deaths=deaths,
        explosions=tuple(explosions),
    )


_RENDER_POWERUP = {PowerUp.EXTRA_BOMB: "e", PowerUp.BLAST_RADIUS: "r", PowerUp.KICK: "k"}


def render(state: GameState) -> str:
    """Text picture of the board; agents and bombs drawn over flames and cells."""
    grid = []
    for r in range(state.size):
        row = []
        for c in range(state.size):
            kind = state.board[r, c]
            if kind == CellKind.RIGID:
                ch = "#"
            elif kind == CellKind.WOOD:
                ch = "+"
            elif state.powerups[r, c]:
                ch = _RENDER_POWERUP[PowerUp(int(state.powerups[r, c]))]
            else:
                ch = "."
            row.append(ch)
        grid.append(row)
    for f in state.flames:
        grid[f.position[0]][f.position[1]] = "*"
    for b in state.bombs:
        grid[b.position[0]][b.position[1]] = "b"
    for i, a in enumerate(state.agents):
        if a.alive:
            grid[a.position[0]][a.position[1]] = str(i)
    lines = ["".join(row) for row in grid]
    status = " | ".join(
        f"agent{i} {'alive' if a.alive else 'dead'} ammo={a.ammo} radius={a.blast_radius} "
        f"kick={'y' if a.can_kick else 'n'}"
        for i, a in enumerate(state.agents)
    )
    header = f"t={state.timestep}" + (f" terminal ({state.outcome.label()})" if state.outcome else "")
    return "\n".join([header, *lines, status])
