# core/replay.py
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from core.environment import GameError, GameState, generate_board, render, step
from core.schemas import GameConfig

REPLAY_FORMAT = "pi-a3c-replay/1"


class ReplayError(RuntimeError):
    pass


@dataclass
class EpisodeRecord:
    """Seed, board config and the joint actions: enough to re-derive every state."""

    seed: int
    game: GameConfig
    actions: List[Tuple[int, int]] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def append(self, actions: Sequence[int]) -> None:
        self.actions.append((int(actions[0]), int(actions[1])))

    def to_lines(self) -> List[str]:
        header = {
            "format": REPLAY_FORMAT,
            "seed": self.seed,
            "game": self.game.model_dump(),
            "meta": self.meta,
        }
        return [json.dumps(header, sort_keys=True)] + [f"{a} {b}" for a, b in self.actions]

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EpisodeRecord":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ReplayError("empty replay")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise ReplayError(f"bad replay header: {e}") from e
        if header.get("format") != REPLAY_FORMAT:
            raise ReplayError(f"unsupported replay format {header.get('format')!r}")
        try:
            game = GameConfig(**header["game"])
            seed = int(header["seed"])
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise ReplayError(f"bad replay header: {e}") from e
        actions: List[Tuple[int, int]] = []
        for n, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ReplayError(f"line {n}: expected two action ordinals, got {line!r}")
            actions.append((int(parts[0]), int(parts[1])))
        return cls(seed=seed, game=game, actions=actions, meta=header.get("meta") or {})


def write_replay(path: Union[str, Path], record: EpisodeRecord) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.dumps(), encoding="utf-8")
    return path


def read_replay(path: Union[str, Path]) -> EpisodeRecord:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReplayError(f"unreadable replay {path}: {e}") from e
    return EpisodeRecord.loads(text)


def replay_episode(record: EpisodeRecord) -> List[GameState]:
    """All states from the initial board to the last recorded step."""
    state = generate_board(record.seed, record.game.board_size, record.game)
    states = [state]
    for n, actions in enumerate(record.actions):
        try:
            state = step(state, actions).next_state
        except GameError as e:
            raise ReplayError(f"step {n}: {e}") from e
        states.append(state)
    return states


def format_replay(record: EpisodeRecord, every: int = 1, limit: Optional[int] = None) -> str:
    states = replay_episode(record)
    frames = []
    for i, s in enumerate(states):
        if i % every and i != len(states) - 1:
            continue
        frames.append(render(s))
        if i < len(record.actions):
            a, b = record.actions[i]
            frames.append(f"actions: {a} {b}")
        if limit is not None and len(frames) >= 2 * limit:
            break
    return "\n\n".join(frames)
