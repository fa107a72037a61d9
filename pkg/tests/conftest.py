from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core.environment import AgentAttr, GameState, from_ascii  # noqa: E402

OPEN_8 = ["." * 8 for _ in range(8)]


def open_board(size: int = 8, agents=None, **kwargs) -> GameState:
    """All-passage board; agents default to opposite corners."""
    rows = ["." * size for _ in range(size)]
    if agents is None:
        agents = [AgentAttr(position=(0, 0)), AgentAttr(position=(size - 1, size - 1))]
    return from_ascii(rows, agents=agents, **kwargs)


@pytest.fixture
def open_state() -> GameState:
    return open_board(8)


@pytest.fixture
def small_open_state() -> GameState:
    return open_board(6)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
