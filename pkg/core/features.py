# core/features.py
from __future__ import annotations

from typing import Tuple

import numpy as np

from core.environment import NUM_AGENTS, CellKind, GameState, PowerUp

NUM_CHANNELS = 28
AGENT_SLOTS = 4
FUSE_SCALE = 10.0
FLAME_SCALE = 2.0
AMMO_SCALE = 5.0

# Frozen channel order. Changing it invalidates every saved checkpoint.
CHANNEL_NAMES: Tuple[str, ...] = (
    "passage",
    "rigid",
    "wood",
    "bomb",
    "bomb_fuse",
    "bomb_blast_radius",
    "flame",
    "flame_life",
    "powerup_extra_bomb",
    "powerup_blast_radius",
    "powerup_kick",
    "agent_self",
    "agent_opponent",
    "agent_slot_2",
    "agent_slot_3",
    "ones",
) + tuple(
    f"slot{s}_{prop}" for s in range(AGENT_SLOTS) for prop in ("ammo", "blast_radius", "can_kick")
)

ABILITY_OFFSET = 16

FeatureTensor = np.ndarray


class FeatureError(RuntimeError):
    pass


def encode(state: GameState, agent_id: int) -> FeatureTensor:
    """
    Encode the state from agent_id's seat as a (28, size, size) float32 tensor.
    Slot 0 is always the observing agent and slot 1 its opponent.
    """
    if agent_id not in range(NUM_AGENTS):
        raise FeatureError(f"agent_id must be 0 or 1, got {agent_id}")
    n = state.size
    out = np.zeros((NUM_CHANNELS, n, n), dtype=np.float32)

    board = state.board
    out[0] = board == CellKind.PASSAGE
    out[1] = board == CellKind.RIGID
    out[2] = board == CellKind.WOOD

    for b in state.bombs:
        out[3][b.position] = 1.0
        out[4][b.position] = b.fuse_remaining / FUSE_SCALE
        out[5][b.position] = b.blast_radius / n

    for f in state.flames:
        out[6][f.position] = 1.0
        out[7][f.position] = f.life_remaining / FLAME_SCALE

    visible = board == CellKind.PASSAGE
    for k, kind in enumerate(PowerUp):
        out[8 + k] = visible & (state.powerups == kind)

    order = (agent_id, 1 - agent_id)
    for slot, idx in enumerate(order):
        agent = state.agents[idx]
        if agent.alive:
            out[11 + slot][agent.position] = 1.0
        base = ABILITY_OFFSET + 3 * slot
        out[base] = min(agent.ammo / AMMO_SCALE, 1.0)
        out[base + 1] = agent.blast_radius / n
        out[base + 2] = 1.0 if agent.can_kick else 0.0

    out[15] = 1.0
    return out


def encode_batch(states, agent_id: int) -> np.ndarray:
    return np.stack([encode(s, agent_id) for s in states])
