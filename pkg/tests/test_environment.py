from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import open_board
from core.environment import (
    Action,
    AgentAttr,
    Bomb,
    BoardGenerationError,
    CellKind,
    Flame,
    IllegalStepError,
    PowerUp,
    blast_cells,
    from_ascii,
    generate_board,
    observe,
    passage_path_exists,
    render,
    step,
)
from core.schemas import GameConfig
from core.selftest import random_episode

STOP2 = (Action.STOP, Action.STOP)


def _corners(n):
    return {(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)}


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_same_seed_gives_identical_state():
    a = generate_board(42, 8)
    b = generate_board(42, 8)
    assert a == b
    assert np.array_equal(a.board, b.board)
    assert np.array_equal(a.powerups, b.powerups)
    assert a.agents == b.agents


def test_agents_start_in_two_distinct_corners():
    s = generate_board(7, 8)
    positions = {a.position for a in s.agents}
    assert len(positions) == 2
    assert positions <= _corners(8)


def test_thousand_boards_are_connected():
    for seed in range(1000):
        s = generate_board(seed, 8)
        assert passage_path_exists(s.board, s.agents[0].position, s.agents[1].position), seed


def test_boards_are_symmetric_with_clear_corner_pockets():
    for seed in range(50):
        s = generate_board(seed, 8)
        assert np.array_equal(s.board, s.board.T)
        for r, c in _corners(8):
            assert s.board[r, c] == CellKind.PASSAGE


def test_hidden_powerups_sit_under_wood_only():
    s = generate_board(3, 8, GameConfig(powerup_fraction=1.0))
    hidden = s.powerups != 0
    assert hidden.any()
    assert (s.board[hidden] == CellKind.WOOD).all()
    assert hidden.sum() == (s.board == CellKind.WOOD).sum()


def test_six_by_six_variant_and_too_small_board():
    s = generate_board(1, 6)
    assert s.size == 6
    with pytest.raises(BoardGenerationError):
        generate_board(1, 5)


def test_state_arrays_are_read_only():
    s = generate_board(1, 8)
    with pytest.raises(ValueError):
        s.board[0, 0] = CellKind.RIGID


# ---------------------------------------------------------------------------
# blast
# ---------------------------------------------------------------------------

def test_blast_radius_two_in_open_board(open_state):
    cells = blast_cells(open_state, Bomb((4, 4), 10, 2, owner=0))
    assert cells == {(4, 4), (3, 4), (5, 4), (4, 3), (4, 5)}


def test_rigid_blocks_the_ray():
    rows = [
        "0.......",
        "........",
        "........",
        "....#...",
        "........",
        "........",
        "........",
        ".......1",
    ]
    s = from_ascii(rows)
    cells = blast_cells(s, Bomb((4, 4), 10, 3, owner=0))
    assert not any(c[1] == 4 and c[0] < 4 for c in cells)
    assert len(cells) == 1 + 2 * 3


def test_wood_burns_and_stops_the_ray():
    rows = [
        "0.......",
        "........",
        "........",
        "........",
        ".....+..",
        "........",
        "........",
        ".......1",
    ]
    s = from_ascii(rows)
    cells = blast_cells(s, Bomb((4, 4), 10, 3, owner=0))
    right = {c for c in cells if c[0] == 4 and c[1] > 4}
    assert right == {(4, 5)}


# ---------------------------------------------------------------------------
# step dynamics
# ---------------------------------------------------------------------------

def test_bomb_explodes_on_tenth_step_after_placement(open_state):
    res = step(open_state, (Action.BOMB, Action.STOP))
    state = res.next_state
    assert state.bombs[0].fuse_remaining == 10
    assert state.agents[0].ammo == 0
    for _ in range(9):
        res = step(state, STOP2)
        state = res.next_state
        assert not state.flames
    res = step(state, STOP2)
    assert res.next_state.flames
    assert len(res.explosions) == 1


def test_flames_vanish_after_two_steps():
    flame_state = open_board(8, flames=[Flame((3, 3), 2, owner=0)])
    s1 = step(flame_state, STOP2).next_state
    assert [f.life_remaining for f in s1.flames] == [1]
    s2 = step(s1, STOP2).next_state
    assert not s2.flames


def test_step_cap_is_a_tie(open_state):
    state = open_state
    for _ in range(799):
        state = step(state, STOP2).next_state
    assert not state.terminal
    res = step(state, STOP2)
    assert res.terminal
    assert res.outcome.is_tie
    assert res.rewards == (-1.0, -1.0)


def test_chain_reaction_explodes_both_bombs_on_one_step():
    bombs = [Bomb((2, 1), 1, 3, owner=0), Bomb((2, 3), 5, 2, owner=1)]
    s = open_board(6, agents=[AgentAttr((5, 0)), AgentAttr((5, 5))], bombs=bombs)
    res = step(s, STOP2)
    assert len(res.explosions) == 2
    assert not res.next_state.bombs
    assert (2, 4) in res.next_state.flame_cells()
    assert res.next_state.agents[0].ammo == 2
    assert res.next_state.agents[1].ammo == 2


def test_own_bomb_death_is_attributed_as_suicide(open_state):
    state = step(open_state, (Action.BOMB, Action.STOP)).next_state
    res = None
    for _ in range(10):
        res = step(state, STOP2)
        state = res.next_state
    assert res.terminal
    assert res.deaths == {0: 0}
    assert res.outcome.winner == 1
    assert res.rewards == (-1.0, 1.0)


def test_both_agents_dying_is_a_tie():
    bombs = [Bomb((0, 1), 1, 3, owner=0)]
    s = open_board(6, agents=[AgentAttr((0, 0)), AgentAttr((0, 2))], bombs=bombs)
    res = step(s, STOP2)
    assert res.outcome.is_tie
    assert res.rewards == (-1.0, -1.0)
    assert set(res.deaths) == {0, 1}


def test_moving_into_the_same_cell_blocks_both():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((2, 3))])
    nxt = step(s, (Action.RIGHT, Action.LEFT)).next_state
    assert nxt.agents[0].position == (2, 1)
    assert nxt.agents[1].position == (2, 3)


def test_swapping_agents_bounce_back():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((2, 2))])
    nxt = step(s, (Action.RIGHT, Action.LEFT)).next_state
    assert nxt.agents[0].position == (2, 1)
    assert nxt.agents[1].position == (2, 2)


def test_cannot_walk_into_rigid_wood_or_off_board():
    rows = [
        "0#....",
        "+.....",
        "......",
        "......",
        "......",
        ".....1",
    ]
    s = from_ascii(rows)
    assert step(s, (Action.RIGHT, Action.STOP)).next_state.agents[0].position == (0, 0)
    assert step(s, (Action.DOWN, Action.STOP)).next_state.agents[0].position == (0, 0)
    assert step(s, (Action.UP, Action.STOP)).next_state.agents[0].position == (0, 0)


def test_kick_slides_bomb():
    s = open_board(
        6,
        agents=[AgentAttr((2, 0), can_kick=True), AgentAttr((5, 5))],
        bombs=[Bomb((2, 1), 8, 2, owner=1)],
    )
    nxt = step(s, (Action.RIGHT, Action.STOP)).next_state
    assert nxt.agents[0].position == (2, 1)
    assert nxt.bombs[0].position == (2, 2)
    assert nxt.bombs[0].moving_dir == Action.RIGHT
    after = step(nxt, STOP2).next_state
    assert after.bombs[0].position == (2, 3)


def test_powerup_pickup():
    rows = [
        "0e....",
        "......",
        "......",
        "......",
        "......",
        ".....1",
    ]
    s = from_ascii(rows)
    nxt = step(s, (Action.RIGHT, Action.STOP)).next_state
    assert nxt.agents[0].ammo == 2
    assert nxt.powerups[0, 1] == 0


def test_flames_destroy_visible_powerups_and_reveal_hidden_ones():
    rows = [
        "..+...",
        ".e....",
        "......",
        "0.....",
        "......",
        ".....1",
    ]
    s = from_ascii(rows, bombs=[Bomb((0, 1), 1, 2, owner=0)])
    hidden = s.powerups.copy()
    hidden[0, 2] = PowerUp.KICK
    hidden.setflags(write=False)
    s = replace(s, powerups=hidden)
    nxt = step(s, STOP2).next_state
    assert nxt.board[0, 2] == CellKind.PASSAGE
    assert nxt.powerups[0, 2] == PowerUp.KICK
    assert nxt.powerups[1, 1] == 0


def test_walking_into_flame_kills():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((5, 5))], flames=[Flame((2, 2), 2, owner=1)])
    res = step(s, (Action.RIGHT, Action.STOP))
    assert res.deaths == {0: 1}
    assert res.outcome.winner == 1


@pytest.mark.parametrize("actions", [(6, 0), (-1, 0), (0,), (0, 1, 2), ("up", 0)])
def test_malformed_actions_are_rejected(open_state, actions):
    with pytest.raises(IllegalStepError):
        step(open_state, actions)


def test_terminal_state_cannot_be_stepped(open_state):
    state = step(open_state, (Action.BOMB, Action.STOP)).next_state
    for _ in range(10):
        state = step(state, STOP2).next_state
    assert state.terminal
    with pytest.raises(IllegalStepError):
        step(state, STOP2)


def test_step_does_not_mutate_its_input(open_state):
    before = open_state.fingerprint()
    step(open_state, (Action.BOMB, Action.RIGHT))
    assert open_state.fingerprint() == before


def test_seeded_episode_is_bit_identical():
    first = [s.fingerprint() for s in random_episode(11)]
    second = [s.fingerprint() for s in random_episode(11)]
    assert first == second


def test_observe_is_full_state_and_render_marks_agents(open_state):
    assert observe(open_state, 1) is open_state
    text = render(open_state)
    assert "0" in text.splitlines()[1]
    assert text.splitlines()[-2].endswith("1")


def test_walking_into_a_standing_opponent_is_blocked():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((2, 2))])
    nxt = step(s, (Action.RIGHT, Action.STOP)).next_state
    assert nxt.agents[0].position == (2, 1)
    assert nxt.agents[1].position == (2, 2)


def test_following_an_opponent_that_moves_away():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((2, 2))])
    nxt = step(s, (Action.RIGHT, Action.RIGHT)).next_state
    assert nxt.agents[0].position == (2, 2)
    assert nxt.agents[1].position == (2, 3)


def test_random_play_keeps_board_and_reward_invariants():
    for seed in range(300):
        rng = np.random.default_rng(seed)
        state = generate_board(seed, 8, GameConfig(max_steps=200))
        rigid = int((state.board == CellKind.RIGID).sum())
        wood = int((state.board == CellKind.WOOD).sum())
        total_reward = 0.0
        while not state.terminal:
            res = step(state, tuple(int(a) for a in rng.integers(len(Action), size=2)))
            nxt = res.next_state

            assert int((nxt.board == CellKind.RIGID).sum()) == rigid
            now_wood = int((nxt.board == CellKind.WOOD).sum())
            assert now_wood <= wood
            wood = now_wood

            living = [a.position for a in nxt.agents if a.alive]
            assert len(living) == len(set(living))
            bomb_cells = [b.position for b in nxt.bombs]
            assert len(bomb_cells) == len(set(bomb_cells))

            fresh = {f.position for f in nxt.flames if f.life_remaining == nxt.config.flame_life}
            for bomb, cells in res.explosions:
                assert cells == blast_cells(state, bomb)
                assert cells <= fresh

            total_reward += sum(res.rewards)
            state = nxt
        assert total_reward in (0.0, -2.0), seed
