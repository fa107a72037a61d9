from __future__ import annotations

import numpy as np
import pytest

from conftest import open_board
from core.environment import (
    MOVE_ACTIONS,
    Action,
    AgentAttr,
    Bomb,
    Flame,
    blast_cells,
    from_ascii,
    generate_board,
    step,
)
from core.opponents import (
    danger_map,
    dijkstra,
    in_line_of_fire,
    make_opponent,
    random_policy,
    rule_based_policy,
    static_policy,
)
from core.schemas import OpponentKind
from core.selftest import random_episode


def test_static_always_stops(rng):
    states = [s for seed in range(20) for s in random_episode(seed, max_steps=50)]
    assert len(states) >= 100
    assert all(static_policy(s, 1, rng) == Action.STOP for s in states)


def test_static_stops_next_to_a_flame():
    s = open_board(6, agents=[AgentAttr((2, 1)), AgentAttr((5, 5))], flames=[Flame((2, 2), 2)])
    assert static_policy(s, 0) == Action.STOP


def test_make_opponent():
    assert make_opponent(OpponentKind.STATIC) is static_policy
    policy = make_opponent(OpponentKind.RULE_BASED, safety_slack=1)
    assert policy.func is rule_based_policy
    assert policy.keywords == {"safety_slack": 1}
    s = generate_board(4, 8)
    assert policy(s, 0, np.random.default_rng(2)) == rule_based_policy(s, 0, np.random.default_rng(2), safety_slack=1)


def test_danger_map_chains_inherit_the_earlier_fuse():
    bombs = [Bomb((2, 1), 2, 3, owner=0), Bomb((2, 3), 9, 2, owner=1)]
    s = open_board(6, agents=[AgentAttr((5, 0)), AgentAttr((5, 5))], bombs=bombs)
    danger = danger_map(s)
    assert danger.explode_in[(2, 4)] == 2
    assert danger.explode_in[(1, 3)] == 2


def test_dijkstra_routes_around_rigid():
    rows = [
        "0#....",
        ".#....",
        "......",
        "......",
        "......",
        ".....1",
    ]
    s = from_ascii(rows)
    dist, _ = dijkstra(s, (0, 0), danger_map(s))
    assert dist[(0, 2)] == 6
    assert (0, 1) not in dist


def test_flees_own_fresh_bomb():
    s = open_board(
        8,
        agents=[AgentAttr((3, 3), ammo=0), AgentAttr((7, 7))],
        bombs=[Bomb((3, 3), 10, 2, owner=0)],
    )
    rng = np.random.default_rng(0)
    action = rule_based_policy(s, 0, rng)
    assert action in MOVE_ACTIONS
    # following the policy leaves the blast cross before the fuse runs out
    state = s
    for _ in range(3):
        state = step(state, (rule_based_policy(state, 0, rng), Action.STOP)).next_state
    assert state.agents[0].position not in blast_cells(s, s.bombs[0])


def test_bombs_lined_up_opponent():
    s = open_board(8, agents=[AgentAttr((3, 1)), AgentAttr((3, 3))])
    assert in_line_of_fire(s, (3, 1), (3, 3), 2)
    assert rule_based_policy(s, 0, np.random.default_rng(0)) == Action.BOMB


def test_line_of_fire_is_blocked_by_rigid():
    rows = [
        "........",
        "........",
        "........",
        ".0#1....",
        "........",
        "........",
        "........",
        "........",
    ]
    s = from_ascii(rows)
    assert not in_line_of_fire(s, (3, 1), (3, 3), 2)


def test_walks_to_nearest_powerup():
    rows = [
        "0..k....",
        "........",
        "........",
        "........",
        "........",
        "........",
        "........",
        ".......1",
    ]
    s = from_ascii(rows)
    assert rule_based_policy(s, 0, np.random.default_rng(0)) == Action.RIGHT


def test_empty_safe_board_never_bombs():
    s = open_board(8, agents=[AgentAttr((3, 3)), AgentAttr((7, 7))])
    for seed in range(50):
        a = rule_based_policy(s, 0, np.random.default_rng(seed))
        assert a in (*MOVE_ACTIONS, Action.STOP)


def test_never_steps_onto_a_flame():
    flames = [Flame(p, 2) for p in [(2, 3), (4, 3), (3, 2)]]
    s = open_board(8, agents=[AgentAttr((3, 3)), AgentAttr((7, 7))], flames=flames)
    for seed in range(50):
        a = rule_based_policy(s, 0, np.random.default_rng(seed))
        assert a in (Action.RIGHT, Action.STOP)


def test_policy_is_deterministic_given_rng_state():
    s = generate_board(9, 8)
    a = [rule_based_policy(s, 0, np.random.default_rng(5)) for _ in range(5)]
    assert len(set(a)) == 1


def test_random_policy_covers_all_actions(rng):
    s = generate_board(1, 8)
    seen = {random_policy(s, 0, rng) for _ in range(200)}
    assert seen == set(Action)


@pytest.mark.slow
def test_rule_based_rarely_kills_itself():
    suicides = 0
    episodes = 1000
    for seed in range(episodes):
        state = generate_board(seed, 8)
        rng = np.random.default_rng(seed)
        deaths = {}
        while not state.terminal:
            res = step(state, (rule_based_policy(state, 0, rng), Action.STOP))
            deaths, state = res.deaths, res.next_state
        suicides += int(deaths.get(0) == 0)
    assert suicides / episodes < 0.05


def test_safety_slack_decides_when_a_neighbouring_fuse_is_close():
    # bomb at (1, 4) covers (3, 4) with fuse 3; (3, 3) itself is outside the cross
    rows = ["." * 8 for _ in range(8)]
    rows[3] = ".....k.."
    s = from_ascii(
        rows,
        agents=[AgentAttr((3, 3)), AgentAttr((7, 7))],
        bombs=[Bomb((1, 4), 3, 3, owner=1)],
    )
    danger = danger_map(s)
    assert not danger.in_zone((3, 3))
    assert danger.explode_in[(3, 4)] == 3
    # fuse 3 > distance 1 + slack 0: the power-up run goes ahead
    assert rule_based_policy(s, 0, np.random.default_rng(0), safety_slack=0) == Action.RIGHT
    # fuse 3 <= distance 1 + slack 2: hold the safe cell
    assert rule_based_policy(s, 0, np.random.default_rng(0), safety_slack=2) == Action.STOP


def test_never_waits_inside_a_pending_zone():
    s = open_board(
        8,
        agents=[AgentAttr((3, 3)), AgentAttr((7, 7))],
        bombs=[Bomb((3, 1), 9, 3, owner=1)],
    )
    assert danger_map(s).in_zone((3, 3))
    assert rule_based_policy(s, 0, np.random.default_rng(0), safety_slack=0) in MOVE_ACTIONS
