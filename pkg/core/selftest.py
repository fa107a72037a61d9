# core/selftest.py
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.environment import (
    NUM_ACTIONS,
    Action,
    GameState,
    from_ascii,
    generate_board,
    passage_path_exists,
    step,
)
from core.features import encode
from core.losses import (
    Trajectory,
    a3c_loss,
    compute_advantages,
    planner_imitation_loss,
)
from core.network import NetParams, _as_batch, _forward, init_params, loss_and_grad, total_loss
from core.schemas import GameConfig, LossSpec

logger = logging.getLogger("pi_a3c.selftest")

LN6 = math.log(6.0)
FD_EPS = 1e-4
FD_TOLERANCE = 1e-3
# relative errors are taken against max(|analytic|, |numeric|, floor)
FD_FLOOR = 1e-4

OPEN_6 = [
    "0.....",
    "......",
    "......",
    "......",
    "......",
    ".....1",
]


class SelftestError(AssertionError):
    pass


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise SelftestError(message)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def check_bomb_fuse() -> None:
    state = from_ascii(OPEN_6)
    res = step(state, (Action.BOMB, Action.STOP))
    state = res.next_state
    _expect(len(state.bombs) == 1, "bomb was not placed")
    for k in range(1, 10):
        res = step(state, (Action.STOP, Action.STOP))
        _expect(not res.explosions, f"bomb exploded {k} steps after placement")
        state = res.next_state
    res = step(state, (Action.STOP, Action.STOP))
    _expect(len(res.explosions) == 1, "bomb did not explode 10 steps after placement")


def check_flame_life() -> None:
    state = from_ascii(OPEN_6)
    state = step(state, (Action.BOMB, Action.STOP)).next_state
    state = step(state, (Action.DOWN, Action.STOP)).next_state
    state = step(state, (Action.DOWN, Action.STOP)).next_state
    res = None
    for _ in range(8):
        res = step(state, (Action.STOP, Action.STOP))
        state = res.next_state
    _expect(res is not None and len(res.explosions) == 1, "expected the explosion on the 10th step")
    _expect(len(state.flames) > 0, "no flames right after the explosion")
    state = step(state, (Action.STOP, Action.STOP)).next_state
    _expect(len(state.flames) > 0, "flames vanished after one step")
    state = step(state, (Action.STOP, Action.STOP)).next_state
    _expect(len(state.flames) == 0, "flames outlived two steps")
    _expect(not state.terminal, "agent 0 should have escaped its own bomb")


def check_step_cap() -> None:
    state = from_ascii(OPEN_6)
    cap = state.config.max_steps
    for _ in range(cap - 1):
        state = step(state, (Action.STOP, Action.STOP)).next_state
    _expect(not state.terminal, f"terminal before step {cap}")
    res = step(state, (Action.STOP, Action.STOP))
    _expect(res.terminal and res.outcome is not None and res.outcome.is_tie, "step cap is not a tie")
    _expect(res.rewards == (-1.0, -1.0), f"tie rewards are {res.rewards}")


def check_connectivity(boards: int = 200, size: int = 8) -> None:
    for seed in range(boards):
        s = generate_board(seed, size)
        a, b = s.agents[0].position, s.agents[1].position
        _expect(passage_path_exists(s.board, a, b), f"seed {seed}: agents are walled off")


def random_episode(seed: int, size: int = 8, max_steps: int = 200) -> List[GameState]:
    cfg = GameConfig(board_size=size, max_steps=max_steps)
    rng = np.random.default_rng(seed)
    state = generate_board(seed, size, cfg)
    states = [state]
    while not state.terminal:
        state = step(state, tuple(int(a) for a in rng.integers(NUM_ACTIONS, size=2))).next_state
        states.append(state)
    return states


def check_determinism(seed: int = 7) -> None:
    first = [s.fingerprint() for s in random_episode(seed)]
    second = [s.fingerprint() for s in random_episode(seed)]
    _expect(first == second, "seeded episode is not reproducible")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def check_loss_values() -> None:
    uniform = np.full((1, NUM_ACTIONS), 1.0 / NUM_ACTIONS)
    traj = Trajectory(
        features=np.zeros((1, 1)),
        actions=np.array([0]),
        rewards=np.array([0.0]),
        values=np.array([0.0]),
        policies=uniform,
        bootstrap_value=0.0,
        terminal=True,
    )
    comps = a3c_loss(traj, np.zeros(1), LossSpec())
    _expect(abs(comps.entropy - LN6) < 1e-6, f"uniform entropy {comps.entropy} != ln 6")

    planner = np.eye(NUM_ACTIONS)[[3]]
    l_pi = planner_imitation_loss(planner, uniform)
    _expect(abs(l_pi - LN6) < 1e-6, f"uniform imitation loss {l_pi} != ln 6")

    two = Trajectory(
        features=np.zeros((2, 1)),
        actions=np.array([0, 0]),
        rewards=np.array([0.0, 1.0]),
        values=np.array([0.2, 0.0]),
        policies=np.full((2, NUM_ACTIONS), 1.0 / NUM_ACTIONS),
        bootstrap_value=0.5,
        terminal=False,
    )
    adv = compute_advantages(two, 0.999)
    expected = 0.999 * 1.0 + 0.999**2 * 0.5 - 0.2
    _expect(abs(adv[0] - expected) < 1e-9, f"advantage {adv[0]!r} != {expected!r}")


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    checked: int = 0
    skipped_kinks: int = 0
    max_rel_error: float = 0.0
    worst: Optional[Tuple[str, int]] = None
    per_layer: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_error < FD_TOLERANCE


def _relu_pattern(params: NetParams, x: np.ndarray) -> Tuple[np.ndarray, ...]:
    batch, _ = _as_batch(params, x)
    _, _, cache = _forward(params, batch)
    masks = [pre > 0 for _, pre in cache["convs"]]  # type: ignore[union-attr]
    masks.append(cache["dense_pre"] > 0)  # type: ignore[operator]
    return tuple(masks)


def gradcheck_trajectory(seed: int, board_size: int = 6, steps: int = 3, demonstrator: bool = False) -> Tuple[NetParams, Trajectory]:
    """Perturbed initial parameters plus a short trajectory of real encoded states."""
    rng = np.random.default_rng(seed)
    params = init_params(seed, board_size)
    # nonzero biases keep dead units off the ReLU kink
    params = NetParams(flat=params.flat + rng.normal(0.0, 0.02, params.flat.shape), board_size=board_size)
    states = random_episode(seed, board_size, max_steps=steps + 1)[:steps]
    while len(states) < steps:
        states.append(states[-1])
    feats = np.stack([encode(s, 0) for s in states]).astype(np.float64)
    policies = rng.dirichlet(np.ones(NUM_ACTIONS), size=steps)
    planner = np.eye(NUM_ACTIONS)[rng.integers(NUM_ACTIONS, size=steps)] if demonstrator else None
    traj = Trajectory(
        features=feats,
        actions=rng.integers(NUM_ACTIONS, size=steps),
        rewards=rng.choice([-1.0, 0.0, 1.0], size=steps),
        values=rng.normal(0.0, 0.5, size=steps),
        policies=policies,
        bootstrap_value=float(rng.normal(0.0, 0.5)),
        terminal=False,
        demonstrator=demonstrator,
        planner_actions=planner,
    )
    return params, traj


def check_gradients(
    params: NetParams,
    traj: Trajectory,
    spec: LossSpec,
    coords_per_layer: int,
    rng: np.random.Generator,
    *,
    layers: Optional[Sequence[str]] = None,
) -> GradCheckResult:
    """
    Central differences against the analytic gradient on random coordinates
    of each parameter tensor. Coordinates whose perturbation flips any ReLU
    are counted as kinks and not compared.
    """
    spec = spec.model_copy(update={"grad_clip_norm": None})
    _, grads = loss_and_grad(params, traj, spec)
    result = GradCheckResult()
    base_pattern = _relu_pattern(params, traj.features)
    names = layers or [name for name, _ in params.table.entries]
    for name in names:
        lo, hi = params.table.offsets[name]
        picks = rng.choice(hi - lo, size=min(coords_per_layer, hi - lo), replace=False)
        layer_max = 0.0
        for k in picks:
            idx = lo + int(k)
            plus = params.flat.copy()
            minus = params.flat.copy()
            plus[idx] += FD_EPS
            minus[idx] -= FD_EPS
            p_plus = NetParams(flat=plus, board_size=params.board_size)
            p_minus = NetParams(flat=minus, board_size=params.board_size)
            if not all(
                np.array_equal(a, b) and np.array_equal(a, c)
                for a, b, c in zip(base_pattern, _relu_pattern(p_plus, traj.features), _relu_pattern(p_minus, traj.features))
            ):
                result.skipped_kinks += 1
                continue
            numeric = (total_loss(p_plus, traj, spec) - total_loss(p_minus, traj, spec)) / (2 * FD_EPS)
            analytic = float(grads.flat[idx])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_FLOOR)
            result.checked += 1
            layer_max = max(layer_max, rel)
            if rel > result.max_rel_error:
                result.max_rel_error = rel
                result.worst = (name, int(k))
        result.per_layer[name] = layer_max
    return result


def check_gradient_suite(seed: int = 0, coords_per_layer: int = 16) -> None:
    rng = np.random.default_rng([seed, 99])
    for demonstrator in (False, True):
        params, traj = gradcheck_trajectory(seed, demonstrator=demonstrator)
        res = check_gradients(params, traj, LossSpec(), coords_per_layer, rng)
        label = "pi-a3c" if demonstrator else "a3c"
        _expect(res.checked >= coords_per_layer, f"{label}: too few coordinates checked ({res.checked})")
        _expect(res.ok, f"{label}: relative error {res.max_rel_error:.2e} at {res.worst}")


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("bomb fuse", check_bomb_fuse),
    ("flame life", check_flame_life),
    ("step cap", check_step_cap),
    ("board connectivity", check_connectivity),
    ("determinism", check_determinism),
    ("loss values", check_loss_values),
    ("gradients", check_gradient_suite),
]


def run_selftest(echo: Callable[[str], None] = print) -> int:
    """Run every check; 0 when all pass, 1 otherwise."""
    failures = 0
    for name, fn in CHECKS:
        started = time.perf_counter()
        try:
            fn()
        except Exception as e:
            failures += 1
            logger.debug("selftest check %s failed", name, exc_info=True)
            echo(f"FAIL  {name}: {e}")
        else:
            echo(f"ok    {name} ({time.perf_counter() - started:.2f}s)")
    echo(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 1 if failures else 0
