# core/losses.py
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core.environment import NUM_ACTIONS
from core.schemas import LossSpec

logger = logging.getLogger("pi_a3c.losses")

LOG_CLAMP = 1e-10


class LossComputationError(RuntimeError):
    def __init__(self, component: str, message: str) -> None:
        super().__init__(f"{component}: {message}")
        self.component = component


@dataclass
class Trajectory:
    """
    One update segment of at most t_max steps. values/policies are the outputs
    of the parameter snapshot the worker acted with.
    """

    features: np.ndarray  # (N, 28, S, S)
    actions: np.ndarray  # (N,) executed actions
    rewards: np.ndarray  # (N,)
    values: np.ndarray  # (N,) V(s_t)
    policies: np.ndarray  # (N, 6)
    bootstrap_value: float  # V(s_{t+n}), 0 when terminal
    terminal: bool
    demonstrator: bool = False
    planner_actions: Optional[np.ndarray] = None  # (N, 6) one-hot
    worker_id: int = 0
    params_version: int = 0

    def __post_init__(self) -> None:
        n = len(self.actions)
        if n < 1:
            raise ValueError("trajectory must hold at least one step")
        for name in ("features", "rewards", "values", "policies"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.demonstrator != (self.planner_actions is not None):
            raise ValueError("planner_actions must be present exactly for demonstrator trajectories")
        if self.planner_actions is not None and self.planner_actions.shape != (n, NUM_ACTIONS):
            raise ValueError("planner_actions must be one-hot rows aligned with the steps")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ValueError("terminal trajectories bootstrap from 0")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class LossComponents:
    policy_loss: float
    value_loss: float
    entropy: float
    imitation_loss: Optional[float]
    total: float
    imitation_clamped: bool = False

    def to_dict(self) -> Dict[str, Optional[float]]:
        d = asdict(self)
        d.pop("imitation_clamped")
        return d


def n_step_returns(rewards: np.ndarray, bootstrap_value: float, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards), dtype=np.float64)
    acc = float(bootstrap_value)
    for t in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc
        out[t] = acc
    return out


def compute_advantages(traj: Trajectory, gamma: float) -> np.ndarray:
    """A_t = sum_k gamma^k r_{t+k} + gamma^n V(s_{t+n}) - V(s_t), n shrinking to the segment end."""
    returns = n_step_returns(traj.rewards, traj.bootstrap_value, gamma)
    return returns - np.asarray(traj.values, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _imitation(planner_actions: np.ndarray, probs: np.ndarray) -> Tuple[float, bool, np.ndarray]:
    picked = (planner_actions * probs).sum(axis=1)
    clamped = bool((picked < LOG_CLAMP).any())
    loss = float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())
    return loss, clamped, picked


def planner_imitation_loss(planner_actions: np.ndarray, policy_probs: np.ndarray) -> float:
    """Mean cross-entropy between the planner's one-hot actions and the policy."""
    planner_actions = np.asarray(planner_actions, dtype=np.float64)
    policy_probs = np.asarray(policy_probs, dtype=np.float64)
    if len(planner_actions) < 1 or planner_actions.shape != policy_probs.shape:
        raise LossComputationError("imitation", "planner actions and policies must be aligned and nonempty")
    loss, clamped, _ = _imitation(planner_actions, policy_probs)
    if clamped:
        logger.warning("policy assigns ~0 probability to a planner action; log clamped at %g", LOG_CLAMP)
    return loss


def _check_finite(comps: LossComponents) -> None:
    for name in ("policy_loss", "value_loss", "entropy", "imitation_loss", "total"):
        v = getattr(comps, name)
        if v is not None and not math.isfinite(v):
            raise LossComputationError(name, f"non-finite value {v}")


def head_gradients(
    traj: Trajectory,
    advantages: np.ndarray,
    spec: LossSpec,
    logits: np.ndarray,
    values: np.ndarray,
    *,
    imitation: bool,
) -> Tuple[LossComponents, np.ndarray, np.ndarray]:
    """
    Loss components plus the exact gradient of the total loss w.r.t. the
    policy logits (N, 6) and the value outputs (N,). Advantages and returns
    are constants.
    """
    n = len(traj)
    if len(advantages) != n or logits.shape != (n, NUM_ACTIONS) or len(values) != n:
        raise LossComputationError("inputs", "advantages, logits and values must align with the trajectory")
    if imitation and traj.planner_actions is None:
        raise LossComputationError("imitation", "demonstrator loss requires planner_actions")

    logp = _log_softmax(logits)
    probs = np.exp(logp)
    onehot = np.eye(NUM_ACTIONS)[np.asarray(traj.actions, dtype=np.int64)]
    adv = np.asarray(advantages, dtype=np.float64)
    returns = adv + np.asarray(traj.values, dtype=np.float64)

    policy_loss = float(-(adv * (onehot * logp).sum(axis=1)).mean())
    residual = returns - values
    value_loss = float((residual ** 2).mean())
    ent = -(probs * logp).sum(axis=1)
    entropy = float(ent.mean())

    total = spec.value_weight * value_loss + spec.policy_weight * policy_loss - spec.entropy_weight * entropy

    dlogits = spec.policy_weight * (adv[:, None] / n) * (probs - onehot)
    # d(-lambda_H * mean H)/dz = lambda_H / N * p (log p + H)
    dlogits += spec.entropy_weight / n * probs * (logp + ent[:, None])
    dvalues = spec.value_weight * (-2.0 / n) * residual

    imitation_loss: Optional[float] = None
    clamped = False
    if imitation:
        planner = np.asarray(traj.planner_actions, dtype=np.float64)
        imitation_loss, clamped, picked = _imitation(planner, probs)
        total += spec.pi_weight * imitation_loss
        live = (picked >= LOG_CLAMP)[:, None]
        dlogits += spec.pi_weight / n * (probs - planner) * live
        if clamped:
            logger.warning("imitation log clamped for worker %s", traj.worker_id)

    comps = LossComponents(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        imitation_loss=imitation_loss,
        total=float(total),
        imitation_clamped=clamped,
    )
    _check_finite(comps)
    return comps, dlogits, dvalues


def a3c_loss(
    traj: Trajectory,
    advantages: np.ndarray,
    spec: LossSpec,
    logits: Optional[np.ndarray] = None,
    values: Optional[np.ndarray] = None,
) -> LossComponents:
    """Actor-critic loss; without logits/values the snapshot outputs stored in traj are used."""
    if logits is None:
        logits = np.log(np.maximum(np.asarray(traj.policies, dtype=np.float64), 1e-300))
    if values is None:
        values = np.asarray(traj.values, dtype=np.float64)
    comps, _, _ = head_gradients(traj, advantages, spec, logits, values, imitation=False)
    return comps


def pi_a3c_loss(
    traj: Trajectory,
    advantages: np.ndarray,
    spec: LossSpec,
    logits: Optional[np.ndarray] = None,
    values: Optional[np.ndarray] = None,
) -> LossComponents:
    """A3C loss plus pi_weight times the planner imitation loss."""
    if traj.planner_actions is None:
        raise LossComputationError("imitation", "demonstrator loss requires planner_actions")
    if logits is None:
        logits = np.log(np.maximum(np.asarray(traj.policies, dtype=np.float64), 1e-300))
    if values is None:
        values = np.asarray(traj.values, dtype=np.float64)
    comps, _, _ = head_gradients(traj, advantages, spec, logits, values, imitation=True)
    return comps
