# core/schemas.py
from __future__ import annotations

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class OpponentKind(str, Enum):
    STATIC = "static"
    RULE_BASED = "rule_based"


class RolloutPolicy(str, Enum):
    UNIFORM_RANDOM = "uniform_random"
    POLICY_HEAD = "policy_head"


class WorkerKind(str, Enum):
    MODEL_FREE = "model_free"
    DEMONSTRATOR = "demonstrator"


class GameConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    board_size: int = Field(default=8, ge=6)
    max_steps: int = Field(default=800, ge=1)
    rigid_fraction: float = Field(default=0.15, ge=0.0, le=0.6)
    wood_fraction: float = Field(default=0.35, ge=0.0, le=0.8)
    powerup_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    bomb_life: int = Field(default=10, ge=1, le=10)
    flame_life: int = Field(default=2, ge=1, le=2)
    initial_ammo: int = Field(default=1, ge=0)
    initial_blast_radius: int = Field(default=2, ge=2)
    max_generation_retries: int = Field(default=20, ge=1)


class SearchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rollout_budget: int = Field(default=75, ge=1)
    exploration_c: float = Field(default=math.sqrt(2.0), ge=0.0)
    max_tree_depth: int = Field(default=25, ge=1)
    # bomb_life + flame_life: a bomb dropped at the leaf still resolves inside the rollout
    rollout_depth_limit: int = Field(default=12, ge=0)
    rollout_policy: RolloutPolicy = RolloutPolicy.UNIFORM_RANDOM


class LossSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    value_weight: float = Field(default=0.5, ge=0.0)
    policy_weight: float = Field(default=1.0, ge=0.0)
    entropy_weight: float = Field(default=0.01, ge=0.0)
    pi_weight: float = Field(default=1.0, ge=0.0)
    gamma: float = Field(default=0.999, ge=0.0, le=1.0)
    # None disables clipping (gradient checks use the raw gradient)
    grad_clip_norm: Optional[float] = Field(default=40.0, gt=0.0)


class AdamConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-4, gt=0.0)
    eps: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=1e-5, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)


class ExperimentConfig(BaseModel):
    """Flat experiment description; every field is a valid config-file key."""

    model_config = ConfigDict(extra="forbid")

    # Matchup + board
    opponent: OpponentKind = OpponentKind.STATIC
    board_size: int = Field(default=8, ge=6)
    max_steps: int = Field(default=800, ge=1)
    powerup_fraction: float = Field(default=0.5, ge=0.0, le=1.0)

    # Workers
    num_workers: int = Field(default=24, ge=1)
    num_demonstrators: int = Field(default=0, ge=0)
    t_max: int = Field(default=20, ge=1)

    # Demonstrator search
    rollout_budget: int = Field(default=75, ge=1)
    rollout_policy: RolloutPolicy = RolloutPolicy.UNIFORM_RANDOM
    rollout_depth_limit: int = Field(default=12, ge=0)
    max_tree_depth: int = Field(default=25, ge=1)
    exploration_c: float = Field(default=math.sqrt(2.0), ge=0.0)

    # Rule-based opponent: flee when a neighbouring fuse is within distance + slack
    safety_slack: int = Field(default=2, ge=0)

    # Budgets
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3])
    episode_budget: Optional[int] = Field(default=20000, ge=1)
    wall_clock_budget_s: Optional[float] = Field(default=None, gt=0.0)

    # Loss
    value_weight: float = Field(default=0.5, ge=0.0)
    policy_weight: float = Field(default=1.0, ge=0.0)
    entropy_weight: float = Field(default=0.01, ge=0.0)
    pi_weight: float = Field(default=1.0, ge=0.0)
    gamma: float = Field(default=0.999, ge=0.0, le=1.0)
    grad_clip_norm: Optional[float] = Field(default=40.0, gt=0.0)

    # Optimizer
    learning_rate: float = Field(default=1e-4, gt=0.0)
    adam_eps: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=1e-5, ge=0.0)

    # Output
    checkpoint_every: int = Field(default=1000, ge=1)
    curve_bucket: int = Field(default=100, ge=1)
    jitter_s: float = Field(default=0.0, ge=0.0)
    # off makes single-worker metric files byte-identical across runs
    log_wall_clock: bool = True

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds must list at least one seed")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @model_validator(mode="after")
    def _check_budgets(self) -> "ExperimentConfig":
        if self.num_demonstrators >= self.num_workers:
            raise ValueError(
                f"num_demonstrators ({self.num_demonstrators}) must be smaller than "
                f"num_workers ({self.num_workers})"
            )
        if self.episode_budget is None and self.wall_clock_budget_s is None:
            raise ValueError("set episode_budget or wall_clock_budget_s")
        return self

    def game_config(self) -> GameConfig:
        return GameConfig(
            board_size=self.board_size,
            max_steps=self.max_steps,
            powerup_fraction=self.powerup_fraction,
        )

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            rollout_budget=self.rollout_budget,
            exploration_c=self.exploration_c,
            max_tree_depth=self.max_tree_depth,
            rollout_depth_limit=self.rollout_depth_limit,
            rollout_policy=self.rollout_policy,
        )

    def loss_spec(self) -> LossSpec:
        return LossSpec(
            value_weight=self.value_weight,
            policy_weight=self.policy_weight,
            entropy_weight=self.entropy_weight,
            pi_weight=self.pi_weight,
            gamma=self.gamma,
            grad_clip_norm=self.grad_clip_norm,
        )

    def adam_config(self) -> AdamConfig:
        return AdamConfig(
            learning_rate=self.learning_rate,
            eps=self.adam_eps,
            weight_decay=self.weight_decay,
        )


class EvalConfig(BaseModel):
    """One evaluation tournament: agent spec vs an opponent on fresh boards."""

    model_config = ConfigDict(extra="forbid")

    agent: str = "mcts75"
    opponent: OpponentKind = OpponentKind.STATIC
    games: int = Field(default=200, ge=1)
    seed: int = Field(default=1, ge=0)
    board_size: int = Field(default=8, ge=6)
    max_steps: int = Field(default=800, ge=1)
    powerup_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    exploration_c: float = Field(default=math.sqrt(2.0), ge=0.0)
    rollout_depth_limit: int = Field(default=12, ge=0)
    max_tree_depth: int = Field(default=25, ge=1)
    safety_slack: int = Field(default=2, ge=0)
    workers: int = Field(default=1, ge=1)
    save_replays: bool = False

    def game_config(self) -> GameConfig:
        return GameConfig(
            board_size=self.board_size,
            max_steps=self.max_steps,
            powerup_fraction=self.powerup_fraction,
        )

    def search_config(self, rollout_budget: int) -> SearchConfig:
        return SearchConfig(
            rollout_budget=rollout_budget,
            exploration_c=self.exploration_c,
            max_tree_depth=self.max_tree_depth,
            rollout_depth_limit=self.rollout_depth_limit,
        )


class EvalReport(BaseModel):
    agent: str
    opponent: OpponentKind
    games: int = Field(ge=1)
    wins: int = Field(ge=0)
    losses: int = Field(ge=0)
    ties: int = Field(ge=0)
    suicides: int = Field(default=0, ge=0)
    mean_reward: float
    seed: int = 0

    @model_validator(mode="after")
    def _check_identity(self) -> "EvalReport":
        if self.wins + self.losses + self.ties != self.games:
            raise ValueError("wins + losses + ties must equal games")
        if self.suicides > self.losses:
            raise ValueError("suicides are a subset of losses")
        expected = (self.wins - self.losses - self.ties) / self.games
        if self.mean_reward != expected:
            raise ValueError(f"mean_reward must be {expected}, got {self.mean_reward}")
        return self

    @classmethod
    def from_counts(
        cls,
        *,
        agent: str,
        opponent: OpponentKind,
        wins: int,
        losses: int,
        ties: int,
        suicides: int = 0,
        seed: int = 0,
    ) -> "EvalReport":
        games = wins + losses + ties
        return cls(
            agent=agent,
            opponent=opponent,
            games=games,
            wins=wins,
            losses=losses,
            ties=ties,
            suicides=suicides,
            mean_reward=(wins - losses - ties) / games,
            seed=seed,
        )

    @property
    def win_rate(self) -> float:
        return self.wins / self.games

    @property
    def loss_rate(self) -> float:
        return self.losses / self.games

    @property
    def tie_rate(self) -> float:
        return self.ties / self.games
