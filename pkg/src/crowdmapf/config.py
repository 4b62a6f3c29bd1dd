"""Run configuration: every tunable constant in one place, loadable from YAML.

Only keys present in the file override defaults, so a config may be as small
as `train: {episodes: 500}`. Unknown keys raise instead of being ignored.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .curriculum import (
    BOOST_CAPACITY,
    BOOST_PROBABILITY,
    DEMO_PROBABILITY,
    IMPROVEMENT_TOL,
    INITIAL_PLATEAU_WINDOW,
    LEVEL_EPISODE_CAP,
    REWARD_MA_WINDOW,
)
from .policy import Hyper
from .reward import BLOCKING_DETOUR, CROWD_WINDOW, RewardConstants


@dataclass(frozen=True)
class WorldConfig:
    alpha: float = 4.0
    beta: float = 5.0


@dataclass(frozen=True)
class RewardConfig:
    r_move: float = -0.3
    r_collision: float = -2.0
    r_idle_off_goal: float = -0.5
    r_idle_on_goal: float = 0.0
    r_team: float = 20.0
    r_crowd_out: float = 0.3
    r_crowd_in: float = -0.3
    r_blocking: float = -2.0
    crowd_window: int = CROWD_WINDOW
    blocking_detour: int = BLOCKING_DETOUR

    def constants(self) -> RewardConstants:
        return RewardConstants(
            r_move=self.r_move,
            r_collision=self.r_collision,
            r_idle_off_goal=self.r_idle_off_goal,
            r_idle_on_goal=self.r_idle_on_goal,
            r_team=self.r_team,
            r_crowd_out=self.r_crowd_out,
            r_crowd_in=self.r_crowd_in,
            r_blocking=self.r_blocking,
        )


@dataclass(frozen=True)
class PolicyConfig:
    gamma: float = 0.95
    entropy_coef: float = 0.01
    learning_rate: float = 2e-4
    clip_norm: float = 40.0
    value_weight: float = 0.5
    blocking_weight: float = 0.5
    on_goal_weight: float = 0.5
    bc_weight: float = 1.0

    def hyper(self) -> Hyper:
        return Hyper(**asdict(self))


@dataclass(frozen=True)
class CurriculumConfig:
    initial_plateau_window: int = INITIAL_PLATEAU_WINDOW
    improvement_tol: float = IMPROVEMENT_TOL
    reward_ma_window: int = REWARD_MA_WINDOW
    level_episode_cap: int = LEVEL_EPISODE_CAP
    boost_probability: float = BOOST_PROBABILITY
    boost_capacity: int = BOOST_CAPACITY
    demo_probability: float = DEMO_PROBABILITY


@dataclass(frozen=True)
class ExpertConfig:
    od_agent_cap: int = 4
    od_max_nodes: int = 20_000
    od_timeout_ms: float = 100.0
    prioritized_horizon_factor: int = 4


@dataclass(frozen=True)
class TrainSection:
    episodes: int = 10_000
    workers: int = 1
    seed: int = 0
    checkpoint_interval: int = 1000
    log_interval: int = 500
    # Pinning: hold the curriculum at a fixed level and/or fix world shape.
    pin_level: Optional[int] = None
    fixed_size: Optional[int] = None
    fixed_density: Optional[float] = None
    fixed_agents: Optional[int] = None


@dataclass(frozen=True)
class EvalSection:
    size: int = 20
    n_envs: int = 100
    base_seed: int = 0
    agent_counts: tuple = (1, 2, 4, 8)
    densities: tuple = (0.0, 0.1, 0.2, 0.3)
    greedy: bool = True


@dataclass(frozen=True)
class TrainConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        def conv(x):
            if isinstance(x, tuple):
                return [conv(v) for v in x]
            if isinstance(x, dict):
                return {k: conv(v) for k, v in x.items()}
            return x

        return conv(asdict(self))


_SECTIONS = {
    "world": WorldConfig,
    "reward": RewardConfig,
    "policy": PolicyConfig,
    "curriculum": CurriculumConfig,
    "expert": ExpertConfig,
    "train": TrainSection,
    "eval": EvalSection,
}


def _build_section(cls, data: dict):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        coerced[f.name] = v
    return cls(**coerced)


def config_from_dict(data: dict) -> TrainConfig:
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section)
    return TrainConfig(**kwargs)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def save_config(path, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
