"""Boosted curriculum: level-dependent environment sampling, plateau-driven
level advancement, and re-sampling of previously failed environments.

The level index sigma widens the obstacle-density and world-size sampling
ranges. A level advances when the 100-episode moving average of episode
reward has not improved by more than a small tolerance for `plateau_window`
consecutive episodes, or after a hard per-level episode cap. Failed episode
specs are kept in a bounded FIFO and re-sampled with fixed probability.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .world import WorldSpec

AGENT_CHOICES = (1, 2, 4, 8)

DENSITY_LO_CAP = 0.2
DENSITY_HI_CAP = 0.6
SIZE_LO_CAP = 40
SIZE_HI_CAP = 120

INITIAL_PLATEAU_WINDOW = 1000
IMPROVEMENT_TOL = 0.01
REWARD_MA_WINDOW = 100
LEVEL_EPISODE_CAP = 50_000
BOOST_PROBABILITY = 0.25
BOOST_CAPACITY = 512
DEMO_PROBABILITY = 0.5


@dataclass(frozen=True)
class LevelRanges:
    d_lo: float
    d_hi: float
    s_lo: int
    s_hi: int


def level_ranges(sigma: int) -> LevelRanges:
    """Density range (min(0.05*s, 0.2), min(0.1 + 0.1*s, 0.6)) and size range
    (min(10 + 5*s, 40), min(40 + 5*s, 120)) for level sigma."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return LevelRanges(
        d_lo=min(0.05 * sigma, DENSITY_LO_CAP),
        d_hi=min(0.1 + 0.1 * sigma, DENSITY_HI_CAP),
        s_lo=min(10 + 5 * sigma, SIZE_LO_CAP),
        s_hi=min(40 + 5 * sigma, SIZE_HI_CAP),
    )


@dataclass
class CurriculumState:
    """Mutable scheduler state; owned by the orchestrator, one per run."""

    sigma: int = 0
    plateau_window: int = INITIAL_PLATEAU_WINDOW
    episodes_at_level: int = 0
    best_avg_reward: float = -math.inf
    episodes_since_improvement: int = 0
    boost_probability: float = BOOST_PROBABILITY
    boost_capacity: int = BOOST_CAPACITY
    ma_window: int = REWARD_MA_WINDOW
    boost_buffer: deque = field(default_factory=lambda: deque(maxlen=BOOST_CAPACITY))
    reward_window: deque = field(default_factory=lambda: deque(maxlen=REWARD_MA_WINDOW))
    total_episodes: int = 0

    def __post_init__(self):
        if self.boost_buffer.maxlen != self.boost_capacity:
            self.boost_buffer = deque(self.boost_buffer, maxlen=self.boost_capacity)
        if self.reward_window.maxlen != self.ma_window:
            self.reward_window = deque(self.reward_window, maxlen=self.ma_window)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "plateau_window": self.plateau_window,
            "episodes_at_level": self.episodes_at_level,
            "best_avg_reward": (
                None if math.isinf(self.best_avg_reward) else self.best_avg_reward
            ),
            "episodes_since_improvement": self.episodes_since_improvement,
            "boost_probability": self.boost_probability,
            "boost_capacity": self.boost_capacity,
            "ma_window": self.ma_window,
            "boost_buffer": [
                [s.size, s.obstacle_density, s.num_agents, s.seed]
                for s in self.boost_buffer
            ],
            "reward_window": list(self.reward_window),
            "total_episodes": self.total_episodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumState":
        state = cls(
            sigma=d["sigma"],
            plateau_window=d["plateau_window"],
            episodes_at_level=d["episodes_at_level"],
            best_avg_reward=(
                -math.inf if d["best_avg_reward"] is None else d["best_avg_reward"]
            ),
            episodes_since_improvement=d["episodes_since_improvement"],
            boost_probability=d["boost_probability"],
            boost_capacity=d["boost_capacity"],
            ma_window=d.get("ma_window", REWARD_MA_WINDOW),
            total_episodes=d.get("total_episodes", 0),
        )
        for s in d["boost_buffer"]:
            state.boost_buffer.append(
                WorldSpec(size=s[0], obstacle_density=s[1], num_agents=s[2], seed=s[3])
            )
        state.reward_window.extend(d["reward_window"])
        return state


def sample_spec(
    state: CurriculumState,
    rng: np.random.Generator,
    fixed_size: int | None = None,
    fixed_density: float | None = None,
    fixed_agents: int | None = None,
) -> WorldSpec:
    """Draw the next episode's environment spec.

    With probability boost_probability (and a non-empty buffer) a previously
    failed spec is returned unchanged, seed included, so the exact same world
    is retried. Otherwise size, density, and agent count are drawn from the
    current level's ranges, with optional fixed overrides for pinned
    training configurations.
    """
    if rng.random() < state.boost_probability and state.boost_buffer:
        return state.boost_buffer[int(rng.integers(len(state.boost_buffer)))]
    ranges = level_ranges(state.sigma)
    size = (
        int(rng.integers(ranges.s_lo, ranges.s_hi + 1))
        if fixed_size is None
        else fixed_size
    )
    density = (
        float(rng.uniform(ranges.d_lo, ranges.d_hi))
        if fixed_density is None
        else fixed_density
    )
    agents = (
        AGENT_CHOICES[int(rng.integers(len(AGENT_CHOICES)))]
        if fixed_agents is None
        else fixed_agents
    )
    seed = int(rng.integers(2**63))
    return WorldSpec(size=size, obstacle_density=density, num_agents=agents, seed=seed)


def observe_episode(
    state: CurriculumState,
    total_reward: float,
    success: bool,
    spec: WorldSpec,
    allow_advance: bool = True,
    improvement_tol: float = IMPROVEMENT_TOL,
    level_episode_cap: int = LEVEL_EPISODE_CAP,
) -> CurriculumState:
    """Record an episode's outcome and advance the level on plateau or cap.

    Failed episodes push their spec into the boost buffer (oldest evicted at
    capacity). `allow_advance=False` keeps all bookkeeping but pins sigma,
    for fixed-level training runs.
    """
    state.total_episodes += 1
    state.episodes_at_level += 1
    state.reward_window.append(float(total_reward))
    avg = sum(state.reward_window) / len(state.reward_window)
    if avg > state.best_avg_reward + improvement_tol:
        state.best_avg_reward = avg
        state.episodes_since_improvement = 0
    else:
        state.episodes_since_improvement += 1

    if allow_advance and (
        state.episodes_since_improvement >= state.plateau_window
        or state.episodes_at_level >= level_episode_cap
    ):
        state.sigma += 1
        state.plateau_window = math.ceil(1.5 * state.plateau_window)
        state.episodes_at_level = 0
        state.episodes_since_improvement = 0
        state.best_avg_reward = -math.inf
        state.reward_window.clear()

    if not success:
        state.boost_buffer.append(spec)
    return state


def demo_mode(rng: np.random.Generator, demo_probability: float = DEMO_PROBABILITY) -> bool:
    """Bernoulli switch between exploration and expert demonstration."""
    if not (0.0 <= demo_probability <= 1.0):
        raise ValueError("demo_probability must lie in [0, 1]")
    return bool(rng.random() < demo_probability)
