"""Benchmark harness: seeded episode rollouts for policies, experts, and a
random baseline, plus the five aggregate metrics and report rendering.

Metric conventions (documented because the distinction matters):

* success_rate — percent of episodes where every agent reached its goal
  within the step limit;
* mean_makespan, mean_total_moves — averaged over successful episodes only
  and absent (rendered "-") when there are none;
* mean_collision_count — averaged over all episodes, failures included;
* collision_rate — mean collision count divided by mean makespan, absent
  whenever mean makespan is.

Report formatting: rates and collision counts use two decimals; makespan and
total-move means print as integers rounded half-up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Optional

import numpy as np

from . import policy as policy_mod
from .expert import JointPlan, SearchBudget, expert_action, plan_for_world
from .world import (
    Action,
    EpisodeStatus,
    WorldSpec,
    WorldState,
    action_masks,
    episode_status,
    generate_world,
    max_episode_length,
    observe_batch,
    step,
)


@dataclass
class EpisodeRecord:
    """Raw outcome of one evaluated episode."""

    spec: WorldSpec
    success: bool
    makespan: int
    moves_per_agent: list[int]
    collision_count: int
    seed: int

    @property
    def total_moves(self) -> int:
        return int(sum(self.moves_per_agent))

    def to_dict(self) -> dict:
        return {
            "spec": {
                "size": self.spec.size,
                "obstacle_density": self.spec.obstacle_density,
                "num_agents": self.spec.num_agents,
                "seed": self.spec.seed,
            },
            "success": self.success,
            "makespan": self.makespan,
            "moves_per_agent": list(self.moves_per_agent),
            "collision_count": self.collision_count,
            "seed": self.seed,
        }


@dataclass
class MetricsRow:
    """Aggregated metrics for one (agents, density, size) configuration."""

    num_agents: int
    density: float
    size: int
    episodes: int
    success_rate: float                  # percent
    mean_makespan: Optional[float]       # None when no episode succeeded
    mean_total_moves: Optional[float]
    mean_collision_count: float
    collision_rate: Optional[float]


# ---------------------------------------------------------------------------
# Actors

class PolicyActor:
    """Greedy (or sampling) policy rollout; all agents share the parameters."""

    def __init__(self, params: policy_mod.PolicyParams, greedy: bool = True):
        self.params = params
        self.greedy = greedy

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, state: WorldState, masks: np.ndarray, rng) -> list[Action]:
        channels, gvecs = observe_batch(state)
        logits, _, _, _ = policy_mod.forward_batch(self.params, channels, gvecs)
        if self.greedy:
            idx = policy_mod.greedy_actions(logits, masks)
        else:
            idx = policy_mod.sample_actions(logits, masks, rng)
        return [Action(int(i)) for i in idx]


class ExpertActor:
    """Plans once per episode and replays the plan; stays put if planning
    fails (the episode then times out, which is a legitimate outcome)."""

    def __init__(self, budget: SearchBudget | None = None, agent_cap: int = 4,
                 order_seed: int = 0):
        self.budget = budget
        self.agent_cap = agent_cap
        self.order_seed = order_seed
        self.plan: JointPlan | None = None

    def reset(self, world: WorldState) -> None:
        self.plan = plan_for_world(
            world, budget=self.budget, order_seed=self.order_seed,
            agent_cap=self.agent_cap,
        )

    def act(self, state: WorldState, masks: np.ndarray, rng) -> list[Action]:
        if self.plan is None:
            return [Action.STAY] * state.num_agents
        return [
            expert_action(self.plan, i, state.t) for i in range(state.num_agents)
        ]


class RandomActor:
    """Uniform over each agent's valid actions; collision-blind baseline."""

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, state: WorldState, masks: np.ndarray, rng) -> list[Action]:
        out = []
        for i in range(state.num_agents):
            valid = np.flatnonzero(masks[i])
            out.append(Action(int(valid[rng.integers(len(valid))])))
        return out


# ---------------------------------------------------------------------------
# Rollout and aggregation

def run_episode(actor, spec: WorldSpec, seed: int) -> EpisodeRecord:
    """Generate the world from (spec, seed) and roll the actor to Success or
    Timeout, recording moves and collisions faithfully."""
    spec = replace(spec, seed=int(seed))
    world = generate_world(spec)
    limit = max_episode_length(spec)
    actor.reset(world)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 17]))

    moves = np.zeros(world.num_agents, dtype=np.int64)
    collisions = 0
    while episode_status(world, limit) == EpisodeStatus.RUNNING:
        masks = action_masks(world)
        actions = actor.act(world, masks, rng)
        world, events = step(world, actions)
        moves += events.moved
        collisions += int(events.collided.sum())

    success = episode_status(world, limit) == EpisodeStatus.SUCCESS
    return EpisodeRecord(
        spec=spec,
        success=success,
        makespan=world.t if success else limit,
        moves_per_agent=[int(x) for x in moves],
        collision_count=collisions,
        seed=int(seed),
    )


def compute_metrics(records: list[EpisodeRecord]) -> MetricsRow:
    """Aggregate one homogeneous batch of episode records."""
    if not records:
        raise ValueError("no records to aggregate")
    spec0 = records[0].spec
    for r in records:
        if (
            r.spec.num_agents != spec0.num_agents
            or r.spec.obstacle_density != spec0.obstacle_density
            or r.spec.size != spec0.size
        ):
            raise ValueError("records mix different configurations")

    n = len(records)
    succ = [r for r in records if r.success]
    mean_makespan = sum(r.makespan for r in succ) / len(succ) if succ else None
    mean_moves = sum(r.total_moves for r in succ) / len(succ) if succ else None
    mean_collisions = sum(r.collision_count for r in records) / n
    rate = mean_collisions / mean_makespan if mean_makespan else None
    return MetricsRow(
        num_agents=spec0.num_agents,
        density=spec0.obstacle_density,
        size=spec0.size,
        episodes=n,
        success_rate=100.0 * len(succ) / n,
        mean_makespan=mean_makespan,
        mean_total_moves=mean_moves,
        mean_collision_count=mean_collisions,
        collision_rate=rate,
    )


def episode_seed(base_seed: int, config_idx: int, episode_idx: int) -> int:
    """Stable per-episode seed derived from the benchmark base seed."""
    ss = np.random.SeedSequence([int(base_seed), int(config_idx), int(episode_idx)])
    return int(ss.generate_state(1, np.uint64)[0])


def benchmark(
    actor,
    agent_counts: Iterable[int],
    densities: Iterable[float],
    m: int = 20,
    n_envs: int = 100,
    base_seed: int = 0,
    on_record: Optional[Callable[[EpisodeRecord], None]] = None,
) -> list[MetricsRow]:
    """One MetricsRow per (agents, density) pair, rows ordered by (A, d);
    episode seeds derive deterministically from base_seed."""
    rows = []
    configs = [(a, d) for a in sorted(set(agent_counts)) for d in sorted(set(densities))]
    for config_idx, (a, d) in enumerate(configs):
        spec = WorldSpec(size=m, obstacle_density=d, num_agents=a, seed=0)
        records = []
        for ep in range(n_envs):
            rec = run_episode(actor, spec, episode_seed(base_seed, config_idx, ep))
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        rows.append(compute_metrics(records))
    return rows


# ---------------------------------------------------------------------------
# Rendering

def _fmt_rate(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.2f}"


def _fmt_int(x: Optional[float]) -> str:
    if x is None:
        return "-"
    return str(int(Decimal(repr(float(x))).quantize(Decimal("1"), rounding=ROUND_HALF_UP)))


REPORT_COLUMNS = (
    "agents",
    "density",
    "size",
    "episodes",
    "success_rate",
    "makespan",
    "total_moves",
    "collision_count",
    "collision_rate",
)


def _row_cells(row: MetricsRow) -> list[str]:
    return [
        str(row.num_agents),
        f"{row.density:g}",
        str(row.size),
        str(row.episodes),
        _fmt_rate(row.success_rate),
        _fmt_int(row.mean_makespan),
        _fmt_int(row.mean_total_moves),
        _fmt_rate(row.mean_collision_count),
        _fmt_rate(row.collision_rate),
    ]


def emit_report(rows: list[MetricsRow], format: str = "markdown") -> str:
    """Render metric rows as markdown or CSV; both share the same formatter
    so the numbers are identical."""
    if not rows:
        raise ValueError("no rows to render")
    cells = [_row_cells(r) for r in rows]
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        lines += [",".join(c) for c in cells]
        return "\n".join(lines) + "\n"
    if format == "markdown":
        header = "| " + " | ".join(REPORT_COLUMNS) + " |"
        sep = "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"
        lines = [header, sep]
        lines += ["| " + " | ".join(c) + " |" for c in cells]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def write_records(path, records: Iterable[EpisodeRecord]) -> None:
    """Line-delimited JSON dump of raw episode records."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
