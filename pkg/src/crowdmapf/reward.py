"""Reward engine: movement/idle/collision terms, team completion bonus,
blocking penalty, and the crowd-aware density term.

All functions here are pure with respect to their inputs; BlockingMonitor
only caches distance maps on an immutable grid, so instances are safe to
share across steps of one episode but not across different grids.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .world import StepEvents, WorldSpec, WorldState

# An agent "blocks" another when standing on its cell would force a detour
# at least this many steps longer than the unobstructed shortest path.
BLOCKING_DETOUR = 10

CROWD_WINDOW = 5

ZETA_FLOOR = 0.7
ZETA_CAP = 0.95


@dataclass(frozen=True)
class RewardConstants:
    """Per-event reward magnitudes. Defaults are the reference values."""

    r_move: float = -0.3
    r_collision: float = -2.0
    r_idle_off_goal: float = -0.5
    r_idle_on_goal: float = 0.0
    r_team: float = 20.0
    r_crowd_out: float = 0.3
    r_crowd_in: float = -0.3
    r_blocking: float = -2.0


@dataclass(frozen=True)
class CrowdParams:
    """Crowd-term configuration: odd FOV side w and threshold zeta."""

    window: int = CROWD_WINDOW
    zeta: float = 0.75

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not (ZETA_FLOOR <= self.zeta <= ZETA_CAP):
            raise ValueError(f"zeta must lie in [0.7, 0.95], got {self.zeta}")

    @classmethod
    def from_spec(cls, spec: "WorldSpec", window: int = CROWD_WINDOW) -> "CrowdParams":
        return cls(
            window=window,
            zeta=zeta(spec.num_agents, spec.size, spec.obstacle_density),
        )


@dataclass
class RewardBreakdown:
    """Episode-level tallies of each reward channel.

    The dot product of these counts with the matching constants equals the
    summed per-step reward over the episode; on-goal idles are deliberately
    not tallied since their reward is zero.
    """

    w_m: int = 0
    w_c: int = 0
    w_s_penalized: int = 0
    w_e: int = 0
    w_crowd_in: int = 0
    w_crowd_out: int = 0
    w_blocking: int = 0

    def add(self, other: "RewardBreakdown") -> "RewardBreakdown":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def total(self, consts: RewardConstants) -> float:
        return episode_total(self, consts)


def zeta(num_agents: int, size: int, density: float) -> float:
    """Crowding threshold: min(0.95, 0.7 + A / (m^2 (1-d) - A)).

    The denominator approximates the free cells left over for maneuvering;
    a non-positive value means the world is over-packed.
    """
    denom = size * size * (1.0 - density) - num_agents
    if denom <= 0:
        raise ValueError(
            f"over-packed world: m={size}, d={density}, A={num_agents} "
            f"leaves no free capacity"
        )
    return min(ZETA_CAP, ZETA_FLOOR + num_agents / denom)


def crowd_density(state: "WorldState", agent_id: int, window: int = CROWD_WINDOW) -> float:
    """Fraction of free cells around the agent that are occupied.

    Numerator: agents (including this one) inside the window x window box
    centered on the agent, intersected with the grid. Denominator: in-bounds
    non-obstacle cells of the same box; always >= 1 because the agent itself
    stands on a free cell.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    half = window // 2
    r, c = (int(x) for x in state.positions[agent_id])
    m = state.grid.size
    r0, r1 = max(0, r - half), min(m, r + half + 1)
    c0, c1 = max(0, c - half), min(m, c + half + 1)

    free = int((~state.grid.cells[r0:r1, c0:c1]).sum())
    pos = state.positions
    inside = (
        (pos[:, 0] >= r0) & (pos[:, 0] < r1) & (pos[:, 1] >= c0) & (pos[:, 1] < c1)
    )
    return float(inside.sum()) / float(free)


def crowd_densities(state: "WorldState", window: int = CROWD_WINDOW) -> np.ndarray:
    """crowd_density for every agent at once, via an obstacle integral image
    so the cost is O(m^2 + A^2) instead of one box scan per agent."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    half = window // 2
    m = state.grid.size
    pos = state.positions
    r0 = np.maximum(pos[:, 0] - half, 0)
    r1 = np.minimum(pos[:, 0] + half + 1, m)
    c0 = np.maximum(pos[:, 1] - half, 0)
    c1 = np.minimum(pos[:, 1] + half + 1, m)

    integral = np.zeros((m + 1, m + 1), dtype=np.int64)
    np.cumsum(state.grid.cells, axis=0, dtype=np.int64, out=integral[1:, 1:])
    np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])
    obstacles = (
        integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    )
    free = (r1 - r0) * (c1 - c0) - obstacles

    inside = (
        (pos[None, :, 0] >= r0[:, None])
        & (pos[None, :, 0] < r1[:, None])
        & (pos[None, :, 1] >= c0[:, None])
        & (pos[None, :, 1] < c1[:, None])
    )
    return inside.sum(axis=1) / free


def crowd_reward(delta_before: float, delta_after: float, zeta_value: float,
                 consts: RewardConstants | None = None) -> float:
    """Reward for crossing the crowding threshold: negative when entering a
    zeta-crowded region, positive when leaving one, zero otherwise."""
    consts = consts or RewardConstants()
    if delta_before < zeta_value <= delta_after:
        return consts.r_crowd_in
    if delta_after < zeta_value <= delta_before:
        return consts.r_crowd_out
    return 0.0


def _distance_map(cells: np.ndarray, goal: tuple[int, int]) -> np.ndarray:
    """BFS distance from every cell to `goal` over free cells; -1 unreachable."""
    m, n = cells.shape
    dist = np.full((m, n), -1, dtype=np.int32)
    if cells[goal]:
        return dist
    dist[goal] = 0
    q = deque([goal])
    while q:
        r, c = q.popleft()
        d = dist[r, c] + 1
        for nr, nc in ((r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)):
            if 0 <= nr < m and 0 <= nc < n and not cells[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = d
                q.append((nr, nc))
    return dist


def _detour_at_least(
    cells: np.ndarray,
    start: tuple[int, int],
    goal: tuple[int, int],
    blocked: tuple[int, int],
    limit: int,
) -> bool:
    """True iff the shortest start->goal path avoiding `blocked` is longer
    than `limit` (including unreachable). BFS stops expanding past `limit`."""
    if start == goal:
        return False
    if blocked == goal:
        return True
    m, n = cells.shape
    seen = np.zeros((m, n), dtype=bool)
    seen[start] = True
    seen[blocked] = True
    q = deque([start])
    depth = 0
    while q and depth < limit:
        depth += 1
        for _ in range(len(q)):
            r, c = q.popleft()
            for nr, nc in ((r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)):
                if 0 <= nr < m and 0 <= nc < n and not cells[nr, nc] and not seen[nr, nc]:
                    if (nr, nc) == goal:
                        return False
                    seen[nr, nc] = True
                    q.append((nr, nc))
    return True


class BlockingMonitor:
    """Caches per-goal distance maps for repeated blocking queries on one grid.

    The pair test (does agent i block agent j?) short-circuits with a
    necessary condition before running any BFS: i's cell can lie on a
    shortest j-path only when Manhattan(j, i) + dist(i, goal_j) equals
    dist(j, goal_j) at most, and removing a cell that is off every shortest
    path leaves the distance unchanged. Only candidates passing the test get
    the depth-capped BFS.
    """

    def __init__(self, grid):
        self.cells = grid.cells
        self._maps: dict[tuple[int, int], np.ndarray] = {}

    def distance_map(self, goal: tuple[int, int]) -> np.ndarray:
        dm = self._maps.get(goal)
        if dm is None:
            dm = _distance_map(self.cells, goal)
            self._maps[goal] = dm
        return dm

    def pair_blocks(
        self,
        blocker_pos: tuple[int, int],
        agent_pos: tuple[int, int],
        agent_goal: tuple[int, int],
        detour: int = BLOCKING_DETOUR,
    ) -> bool:
        dm = self.distance_map(agent_goal)
        d_free = int(dm[agent_pos])
        if d_free < 0:
            return False  # unreachable even without the blocker
        d_at_blocker = int(dm[blocker_pos])
        if d_at_blocker < 0:
            return False  # blocker stands off every path to the goal
        manh = abs(blocker_pos[0] - agent_pos[0]) + abs(blocker_pos[1] - agent_pos[1])
        if manh + d_at_blocker > d_free:
            return False  # not on any shortest path; distance unchanged
        return _detour_at_least(
            self.cells, agent_pos, agent_goal, blocker_pos, d_free + detour - 1
        )

    def agent_blocking(
        self, state: "WorldState", agent_id: int, detour: int = BLOCKING_DETOUR
    ) -> bool:
        pos = state.positions
        goals = state.goals
        bp = (int(pos[agent_id, 0]), int(pos[agent_id, 1]))
        for j in range(state.num_agents):
            if j == agent_id:
                continue
            jp = (int(pos[j, 0]), int(pos[j, 1]))
            jg = (int(goals[j, 0]), int(goals[j, 1]))
            if self.pair_blocks(bp, jp, jg, detour):
                return True
        return False

    def blocking_flags(
        self, state: "WorldState", detour: int = BLOCKING_DETOUR
    ) -> np.ndarray:
        a = state.num_agents
        out = np.zeros(a, dtype=bool)
        if a > 1:
            for i in range(a):
                out[i] = self.agent_blocking(state, i, detour)
        return out


def is_blocking(state: "WorldState", agent_id: int, detour: int = BLOCKING_DETOUR) -> bool:
    """True iff some other agent's shortest path to its goal grows by at
    least `detour` steps (or becomes impossible) when this agent's cell is
    treated as an obstacle. Other agents never count as obstacles here."""
    return BlockingMonitor(state.grid).agent_blocking(state, agent_id, detour)


def step_reward(
    before: "WorldState",
    actions,
    events: "StepEvents",
    after: "WorldState",
    consts: RewardConstants,
    crowd: CrowdParams,
    blocking: Optional[np.ndarray] = None,
    monitor: Optional[BlockingMonitor] = None,
    detour: int = BLOCKING_DETOUR,
    densities_before: Optional[np.ndarray] = None,
    densities_after: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, RewardBreakdown]:
    """Per-agent reward for one transition plus the matching tally delta.

    Each agent earns exactly one base term (collision, move, or idle by goal
    status), plus the crowd term from its density before/after, plus the
    blocking penalty when it stood still while blocking someone in the new
    state, plus the team bonus on the step that completes the episode.

    `blocking` may supply precomputed is_blocking flags for `after`;
    `monitor` may supply a cached BlockingMonitor for the episode's grid;
    `densities_before`/`densities_after` may supply precomputed crowd
    densities (a rollout can reuse last step's after-densities).
    """
    a = before.num_agents
    r = np.zeros(a)
    bd = RewardBreakdown()

    collided = events.collided
    moved = events.moved
    idle = ~collided & ~moved
    idle_off = idle & ~after.on_goal
    idle_on = idle & after.on_goal

    r[collided] += consts.r_collision
    r[moved] += consts.r_move
    r[idle_off] += consts.r_idle_off_goal
    r[idle_on] += consts.r_idle_on_goal
    bd.w_c = int(collided.sum())
    bd.w_m = int(moved.sum())
    bd.w_s_penalized = int(idle_off.sum())

    db = (
        densities_before if densities_before is not None
        else crowd_densities(before, crowd.window)
    )
    da = (
        densities_after if densities_after is not None
        else crowd_densities(after, crowd.window)
    )
    went_in = (db < crowd.zeta) & (crowd.zeta <= da)
    went_out = (da < crowd.zeta) & (crowd.zeta <= db)
    r[went_in] += consts.r_crowd_in
    r[went_out] += consts.r_crowd_out
    bd.w_crowd_in = int(went_in.sum())
    bd.w_crowd_out = int(went_out.sum())

    stationary = ~moved
    if stationary.any() and a > 1:
        if blocking is None:
            if monitor is None:
                monitor = BlockingMonitor(after.grid)
            blocking = np.array(
                [
                    stationary[i] and monitor.agent_blocking(after, i, detour)
                    for i in range(a)
                ]
            )
        penalized = stationary & np.asarray(blocking, dtype=bool)
        r[penalized] += consts.r_blocking
        bd.w_blocking = int(penalized.sum())

    if after.all_on_goal():
        r += consts.r_team
        bd.w_e = a

    return r, bd


def episode_total(breakdown: RewardBreakdown, consts: RewardConstants) -> float:
    """Dot product of the tallies with their constants; equals the summed
    per-step reward of the episode they were accumulated from."""
    return (
        breakdown.w_m * consts.r_move
        + breakdown.w_c * consts.r_collision
        + breakdown.w_s_penalized * consts.r_idle_off_goal
        + breakdown.w_e * consts.r_team
        + breakdown.w_crowd_in * consts.r_crowd_in
        + breakdown.w_crowd_out * consts.r_crowd_out
        + breakdown.w_blocking * consts.r_blocking
    )
