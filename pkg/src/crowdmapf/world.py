"""Deterministic grid-world environment for multi-agent path finding.

Conventions used everywhere in this package:

* Cells are addressed as ``(row, col)`` with row 0 at the top.
* North decreases the row index, East increases the column index.
* Obstacle maps are boolean arrays where ``True`` marks an obstacle.
* All randomness flows through ``numpy.random.Generator`` seeded from the
  ``WorldSpec``, so world generation is bit-reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np

# Observation geometry: a fixed 10x10 window with the agent pinned at (4, 4).
# An even window has no center cell, so the anchor sits just above-left of it.
OBS_WINDOW = 10
OBS_ANCHOR = 4


class Action(IntEnum):
    """The five discrete moves. Index order is load-bearing: greedy
    tie-breaking picks the lowest index."""

    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3
    STAY = 4


# Row/col deltas indexed by Action.
ACTION_DELTAS = np.array(
    [(-1, 0), (0, 1), (1, 0), (0, -1), (0, 0)], dtype=np.int64
)

NUM_ACTIONS = 5


class WorldGenerationError(ValueError):
    """Raised when a WorldSpec cannot be instantiated (e.g. too many agents)."""


@dataclass(frozen=True)
class WorldSpec:
    """Parameters that fully determine a generated world."""

    size: int
    obstacle_density: float
    num_agents: int
    seed: int

    def validate(self) -> None:
        if self.size < 4:
            raise WorldGenerationError(f"size must be >= 4, got {self.size}")
        if not (0.0 <= self.obstacle_density <= 0.6):
            raise WorldGenerationError(
                f"obstacle_density must be in [0, 0.6], got {self.obstacle_density}"
            )
        if self.num_agents < 1:
            raise WorldGenerationError(
                f"num_agents must be >= 1, got {self.num_agents}"
            )
        if not (0 <= self.seed < 2**64):
            raise WorldGenerationError("seed must fit in 64 unsigned bits")


@dataclass
class Grid:
    """Static obstacle map; ``cells[r, c]`` is True when (r, c) is blocked."""

    cells: np.ndarray

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    def in_bounds(self, r: int, c: int) -> bool:
        m = self.cells.shape
        return 0 <= r < m[0] and 0 <= c < m[1]

    def is_free(self, r: int, c: int) -> bool:
        return self.in_bounds(r, c) and not self.cells[r, c]

    def copy(self) -> "Grid":
        return Grid(self.cells.copy())


@dataclass(frozen=True)
class AgentState:
    """Convenience view of one agent; the arrays in WorldState are primary."""

    id: int
    pos: tuple[int, int]
    goal: tuple[int, int]
    on_goal: bool


@dataclass
class StepEvents:
    """Per-agent outcome flags for one simulator step."""

    collided: np.ndarray
    moved: np.ndarray
    arrived: np.ndarray
    crowd_in: np.ndarray
    crowd_out: np.ndarray

    @classmethod
    def empty(cls, num_agents: int) -> "StepEvents":
        z = lambda: np.zeros(num_agents, dtype=bool)
        return cls(z(), z(), z(), z(), z())


class WorldState:
    """Complete simulator state: static grid plus agent positions and goals.

    Positions and goals are stored as ``(A, 2)`` int arrays for speed; the
    ``agents`` property materialises ``AgentState`` views when convenient.
    A WorldState is exclusively owned by its caller; ``step`` returns a fresh
    state sharing only the immutable grid.
    """

    __slots__ = ("grid", "positions", "goals", "on_goal", "t")

    def __init__(
        self,
        grid: Grid,
        positions: np.ndarray,
        goals: np.ndarray,
        t: int = 0,
    ):
        self.grid = grid
        self.positions = np.asarray(positions, dtype=np.int64)
        self.goals = np.asarray(goals, dtype=np.int64)
        self.on_goal = np.all(self.positions == self.goals, axis=1)
        self.t = t

    @property
    def num_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def agents(self) -> list[AgentState]:
        return [
            AgentState(
                id=i,
                pos=(int(self.positions[i, 0]), int(self.positions[i, 1])),
                goal=(int(self.goals[i, 0]), int(self.goals[i, 1])),
                on_goal=bool(self.on_goal[i]),
            )
            for i in range(self.num_agents)
        ]

    def all_on_goal(self) -> bool:
        return bool(self.on_goal.all())

    def copy(self) -> "WorldState":
        return WorldState(self.grid, self.positions.copy(), self.goals.copy(), self.t)

    def validate(self) -> None:
        """Raise AssertionError on any structural invariant violation."""
        m = self.grid.size
        pos = self.positions
        assert pos.shape == self.goals.shape == (self.num_agents, 2)
        assert np.all((pos >= 0) & (pos < m)), "agent out of bounds"
        assert np.all((self.goals >= 0) & (self.goals < m)), "goal out of bounds"
        assert not self.grid.cells[pos[:, 0], pos[:, 1]].any(), "agent on obstacle"
        assert not self.grid.cells[self.goals[:, 0], self.goals[:, 1]].any(), (
            "goal on obstacle"
        )
        keys = pos[:, 0] * m + pos[:, 1]
        assert len(set(keys.tolist())) == self.num_agents, "agents share a cell"
        assert np.array_equal(self.on_goal, np.all(pos == self.goals, axis=1))


class EpisodeStatus(IntEnum):
    RUNNING = 0
    SUCCESS = 1
    TIMEOUT = 2


def max_episode_length(
    spec: WorldSpec, alpha: float = 4.0, beta: float = 5.0
) -> int:
    """Adaptive step limit: floor(alpha * size * (1 + density) + beta * agents).

    The 1e-9 nudge absorbs binary floating point rounding so that inputs with
    short decimal densities floor to the intended integer.
    """
    spec.validate()
    raw = alpha * spec.size * (1.0 + spec.obstacle_density) + beta * spec.num_agents
    return int(np.floor(raw + 1e-9))


def _bfs_reachable(cells: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> bool:
    if start == goal:
        return True
    m, n = cells.shape
    seen = np.zeros_like(cells, dtype=bool)
    seen[start] = True
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < m and 0 <= nc < n and not cells[nr, nc] and not seen[nr, nc]:
                if (nr, nc) == goal:
                    return True
                seen[nr, nc] = True
                q.append((nr, nc))
    return False


def _carve_corridor(cells: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> None:
    """Clear obstacles along the row-first L-shaped path from start to goal."""
    r, c = start
    gr, gc = goal
    step_r = 1 if gr >= r else -1
    for rr in range(r, gr + step_r, step_r):
        cells[rr, c] = False
    step_c = 1 if gc >= c else -1
    for cc in range(c, gc + step_c, step_c):
        cells[gr, cc] = False


def generate_world(spec: WorldSpec) -> WorldState:
    """Build a solvable world from a spec, bit-reproducibly.

    Placement order: obstacles first (exactly ``floor(density * size**2)``
    cells), then distinct start cells, then distinct goal cells with each
    goal different from its own start. Any start/goal pair whose connection
    is blocked is re-sampled up to 100 times, after which a row-then-column
    corridor is carved through the obstacles so the instance stays solvable.
    """
    spec.validate()
    m = spec.size
    rng = np.random.default_rng(spec.seed)

    n_cells = m * m
    n_obstacles = int(spec.obstacle_density * n_cells)
    cells = np.zeros((m, m), dtype=bool)
    if n_obstacles > 0:
        flat = rng.choice(n_cells, size=n_obstacles, replace=False)
        cells.flat[flat] = True

    free_flat = np.flatnonzero(~cells.ravel())
    if spec.num_agents > len(free_flat):
        raise WorldGenerationError(
            f"{spec.num_agents} agents do not fit in {len(free_flat)} free cells"
        )

    def draw_free(exclude: set[int]) -> int:
        # Rejection-sample a free cell index not in `exclude`.
        for _ in range(1000):
            cand = int(free_flat[rng.integers(len(free_flat))])
            if cand not in exclude:
                return cand
        raise WorldGenerationError("could not place agents on distinct free cells")

    starts: list[int] = []
    used_starts: set[int] = set()
    for _ in range(spec.num_agents):
        cell = draw_free(used_starts)
        starts.append(cell)
        used_starts.add(cell)

    goals: list[int] = []
    used_goals: set[int] = set()
    for i in range(spec.num_agents):
        cell = draw_free(used_goals | {starts[i]})
        goals.append(cell)
        used_goals.add(cell)

    # Connectivity repair, one agent at a time. Carving only removes
    # obstacles, so earlier agents can never become unreachable again.
    for i in range(spec.num_agents):
        start_rc = divmod(starts[i], m)
        goal_rc = divmod(goals[i], m)
        attempts = 0
        while not _bfs_reachable(cells, start_rc, goal_rc):
            attempts += 1
            if attempts > 100:
                _carve_corridor(cells, start_rc, goal_rc)
                break
            used_starts.discard(starts[i])
            used_goals.discard(goals[i])
            starts[i] = draw_free(used_starts)
            used_starts.add(starts[i])
            goals[i] = draw_free(used_goals | {starts[i]})
            used_goals.add(goals[i])
            start_rc = divmod(starts[i], m)
            goal_rc = divmod(goals[i], m)

    positions = np.array([divmod(s, m) for s in starts], dtype=np.int64)
    goal_arr = np.array([divmod(g, m) for g in goals], dtype=np.int64)
    state = WorldState(Grid(cells), positions, goal_arr, t=0)
    state.validate()
    return state


def valid_actions(state: WorldState, agent_id: int) -> set[Action]:
    """Statically feasible actions: Stay plus moves that hit neither the
    boundary nor an obstacle. Other agents are ignored here; step() resolves
    dynamic conflicts."""
    if not (0 <= agent_id < state.num_agents):
        raise IndexError(f"unknown agent id {agent_id}")
    r, c = state.positions[agent_id]
    out = {Action.STAY}
    for a in (Action.NORTH, Action.EAST, Action.SOUTH, Action.WEST):
        dr, dc = ACTION_DELTAS[a]
        if state.grid.is_free(int(r + dr), int(c + dc)):
            out.add(a)
    return out


def action_masks(state: WorldState) -> np.ndarray:
    """(A, 5) boolean mask of statically feasible actions for every agent."""
    a = state.num_agents
    m = state.grid.size
    masks = np.zeros((a, NUM_ACTIONS), dtype=bool)
    masks[:, Action.STAY] = True
    targets = state.positions[:, None, :] + ACTION_DELTAS[None, :4, :]
    inb = np.all((targets >= 0) & (targets < m), axis=2)
    rr = np.minimum(np.maximum(targets[:, :, 0], 0), m - 1)
    cc = np.minimum(np.maximum(targets[:, :, 1], 0), m - 1)
    masks[:, :4] = inb & ~state.grid.cells[rr, cc]
    return masks


def step(
    state: WorldState,
    joint_action: Iterable[Action],
    crowd: Optional["CrowdParamsLike"] = None,
) -> tuple[WorldState, StepEvents]:
    """Advance the world one tick under simultaneous moves.

    Conflict rules, applied as batch sweeps until a fixed point (at most A
    sweeps; rejections only grow, so the fixed point is order-independent):

    * out-of-bounds or obstacle targets are rejected immediately;
    * two or more movers aiming at one cell are all rejected (vertex);
    * a mover aiming at the current cell of a non-mover (Stay or already
      rejected) is rejected;
    * two movers exchanging cells are both rejected (edge swap).

    Rejected agents keep their position with ``collided`` set. When `crowd`
    is given (anything with ``window`` and ``zeta`` attributes), the
    crowd_in/crowd_out event flags are filled from the local agent density
    before and after the move; otherwise they stay False.
    """
    actions = [Action(a) for a in joint_action]
    a_count = state.num_agents
    if len(actions) != a_count:
        raise ValueError(f"expected {a_count} actions, got {len(actions)}")

    pos = state.positions
    act_idx = np.array(actions, dtype=np.int64)
    proposed = pos + ACTION_DELTAS[act_idx]
    events = StepEvents.empty(a_count)

    m = state.grid.size
    moving = act_idx != Action.STAY
    # Static rejections: bounds and obstacles.
    inb = np.all((proposed >= 0) & (proposed < m), axis=1)
    hit_obstacle = np.zeros(a_count, dtype=bool)
    ok = np.where(inb)[0]
    hit_obstacle[ok] = state.grid.cells[proposed[ok, 0], proposed[ok, 1]]
    rejected = moving & (~inb | hit_obstacle)
    moving = moving & ~rejected

    # Sweep to fixed point; all three rules are evaluated against the mover
    # set at the top of the sweep and applied together.
    for _ in range(a_count):
        movers = np.where(moving)[0]
        if len(movers) == 0:
            break
        newly = np.zeros(a_count, dtype=bool)

        targets = {}
        for i in movers:
            key = (int(proposed[i, 0]), int(proposed[i, 1]))
            targets.setdefault(key, []).append(i)
        # Vertex conflicts: every cell contested by 2+ movers rejects all.
        for key, contenders in targets.items():
            if len(contenders) > 1:
                for i in contenders:
                    newly[i] = True
        # Moving into a cell held by a non-mover.
        stationary_cells = {
            (int(pos[i, 0]), int(pos[i, 1]))
            for i in range(a_count)
            if not moving[i]
        }
        for i in movers:
            if (int(proposed[i, 0]), int(proposed[i, 1])) in stationary_cells:
                newly[i] = True
        # Edge swaps between two movers.
        mover_from = {
            (int(pos[i, 0]), int(pos[i, 1])): i for i in movers
        }
        for i in movers:
            j = mover_from.get((int(proposed[i, 0]), int(proposed[i, 1])))
            if j is not None and j != i:
                if (proposed[j] == pos[i]).all():
                    newly[i] = True

        if not newly.any():
            break
        rejected |= newly
        moving &= ~newly

    final = np.where(moving[:, None], proposed, pos)
    new_state = WorldState(state.grid, final, state.goals, state.t + 1)

    events.collided = rejected
    events.moved = np.any(final != pos, axis=1)
    events.arrived = new_state.on_goal.copy()

    if crowd is not None:
        from .reward import crowd_density

        for i in range(a_count):
            before = crowd_density(state, i, crowd.window)
            after = crowd_density(new_state, i, crowd.window)
            events.crowd_in[i] = before < crowd.zeta <= after
            events.crowd_out[i] = after < crowd.zeta <= before

    return new_state, events


def observe(state: WorldState, agent_id: int) -> "Observation":
    """Egocentric 10x10x4 view plus a unit goal direction vector.

    Channels: 0 world extent (1 inside the map), 1 obstacles (out-of-map
    counts as obstacle), 2 other agents, 3 other agents' goals. A visible
    neighbor whose goal lies outside the window gets its goal clamped to the
    nearest window border cell.
    """
    if not (0 <= agent_id < state.num_agents):
        raise IndexError(f"unknown agent id {agent_id}")
    w = OBS_WINDOW
    channels = np.zeros((4, w, w), dtype=np.float64)
    r, c = (int(x) for x in state.positions[agent_id])
    m = state.grid.size
    top, left = r - OBS_ANCHOR, c - OBS_ANCHOR

    r0, r1 = max(0, top), min(m, top + w)
    c0, c1 = max(0, left), min(m, left + w)
    wr0, wc0 = r0 - top, c0 - left
    wr1, wc1 = wr0 + (r1 - r0), wc0 + (c1 - c0)

    channels[1] = 1.0  # outside the map reads as obstacle
    if r1 > r0 and c1 > c0:
        channels[0, wr0:wr1, wc0:wc1] = 1.0
        channels[1, wr0:wr1, wc0:wc1] = state.grid.cells[r0:r1, c0:c1]

    rel = state.positions - np.array([top, left])
    visible = np.all((rel >= 0) & (rel < w), axis=1)
    visible[agent_id] = False
    idx = np.where(visible)[0]
    channels[2, rel[idx, 0], rel[idx, 1]] = 1.0

    goal_rel = np.minimum(
        np.maximum(state.goals[idx] - np.array([top, left]), 0), w - 1
    )
    channels[3, goal_rel[:, 0], goal_rel[:, 1]] = 1.0

    delta = (state.goals[agent_id] - state.positions[agent_id]).astype(np.float64)
    norm = float(np.hypot(delta[0], delta[1]))
    goal_vec = delta / norm if norm > 0 else np.zeros(2)

    return Observation(channels=channels, goal_vec=goal_vec)


def observe_batch(state: WorldState) -> tuple[np.ndarray, np.ndarray]:
    """observe() for every agent at once.

    Returns freshly allocated (A, 4, 10, 10) channels and (A, 2) goal
    vectors, identical to stacking per-agent observe() calls but with the
    neighbor scatters vectorized across agents.
    """
    w = OBS_WINDOW
    a = state.num_agents
    if a == 1:
        obs = observe(state, 0)
        return obs.channels[None], obs.goal_vec[None]
    m = state.grid.size
    pos = state.positions
    goals = state.goals
    channels = np.zeros((a, 4, w, w))
    channels[:, 1] = 1.0
    tl = pos - OBS_ANCHOR  # per-agent window origin
    for i in range(a):
        top, left = int(tl[i, 0]), int(tl[i, 1])
        r0, r1 = max(0, top), min(m, top + w)
        c0, c1 = max(0, left), min(m, left + w)
        if r1 > r0 and c1 > c0:
            wr0, wc0 = r0 - top, c0 - left
            wr1, wc1 = wr0 + (r1 - r0), wc0 + (c1 - c0)
            channels[i, 0, wr0:wr1, wc0:wc1] = 1.0
            channels[i, 1, wr0:wr1, wc0:wc1] = state.grid.cells[r0:r1, c0:c1]

    rel = pos[None, :, :] - tl[:, None, :]  # (A, A, 2): j in i's window frame
    visible = np.all((rel >= 0) & (rel < w), axis=2)
    np.fill_diagonal(visible, False)
    oi, oj = np.nonzero(visible)
    flat = channels.reshape(a, 4, w * w)
    flat[oi, 2, rel[oi, oj, 0] * w + rel[oi, oj, 1]] = 1.0
    grel = np.minimum(np.maximum(goals[None, :, :] - tl[:, None, :], 0), w - 1)
    flat[oi, 3, grel[oi, oj, 0] * w + grel[oi, oj, 1]] = 1.0

    delta = (goals - pos).astype(np.float64)
    norms = np.hypot(delta[:, 0], delta[:, 1])
    gvecs = np.divide(
        delta, norms[:, None], out=np.zeros_like(delta),
        where=norms[:, None] > 0,
    )
    return channels, gvecs


@dataclass
class Observation:
    """Network input: four binary 10x10 maps and a 2-vector toward the goal."""

    channels: np.ndarray
    goal_vec: np.ndarray = field(default_factory=lambda: np.zeros(2))


def episode_status(state: WorldState, max_length: int) -> EpisodeStatus:
    """Success when every agent sits on its goal, Timeout at the step limit."""
    if max_length <= 0:
        raise ValueError("max_length must be positive")
    if state.all_on_goal():
        return EpisodeStatus.SUCCESS
    if state.t >= max_length:
        return EpisodeStatus.TIMEOUT
    return EpisodeStatus.RUNNING


class CrowdParamsLike:
    """Structural protocol for step(): needs .window and .zeta."""

    window: int
    zeta: float
