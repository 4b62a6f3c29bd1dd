"""Expert MAPF planners used for demonstrations and as search oracles.

Two planners share the same conflict rules as the simulator (vertex and edge
conflicts forbidden):

* ``plan_od_astar`` — A* with Operator Decomposition over the joint state,
  optimal in sum-of-costs for small agent counts;
* ``plan_prioritized`` — seeded priority planning with a space-time
  reservation table, a fast fallback for larger teams.

Cost model: a timestep costs an agent 0 when it executes Stay while on its
goal and 1 otherwise, so sum-of-costs counts fuel plus time spent off goal.
Both planners and the brute-force reference use this same per-step rendering.
"""

from __future__ import annotations

import heapq
import itertools
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import Action, Grid, WorldState

UNREACHABLE = -1


@dataclass(frozen=True)
class SearchBudget:
    """Caps for plan_od_astar: node expansions and wall-clock time."""

    max_nodes: int = 200_000
    timeout_ms: float = 2000.0

    def __post_init__(self):
        if self.max_nodes <= 0 or self.timeout_ms <= 0:
            raise ValueError("budget must be positive")


@dataclass
class JointPlan:
    """Equal-length per-agent action sequences with cost metadata."""

    actions: list[list[Action]]
    sum_of_costs: int
    makespan: int

    @property
    def num_agents(self) -> int:
        return len(self.actions)

    @property
    def horizon(self) -> int:
        return self.makespan


def expert_action(plan: JointPlan, agent_id: int, t: int) -> Action:
    """Planned action at time t; Stay once the agent's path has ended."""
    if not (0 <= agent_id < plan.num_agents):
        raise IndexError(f"unknown agent id {agent_id}")
    seq = plan.actions[agent_id]
    return seq[t] if 0 <= t < len(seq) else Action.STAY


def bfs_distance(grid: Grid, start, goal, blocked=frozenset()):
    """Shortest 4-connected path length avoiding obstacles and `blocked`
    cells; None when unreachable. Endpoints must be free, in-bounds cells."""
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    for cell in (start, goal):
        if not grid.is_free(*cell):
            raise ValueError(f"endpoint {cell} is not a free cell")
    if start == goal:
        return 0
    blocked = set(blocked)
    if start in blocked or goal in blocked:
        return None
    m = grid.size
    cells = grid.cells
    seen = np.zeros((m, m), dtype=bool)
    seen[start] = True
    q = deque([start])
    depth = 0
    while q:
        depth += 1
        for _ in range(len(q)):
            r, c = q.popleft()
            for nb in ((r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)):
                nr, nc = nb
                if not (0 <= nr < m and 0 <= nc < m):
                    continue
                if cells[nr, nc] or seen[nr, nc] or nb in blocked:
                    continue
                if nb == goal:
                    return depth
                seen[nr, nc] = True
                q.append(nb)
    return None


def distance_map(grid: Grid, goal) -> np.ndarray:
    """Flat BFS distance-to-goal array indexed by packed cell (r*m + c);
    UNREACHABLE (-1) where no path exists."""
    m = grid.size
    cells = grid.cells
    dist = np.full(m * m, UNREACHABLE, dtype=np.int32)
    g = int(goal[0]) * m + int(goal[1])
    if cells.flat[g]:
        return dist
    dist[g] = 0
    q = deque([g])
    while q:
        cur = q.popleft()
        d = dist[cur] + 1
        r, c = divmod(cur, m)
        if r > 0 and not cells.flat[cur - m] and dist[cur - m] < 0:
            dist[cur - m] = d
            q.append(cur - m)
        if c < m - 1 and not cells.flat[cur + 1] and dist[cur + 1] < 0:
            dist[cur + 1] = d
            q.append(cur + 1)
        if r < m - 1 and not cells.flat[cur + m] and dist[cur + m] < 0:
            dist[cur + m] = d
            q.append(cur + m)
        if c > 0 and not cells.flat[cur - 1] and dist[cur - 1] < 0:
            dist[cur - 1] = d
            q.append(cur - 1)
    return dist


def _neighbor_table(grid: Grid) -> list[list[tuple[int, int]]]:
    """Per packed cell: (action, target-cell) pairs that clear bounds and
    obstacles, Stay included. Empty for obstacle cells."""
    m = grid.size
    cells = grid.cells
    table: list[list[tuple[int, int]]] = []
    for cell in range(m * m):
        if cells.flat[cell]:
            table.append([])
            continue
        r, c = divmod(cell, m)
        entries = []
        if r > 0 and not cells.flat[cell - m]:
            entries.append((int(Action.NORTH), cell - m))
        if c < m - 1 and not cells.flat[cell + 1]:
            entries.append((int(Action.EAST), cell + 1))
        if r < m - 1 and not cells.flat[cell + m]:
            entries.append((int(Action.SOUTH), cell + m))
        if c > 0 and not cells.flat[cell - 1]:
            entries.append((int(Action.WEST), cell - 1))
        entries.append((int(Action.STAY), cell))
        table.append(entries)
    return table


def _actions_between(prev: tuple, new: tuple, m: int) -> tuple:
    out = []
    for p, n in zip(prev, new):
        if n == p:
            out.append(Action.STAY)
        elif n == p - m:
            out.append(Action.NORTH)
        elif n == p + 1:
            out.append(Action.EAST)
        elif n == p + m:
            out.append(Action.SOUTH)
        elif n == p - 1:
            out.append(Action.WEST)
        else:
            raise ValueError("non-adjacent transition in plan")
    return tuple(out)


def plan_od_astar(
    world: WorldState,
    budget: SearchBudget | None = None,
    agent_cap: int = 4,
) -> JointPlan | None:
    """Sum-of-costs-optimal joint plan via A* with Operator Decomposition.

    Agents are assigned moves one at a time (branching 5 instead of 5^A);
    full joint states close the timestep. The heuristic sums per-agent BFS
    true distances, which is admissible and consistent under the cost model
    above. Returns None when the budget is exhausted or the instance has an
    unreachable goal; raises on more agents than `agent_cap`.
    """
    a = world.num_agents
    if a > agent_cap:
        raise ValueError(f"operator decomposition capped at {agent_cap} agents")
    budget = budget or SearchBudget()
    m = world.grid.size
    deadline = time.monotonic() + budget.timeout_ms / 1000.0

    start = tuple(int(r) * m + int(c) for r, c in world.positions)
    goals = tuple(int(r) * m + int(c) for r, c in world.goals)
    dmaps = [distance_map(world.grid, g) for g in world.goals]
    if any(dmaps[i][start[i]] < 0 for i in range(a)):
        return None
    nbr = _neighbor_table(world.grid)

    h0 = int(sum(dmaps[i][start[i]] for i in range(a)))
    # Node: (f, g, tiebreak, prev_positions, assigned_prefix, h)
    counter = itertools.count()
    heap = [(h0, 0, next(counter), start, (), h0)]
    # Best g per key; full states keyed by positions, intermediates by
    # (prev, assigned). Parents recorded for full states only.
    g_best: dict = {start: 0}
    parent: dict = {}
    expansions = 0

    while heap:
        f, g, _, prev, assigned, h = heapq.heappop(heap)
        k = len(assigned)
        key = prev if k == 0 else (prev, assigned)
        if g > g_best.get(key, g):
            continue
        if k == 0 and prev == goals:
            return _extract_plan(start, goals, parent, m)
        expansions += 1
        if expansions > budget.max_nodes:
            return None
        if expansions % 512 == 0 and time.monotonic() > deadline:
            return None

        pk = prev[k]
        on_goal_cell = goals[k]
        dk = dmaps[k]
        for action, nc in nbr[pk]:
            if nc in assigned:
                continue  # vertex conflict with an already-moved agent
            swap = False
            for j in range(k):
                if assigned[j] == pk and prev[j] == nc:
                    swap = True
                    break
            if swap:
                continue
            inc = 0 if (nc == pk == on_goal_cell) else 1
            ng = g + inc
            nh = h - int(dk[pk]) + int(dk[nc])
            if k + 1 == a:
                npos = assigned + (nc,)
                if ng < g_best.get(npos, np.inf):
                    g_best[npos] = ng
                    parent[npos] = (prev, _actions_between(prev, npos, m))
                    heapq.heappush(
                        heap, (ng + nh, ng, next(counter), npos, (), nh)
                    )
            else:
                nass = assigned + (nc,)
                nkey = (prev, nass)
                if ng < g_best.get(nkey, np.inf):
                    g_best[nkey] = ng
                    heapq.heappush(
                        heap, (ng + nh, ng, next(counter), prev, nass, nh)
                    )
    return None


def _extract_plan(start: tuple, goals: tuple, parent: dict, m: int) -> JointPlan:
    steps = []
    cur = goals
    while cur != start:
        prev, acts = parent[cur]
        steps.append(acts)
        cur = prev
    steps.reverse()
    a = len(start)
    actions = [[step[i] for step in steps] for i in range(a)]
    cost = 0
    pos = list(start)
    for step in steps:
        for i, act in enumerate(step):
            nxt = _apply_packed(pos[i], act, m)
            cost += 0 if (nxt == pos[i] == goals[i]) else 1
            pos[i] = nxt
    return JointPlan(actions=actions, sum_of_costs=cost, makespan=len(steps))


def _apply_packed(cell: int, action: Action, m: int) -> int:
    if action == Action.NORTH:
        return cell - m
    if action == Action.EAST:
        return cell + 1
    if action == Action.SOUTH:
        return cell + m
    if action == Action.WEST:
        return cell - 1
    return cell


def plan_prioritized(
    world: WorldState,
    order_seed: int,
    horizon_factor: int = 4,
) -> JointPlan | None:
    """Prioritized planning: agents plan one by one in a seeded random order;
    each plans a space-time A* path treating all earlier trajectories as hard
    vertex/edge reservations, then parks on its goal forever. Returns None
    when some agent has no feasible path within horizon 4*m."""
    a = world.num_agents
    m = world.grid.size
    horizon = horizon_factor * m
    rng = np.random.default_rng(order_seed)
    order = rng.permutation(a)

    starts = [int(r) * m + int(c) for r, c in world.positions]
    goals = [int(r) * m + int(c) for r, c in world.goals]
    nbr = _neighbor_table(world.grid)

    vertex_res: set[tuple[int, int]] = set()
    edge_res: set[tuple[int, int, int]] = set()
    parked: dict[int, int] = {}
    paths: dict[int, list[int]] = {}

    for agent in order:
        agent = int(agent)
        dmap = distance_map(world.grid, world.goals[agent])
        path = _space_time_astar(
            starts[agent], goals[agent], dmap, nbr,
            vertex_res, edge_res, parked, horizon,
        )
        if path is None:
            return None
        paths[agent] = path
        t_arr = len(path) - 1
        for t, cell in enumerate(path):
            vertex_res.add((t, cell))
            if t > 0:
                edge_res.add((t - 1, path[t - 1], cell))
        parked[goals[agent]] = t_arr

    horizon_T = max(len(p) - 1 for p in paths.values())
    actions: list[list[Action]] = []
    cost = 0
    for i in range(a):
        path = paths[i]
        seq = []
        for t in range(horizon_T):
            cur = path[t] if t < len(path) else path[-1]
            nxt = path[t + 1] if t + 1 < len(path) else path[-1]
            seq.append(_actions_between((cur,), (nxt,), m)[0])
            cost += 0 if (nxt == cur == goals[i]) else 1
        actions.append(seq)
    return JointPlan(actions=actions, sum_of_costs=cost, makespan=horizon_T)


def _space_time_astar(
    start: int,
    goal: int,
    dmap: np.ndarray,
    nbr: list[list[tuple[int, int]]],
    vertex_res: set,
    edge_res: set,
    parked: dict,
    horizon: int,
) -> list[int] | None:
    """Single-agent A* over (cell, time) honoring the reservation table.

    Arrival is only valid at a time strictly after the last transient
    reservation on the goal cell, because the agent parks there afterwards.
    """
    if dmap[start] < 0:
        return None
    last_goal_res = max((t for t, c in vertex_res if c == goal), default=-1)

    counter = itertools.count()
    h0 = int(dmap[start])
    heap = [(h0, 0, next(counter), start, 0)]
    g_best = {(start, 0): 0}
    parents: dict[tuple[int, int], tuple[int, int]] = {}

    def blocked_at(t: int, cell: int) -> bool:
        if (t, cell) in vertex_res:
            return True
        p = parked.get(cell)
        return p is not None and t >= p

    if blocked_at(0, start):
        return None
    while heap:
        f, g, _, cell, t = heapq.heappop(heap)
        if g > g_best.get((cell, t), g):
            continue
        if cell == goal and t > last_goal_res:
            path = [cell]
            cur = (cell, t)
            while cur in parents:
                pcell, pt = parents[cur]
                path.append(pcell)
                cur = (pcell, pt)
            path.reverse()
            return path
        if t >= horizon:
            continue
        nt = t + 1
        for _, nc in nbr[cell]:
            if blocked_at(nt, nc):
                continue
            if (t, nc, cell) in edge_res:
                continue  # would swap with a reserved transition
            inc = 0 if (nc == cell == goal) else 1
            ng = g + inc
            nkey = (nc, nt)
            if ng < g_best.get(nkey, np.inf):
                g_best[nkey] = ng
                parents[nkey] = (cell, t)
                heapq.heappush(
                    heap, (ng + int(dmap[nc]), ng, next(counter), nc, nt)
                )
    return None


def plan_for_world(
    world: WorldState,
    budget: SearchBudget | None = None,
    order_seed: int = 0,
    agent_cap: int = 4,
) -> JointPlan | None:
    """Best-effort expert plan: optimal OD A* for small teams with the
    prioritized planner as fallback; None when neither succeeds."""
    if world.num_agents <= agent_cap:
        plan = plan_od_astar(world, budget=budget, agent_cap=agent_cap)
        if plan is not None:
            return plan
    return plan_prioritized(world, order_seed=order_seed)


def brute_force_joint_cost(world: WorldState, max_expansions: int = 2_000_000):
    """Reference sum-of-costs by Dijkstra over exact joint states. Exponential
    in agent count; intended for tiny instances in self-checks and tests."""
    a = world.num_agents
    m = world.grid.size
    start = tuple(int(r) * m + int(c) for r, c in world.positions)
    goals = tuple(int(r) * m + int(c) for r, c in world.goals)
    nbr = _neighbor_table(world.grid)

    counter = itertools.count()
    heap = [(0, next(counter), start)]
    dist = {start: 0}
    expansions = 0
    while heap:
        g, _, pos = heapq.heappop(heap)
        if g > dist.get(pos, g):
            continue
        if pos == goals:
            return g
        expansions += 1
        if expansions > max_expansions:
            return None
        choices = [nbr[p] for p in pos]
        for combo in itertools.product(*choices):
            new = tuple(nc for _, nc in combo)
            if len(set(new)) < a:
                continue  # vertex conflict
            swap = False
            for i in range(a):
                for j in range(i + 1, a):
                    if new[i] == pos[j] and new[j] == pos[i] and new[i] != pos[i]:
                        swap = True
                        break
                if swap:
                    break
            if swap:
                continue
            inc = sum(
                0 if (new[i] == pos[i] == goals[i]) else 1 for i in range(a)
            )
            ng = g + inc
            if ng < dist.get(new, np.inf):
                dist[new] = ng
                heapq.heappush(heap, (ng, next(counter), new))
    return None
