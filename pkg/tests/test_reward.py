"""Reward function: crowd terms, base terms, blocking, episode totals."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdmapf.reward import (
    BlockingMonitor,
    CrowdParams,
    RewardBreakdown,
    RewardConstants,
    crowd_densities,
    crowd_density,
    crowd_reward,
    episode_total,
    is_blocking,
    step_reward,
    zeta,
)
from crowdmapf.world import Action, Grid, WorldSpec, WorldState, generate_world, step

C = RewardConstants()


def make_state(cells, positions, goals=None):
    positions = np.asarray(positions, dtype=np.int64)
    if goals is None:
        goals = positions[::-1].copy()
    return WorldState(
        Grid(np.asarray(cells, dtype=bool)), positions,
        np.asarray(goals, dtype=np.int64),
    )


def empty(m):
    return np.zeros((m, m), dtype=bool)


# ---------------------------------------------------------------------------
# Crowding threshold

def test_zeta_fixture():
    assert abs(zeta(8, 20, 0.0) - (0.7 + 8 / 392)) < 1e-12
    assert abs(zeta(8, 20, 0.0) - 0.7204081632653061) < 1e-12


def test_zeta_cap():
    assert zeta(64, 20, 0.3) == 0.95


def test_zeta_monotone_in_agents():
    vals = [zeta(a, 20, 0.1) for a in range(1, 200)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_zeta_monotone_in_density():
    vals = [zeta(8, 20, d) for d in np.linspace(0.0, 0.6, 200)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_zeta_overpacked_raises():
    with pytest.raises(ValueError):
        zeta(100, 10, 0.0)
    with pytest.raises(ValueError):
        zeta(50, 10, 0.5)


# ---------------------------------------------------------------------------
# Local density

def test_crowd_density_corner_with_obstacle():
    # 4x4 world, agent at the corner: the 5x5 box clips to a 3x3 block of
    # which one cell is an obstacle, so 3 agents over 8 free cells.
    cells = empty(4)
    cells[1, 1] = True
    state = make_state(cells, [[0, 0], [0, 1], [2, 2], [3, 3]],
                       goals=[[3, 0], [3, 1], [0, 2], [0, 3]])
    assert crowd_density(state, 0, window=5) == pytest.approx(3 / 8)


def test_crowd_density_counts_self():
    state = make_state(empty(9), [[4, 4]], goals=[[0, 0]])
    assert crowd_density(state, 0, window=5) == pytest.approx(1 / 25)


def test_crowd_density_window_validation():
    state = make_state(empty(5), [[2, 2]], goals=[[0, 0]])
    with pytest.raises(ValueError):
        crowd_density(state, 0, window=4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), a=st.integers(1, 8))
def test_crowd_densities_matches_scalar(seed, a):
    world = generate_world(WorldSpec(9, 0.2, a, seed))
    batch = crowd_densities(world, window=5)
    for i in range(a):
        assert batch[i] == crowd_density(world, i, window=5)


# ---------------------------------------------------------------------------
# Crowd reward edges

def test_crowd_reward_fixtures():
    assert crowd_reward(0.385, 0.875, 0.75) == -0.3
    assert crowd_reward(0.8, 0.5, 0.75) == 0.3


def test_crowd_reward_boundary_is_crowded():
    # Sitting exactly at the threshold counts as inside the crowd.
    assert crowd_reward(0.7, 0.75, 0.75) == -0.3
    assert crowd_reward(0.75, 0.74, 0.75) == 0.3
    assert crowd_reward(0.75, 0.75, 0.75) == 0.0
    assert crowd_reward(0.8, 0.9, 0.75) == 0.0
    assert crowd_reward(0.2, 0.3, 0.75) == 0.0


@given(
    st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=2, max_size=30),
    st.floats(0.2, 0.95, allow_nan=False),
)
def test_crowd_reward_telescopes_on_closed_paths(path, z):
    # Any density walk that returns to its start nets zero crowd reward:
    # threshold crossings in and out must alternate.
    path = path + [path[0]]
    total = sum(crowd_reward(a, b, z) for a, b in zip(path, path[1:]))
    assert total == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Step reward

def quiet_crowd():
    # Threshold no empty-world transition can cross.
    return CrowdParams(window=5, zeta=0.95)


def test_step_reward_move_cost():
    before = make_state(empty(8), [[4, 4]], goals=[[0, 0]])
    after, ev = step(before, [Action.NORTH])
    r, bd = step_reward(before, [Action.NORTH], ev, after, C, quiet_crowd())
    assert r[0] == pytest.approx(-0.3)
    assert (bd.w_m, bd.w_c, bd.w_s_penalized) == (1, 0, 0)


def test_step_reward_collision_cost():
    before = make_state(empty(8), [[0, 4]], goals=[[4, 0]])
    after, ev = step(before, [Action.NORTH])
    r, bd = step_reward(before, [Action.NORTH], ev, after, C, quiet_crowd())
    assert r[0] == pytest.approx(-2.0)
    assert bd.w_c == 1 and bd.w_m == 0


def test_step_reward_idle_off_goal_penalized():
    before = make_state(empty(8), [[4, 4]], goals=[[0, 0]])
    after, ev = step(before, [Action.STAY])
    r, bd = step_reward(before, [Action.STAY], ev, after, C, quiet_crowd())
    assert r[0] == pytest.approx(-0.5)
    assert bd.w_s_penalized == 1


def test_step_reward_idle_on_goal_free():
    before = make_state(empty(8), [[4, 4], [0, 0]], goals=[[4, 4], [7, 7]])
    after, ev = step(before, [Action.STAY, Action.EAST])
    r, bd = step_reward(
        before, [Action.STAY, Action.EAST], ev, after, C, quiet_crowd()
    )
    assert r[0] == pytest.approx(0.0)
    assert bd.w_s_penalized == 0


def test_step_reward_team_bonus_on_completion():
    before = make_state(empty(8), [[0, 0], [7, 6]], goals=[[0, 0], [7, 7]])
    after, ev = step(before, [Action.STAY, Action.EAST])
    r, bd = step_reward(
        before, [Action.STAY, Action.EAST], ev, after, C, quiet_crowd()
    )
    assert after.all_on_goal()
    assert r[0] == pytest.approx(20.0)           # idle on goal + bonus
    assert r[1] == pytest.approx(20.0 - 0.3)     # move + bonus
    assert bd.w_e == 2


def test_step_reward_crowd_event():
    # 4 agents in one 5x5 box on a big empty map; the mover enters a region
    # whose density crosses a low threshold.
    crowd = CrowdParams(window=5, zeta=0.7)
    before = make_state(
        empty(20),
        [[10, 3], [10, 6], [11, 6], [9, 6]],
        goals=[[0, 0], [0, 1], [0, 2], [0, 3]],
    )
    after, ev = step(
        before, [Action.EAST, Action.STAY, Action.STAY, Action.STAY]
    )
    db = crowd_densities(before, 5)
    da = crowd_densities(after, 5)
    r, bd = step_reward(
        before, [Action.EAST] + [Action.STAY] * 3, ev, after, C, crowd
    )
    exp07 = ((db < 0.7) & (0.7 <= da)).sum()
    assert bd.w_crowd_in == int(exp07)


def test_step_reward_precomputed_densities_match():
    world = generate_world(WorldSpec(10, 0.1, 4, 3))
    crowd = CrowdParams(window=5, zeta=0.75)
    acts = [Action.STAY, Action.NORTH, Action.EAST, Action.STAY]
    after, ev = step(world, acts)
    r1, b1 = step_reward(world, acts, ev, after, C, crowd)
    r2, b2 = step_reward(
        world, acts, ev, after, C, crowd,
        densities_before=crowd_densities(world, 5),
        densities_after=crowd_densities(after, 5),
    )
    assert np.array_equal(r1, r2) and b1 == b2


# ---------------------------------------------------------------------------
# Blocking

def corridor_world():
    # Long top corridor with a one-cell gate at (1, 6); the detour around
    # the bottom is >= 10 steps longer when the gate is plugged.
    m = 12
    cells = np.ones((m, m), dtype=bool)
    cells[0, :] = False          # top corridor
    cells[1, 6] = False          # gate below the corridor
    cells[2, 6] = False
    cells[3, :] = False          # distant parallel corridor
    cells[1, 0] = False          # west connector
    cells[2, 0] = False
    cells[1, 11] = False         # east connector
    cells[2, 11] = False
    return cells


def test_blocking_gate_detected():
    cells = corridor_world()
    # Agent 1 plugs the gate; agent 0 wants to go from above the gate to
    # below it and now must loop around a connector.
    state = make_state(cells, [[0, 6], [1, 6]], goals=[[3, 6], [3, 0]])
    assert is_blocking(state, 1, detour=10)
    assert not is_blocking(state, 0, detour=10)


def test_blocking_open_field_negative():
    state = make_state(empty(10), [[4, 4], [4, 5]], goals=[[0, 0], [9, 9]])
    assert not is_blocking(state, 0)
    assert not is_blocking(state, 1)


def test_blocking_monitor_matches_oracle():
    # Independent oracle: flood fill from the victim's position, once on the
    # free grid and once with the blocker's cell plugged. Plugging the
    # victim's goal itself makes it unreachable, which counts as blocking.
    def bfs(cells, src):
        m = cells.shape[0]
        dist = np.full((m, m), -1, dtype=int)
        dist[src] = 0
        frontier = [src]
        while frontier:
            nxt = []
            for r, c in frontier:
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < m and 0 <= nc < m and not cells[nr, nc] \
                            and dist[nr, nc] < 0:
                        dist[nr, nc] = dist[r, c] + 1
                        nxt.append((nr, nc))
            frontier = nxt
        return dist

    def oracle(state, agent_id, detour):
        for j in range(state.num_agents):
            if j == agent_id:
                continue
            jp = tuple(state.positions[j])
            goal = tuple(state.goals[j])
            d_free = bfs(state.grid.cells, jp)[goal]
            if d_free <= 0:
                continue  # on goal or unreachable anyway
            plugged = state.grid.cells.copy()
            plugged[tuple(state.positions[agent_id])] = True
            d_plug = bfs(plugged, jp)[goal]
            if d_plug < 0 or d_plug - d_free >= detour:
                return True
        return False

    checked = 0
    for seed in range(40):
        world = generate_world(WorldSpec(8, 0.25, 4, seed))
        monitor = BlockingMonitor(world.grid)
        for i in range(world.num_agents):
            got = monitor.agent_blocking(world, i, 10)
            assert got == oracle(world, i, 10)
            checked += 1
    assert checked == 160


# ---------------------------------------------------------------------------
# Episode totals

def test_episode_total_dot_product():
    bd = RewardBreakdown(
        w_m=7, w_c=2, w_s_penalized=3, w_e=4,
        w_crowd_in=1, w_crowd_out=2, w_blocking=1,
    )
    expect = (7 * -0.3 + 2 * -2.0 + 3 * -0.5 + 4 * 20.0
              + 1 * -0.3 + 2 * 0.3 + 1 * -2.0)
    assert episode_total(bd, C) == pytest.approx(expect)
    assert bd.total(C) == pytest.approx(expect)


@given(st.lists(st.integers(0, 50), min_size=7, max_size=7))
def test_episode_total_linear_in_counts(counts):
    bd = RewardBreakdown(*counts)
    rc = RewardConstants()
    expect = (counts[0] * rc.r_move + counts[1] * rc.r_collision
              + counts[2] * rc.r_idle_off_goal + counts[3] * rc.r_team
              + counts[4] * rc.r_crowd_in + counts[5] * rc.r_crowd_out
              + counts[6] * rc.r_blocking)
    assert episode_total(bd, rc) == pytest.approx(expect)


def test_breakdown_accumulates_to_stepwise_sum():
    # Tally invariance: summing per-step rewards equals the dot product of
    # accumulated counts on a random multi-agent episode.
    world = generate_world(WorldSpec(8, 0.1, 4, seed=5))
    crowd = CrowdParams(window=5, zeta=zeta(4, 8, 0.1))
    rng = np.random.default_rng(11)
    total_bd = RewardBreakdown()
    stepwise = 0.0
    for _ in range(30):
        acts = [Action(int(a)) for a in rng.integers(0, 5, size=4)]
        after, ev = step(world, acts)
        r, bd = step_reward(world, acts, ev, after, C, crowd)
        stepwise += float(r.sum())
        total_bd.add(bd)
        world = after
        if world.all_on_goal():
            break
    assert episode_total(total_bd, C) == pytest.approx(stepwise)


def test_crowd_params_validation():
    with pytest.raises(ValueError):
        CrowdParams(window=4, zeta=0.8)
    with pytest.raises(ValueError):
        CrowdParams(window=5, zeta=0.5)
    cp = CrowdParams.from_spec(WorldSpec(20, 0.0, 8, 0))
    assert cp.zeta == pytest.approx(0.7204081632653061)
