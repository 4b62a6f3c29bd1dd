"""Grid world: generation, stepping semantics, observations, episode length."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdmapf.world import (
    ACTION_DELTAS,
    Action,
    EpisodeStatus,
    Grid,
    WorldGenerationError,
    WorldSpec,
    WorldState,
    action_masks,
    episode_status,
    generate_world,
    max_episode_length,
    observe,
    observe_batch,
    step,
    valid_actions,
)


def make_state(cells, positions, goals, t=0):
    return WorldState(
        Grid(np.asarray(cells, dtype=bool)),
        np.asarray(positions, dtype=np.int64),
        np.asarray(goals, dtype=np.int64),
        t=t,
    )


def empty(m):
    return np.zeros((m, m), dtype=bool)


# ---------------------------------------------------------------------------
# Episode length

def test_episode_length_fixtures():
    assert max_episode_length(WorldSpec(20, 0.0, 8, 0)) == 120
    assert max_episode_length(WorldSpec(20, 0.3, 64, 0)) == 424
    assert max_episode_length(WorldSpec(10, 0.0, 1, 0)) == 45


@given(
    m=st.integers(4, 120),
    d_hundredths=st.integers(0, 60),
    a=st.integers(1, 64),
)
def test_episode_length_matches_exact_arithmetic(m, d_hundredths, a):
    # Oracle in exact rational arithmetic; the implementation must floor the
    # mathematically intended value even when binary floats land a hair low.
    d = d_hundredths / 100.0
    exact = Fraction(4) * m * (1 + Fraction(d_hundredths, 100)) + Fraction(5) * a
    assert max_episode_length(WorldSpec(m, d, a, 0)) == math.floor(exact)


def test_episode_length_respects_alpha_beta():
    assert max_episode_length(WorldSpec(10, 0.0, 2, 0), alpha=1.0, beta=0.0) == 10


# ---------------------------------------------------------------------------
# Actions and masks

def test_action_geometry():
    # North is up (row decreases); the enum order is part of the contract.
    assert [int(a) for a in (Action.NORTH, Action.EAST, Action.SOUTH,
                             Action.WEST, Action.STAY)] == [0, 1, 2, 3, 4]
    assert ACTION_DELTAS[Action.NORTH].tolist() == [-1, 0]
    assert ACTION_DELTAS[Action.EAST].tolist() == [0, 1]
    assert ACTION_DELTAS[Action.SOUTH].tolist() == [1, 0]
    assert ACTION_DELTAS[Action.WEST].tolist() == [0, -1]
    assert ACTION_DELTAS[Action.STAY].tolist() == [0, 0]


def test_valid_actions_blocks_walls_and_obstacles():
    cells = empty(4)
    cells[1, 2] = True
    state = make_state(cells, [[1, 1]], [[3, 3]])
    acts = valid_actions(state, 0)
    assert acts == {Action.NORTH, Action.SOUTH, Action.WEST, Action.STAY}
    corner = make_state(cells, [[0, 0]], [[3, 3]])
    assert valid_actions(corner, 0) == {Action.EAST, Action.SOUTH, Action.STAY}


def test_action_masks_agree_with_valid_actions():
    rng = np.random.default_rng(0)
    for seed in range(10):
        world = generate_world(WorldSpec(8, 0.2, 4, seed))
        masks = action_masks(world)
        for i in range(world.num_agents):
            expect = np.zeros(5, dtype=bool)
            for a in valid_actions(world, i):
                expect[a] = True
            assert np.array_equal(masks[i], expect)


# ---------------------------------------------------------------------------
# Step conflict semantics

def test_step_plain_moves_apply():
    state = make_state(empty(5), [[2, 2]], [[0, 0]])
    new, ev = step(state, [Action.NORTH])
    assert new.positions.tolist() == [[1, 2]]
    assert not ev.collided[0] and ev.moved[0]
    assert new.t == state.t + 1


def test_step_out_of_bounds_rejected():
    state = make_state(empty(4), [[0, 0]], [[3, 3]])
    new, ev = step(state, [Action.NORTH])
    assert new.positions.tolist() == [[0, 0]]
    assert ev.collided[0] and not ev.moved[0]


def test_step_obstacle_rejected():
    cells = empty(4)
    cells[0, 1] = True
    state = make_state(cells, [[0, 0]], [[3, 3]])
    new, ev = step(state, [Action.EAST])
    assert new.positions.tolist() == [[0, 0]]
    assert ev.collided[0]


def test_step_vertex_conflict_rejects_all():
    state = make_state(empty(5), [[2, 1], [2, 3]], [[0, 0], [0, 4]])
    new, ev = step(state, [Action.EAST, Action.WEST])  # both aim at (2, 2)
    assert new.positions.tolist() == [[2, 1], [2, 3]]
    assert ev.collided.tolist() == [True, True]


def test_step_edge_swap_rejected():
    state = make_state(empty(5), [[2, 1], [2, 2]], [[0, 0], [0, 4]])
    new, ev = step(state, [Action.EAST, Action.WEST])
    assert new.positions.tolist() == [[2, 1], [2, 2]]
    assert ev.collided.tolist() == [True, True]


def test_step_into_stationary_agent_rejected():
    state = make_state(empty(5), [[2, 1], [2, 2]], [[0, 0], [0, 4]])
    new, ev = step(state, [Action.EAST, Action.STAY])
    assert new.positions.tolist() == [[2, 1], [2, 2]]
    assert ev.collided.tolist() == [True, False]
    assert ev.moved.tolist() == [False, False]


def test_step_following_a_mover_is_allowed():
    state = make_state(empty(5), [[2, 1], [2, 2]], [[0, 0], [0, 4]])
    new, ev = step(state, [Action.EAST, Action.EAST])
    assert new.positions.tolist() == [[2, 2], [2, 3]]
    assert not ev.collided.any()


def test_step_rejection_cascades_down_a_chain():
    # The leader hits a wall; both followers must be rejected in later
    # sweeps even though their own targets started out clear.
    state = make_state(
        empty(5), [[2, 2], [2, 1], [2, 0]], [[0, 0], [0, 1], [0, 2]]
    )
    new, ev = step(state, [Action.EAST, Action.EAST, Action.EAST])
    blocked = make_state(empty(5), [[2, 4], [2, 3], [2, 2]],
                         [[0, 0], [0, 1], [0, 2]])
    new2, ev2 = step(blocked, [Action.EAST, Action.EAST, Action.EAST])
    assert not ev.collided.any()  # open chain moves as one
    assert new.positions.tolist() == [[2, 3], [2, 2], [2, 1]]
    assert ev2.collided.tolist() == [True, True, True]  # wall stops everyone
    assert new2.positions.tolist() == [[2, 4], [2, 3], [2, 2]]


def test_step_wrong_arity_raises():
    state = make_state(empty(4), [[0, 0]], [[3, 3]])
    with pytest.raises(ValueError):
        step(state, [Action.STAY, Action.STAY])


def test_step_arrival_flags():
    state = make_state(empty(4), [[1, 1]], [[1, 2]])
    new, ev = step(state, [Action.EAST])
    assert ev.arrived.tolist() == [True]
    assert new.all_on_goal()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_step_invariants_random(seed, data):
    world = generate_world(WorldSpec(6, 0.15, 3, seed))
    for _ in range(8):
        acts = [
            Action(data.draw(st.integers(0, 4), label="a")) for _ in range(3)
        ]
        new, ev = step(world, acts)
        new.validate()
        assert not (ev.collided & ev.moved).any()
        stayed = [i for i, a in enumerate(acts) if a == Action.STAY]
        assert not ev.collided[stayed].any()
        world = new


# ---------------------------------------------------------------------------
# Generation

def test_generate_world_deterministic():
    spec = WorldSpec(12, 0.2, 4, seed=42)
    a, b = generate_world(spec), generate_world(spec)
    assert np.array_equal(a.grid.cells, b.grid.cells)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.goals, b.goals)


def test_generate_world_counts_and_distinctness():
    for seed in range(20):
        spec = WorldSpec(10, 0.25, 4, seed)
        world = generate_world(spec)
        # Carving on unsolvable draws can only remove obstacles.
        assert world.grid.cells.sum() <= int(0.25 * 100)
        world.validate()
        goals = {tuple(g) for g in world.goals.tolist()}
        assert len(goals) == 4
        for p, g in zip(world.positions.tolist(), world.goals.tolist()):
            assert p != g


def test_generate_world_connectivity():
    from crowdmapf.expert import bfs_distance

    for seed in range(20):
        world = generate_world(WorldSpec(14, 0.3, 8, seed))
        for i in range(8):
            d = bfs_distance(
                world.grid, world.positions[i], world.goals[i]
            )
            assert d is not None and d >= 1


def test_generate_world_rejects_bad_specs():
    with pytest.raises(WorldGenerationError):
        generate_world(WorldSpec(3, 0.0, 1, 0))
    with pytest.raises(WorldGenerationError):
        generate_world(WorldSpec(10, 0.7, 1, 0))
    with pytest.raises(WorldGenerationError):
        generate_world(WorldSpec(10, 0.0, 0, 0))
    with pytest.raises(WorldGenerationError):
        generate_world(WorldSpec(4, 0.0, 17, 0))


def test_validate_catches_violations():
    state = make_state(empty(4), [[0, 0], [0, 0]], [[3, 3], [2, 2]])
    with pytest.raises(AssertionError):
        state.validate()
    cells = empty(4)
    cells[1, 1] = True
    on_obstacle = make_state(cells, [[1, 1]], [[3, 3]])
    with pytest.raises(AssertionError):
        on_obstacle.validate()


# ---------------------------------------------------------------------------
# Observations

def test_observe_goal_due_east():
    state = make_state(empty(10), [[5, 2]], [[5, 7]])
    obs = observe(state, 0)
    assert obs.channels.shape == (4, 10, 10)
    assert obs.channels[2].sum() == 0 and obs.channels[3].sum() == 0
    assert np.allclose(obs.goal_vec, [0.0, 1.0])


def test_observe_on_goal_zero_vector():
    state = make_state(empty(10), [[3, 3]], [[3, 3]])
    assert np.array_equal(observe(state, 0).goal_vec, np.zeros(2))


def test_observe_unit_norm():
    rng = np.random.default_rng(3)
    for seed in range(10):
        world = generate_world(WorldSpec(12, 0.1, 4, seed))
        for i in range(4):
            n = np.linalg.norm(observe(world, i).goal_vec)
            assert n == 0.0 or abs(n - 1.0) < 1e-9


def test_observe_extent_and_oob_obstacles():
    # Agent in the top-left corner: rows/cols above and left of the map
    # read as out-of-extent and obstacle simultaneously.
    state = make_state(empty(10), [[0, 0]], [[9, 9]])
    obs = observe(state, 0)
    ext, obst = obs.channels[0], obs.channels[1]
    assert ext[4, 4] == 1.0  # anchor cell: the agent itself
    assert ext[:4, :].sum() == 0 and ext[:, :4].sum() == 0
    assert obst[:4, :].min() == 1.0 and obst[:, :4].min() == 1.0
    assert obst[4:, 4:].max() == 0.0


def test_observe_neighbor_and_clamped_goal():
    # Neighbor two cells east of the agent; its goal far north-east of the
    # window must clamp to the window border.
    state = make_state(
        empty(20), [[10, 10], [10, 12]], [[19, 19], [0, 19]]
    )
    obs = observe(state, 0)
    assert obs.channels[2][4, 6] == 1.0
    assert obs.channels[2].sum() == 1.0
    # Neighbor's goal (0, 19): rows clamp to 0, cols to 9 in window frame.
    assert obs.channels[3][0, 9] == 1.0
    assert obs.channels[3].sum() == 1.0


def test_observe_channels_binary():
    for seed in range(5):
        world = generate_world(WorldSpec(9, 0.2, 8, seed))
        for i in range(8):
            ch = observe(world, i).channels
            assert set(np.unique(ch)).issubset({0.0, 1.0})


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 100_000),
    m=st.integers(5, 24),
    a=st.integers(2, 8),
)
def test_observe_batch_matches_observe(seed, m, a):
    try:
        world = generate_world(WorldSpec(m, 0.15, a, seed))
    except WorldGenerationError:
        return
    channels, gvecs = observe_batch(world)
    assert channels.shape == (a, 4, 10, 10) and gvecs.shape == (a, 2)
    for i in range(a):
        obs = observe(world, i)
        assert np.array_equal(channels[i], obs.channels)
        assert np.array_equal(gvecs[i], obs.goal_vec)


# ---------------------------------------------------------------------------
# Episode status

def test_episode_status_transitions():
    state = make_state(empty(4), [[0, 0]], [[0, 1]])
    assert episode_status(state, 5) == EpisodeStatus.RUNNING
    done, _ = step(state, [Action.EAST])
    assert episode_status(done, 5) == EpisodeStatus.SUCCESS
    state.t = 5
    assert episode_status(state, 5) == EpisodeStatus.TIMEOUT
    with pytest.raises(ValueError):
        episode_status(state, 0)


def test_success_checked_before_timeout():
    state = make_state(empty(4), [[0, 1]], [[0, 1]], t=9)
    assert episode_status(state, 5) == EpisodeStatus.SUCCESS
