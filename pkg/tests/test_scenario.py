"""Scenario/replay files and the ASCII renderer."""

import json

import numpy as np
import pytest

from crowdmapf.scenario import (
    load_replay,
    load_scenario,
    render_ascii,
    replay_frames,
    save_replay,
    save_scenario,
    world_from_dict,
    world_to_dict,
)
from crowdmapf.world import (
    Action,
    Grid,
    WorldSpec,
    WorldState,
    generate_world,
)


def make_state(cells, positions, goals):
    return WorldState(
        Grid(np.asarray(cells, dtype=bool)),
        np.asarray(positions, dtype=np.int64),
        np.asarray(goals, dtype=np.int64),
        t=0,
    )


def test_scenario_round_trip(tmp_path):
    spec = WorldSpec(12, 0.25, 4, 99)
    world = generate_world(spec)
    path = tmp_path / "scene.json"
    save_scenario(path, world, spec)
    loaded, loaded_spec = load_scenario(path)
    assert loaded_spec == spec
    assert np.array_equal(loaded.grid.cells, world.grid.cells)
    assert np.array_equal(loaded.positions, world.positions)
    assert np.array_equal(loaded.goals, world.goals)
    assert loaded.t == 0


def test_scenario_density_float_survives():
    spec = WorldSpec(10, 0.1, 1, 0)
    world = generate_world(spec)
    data = json.loads(json.dumps(world_to_dict(world, spec)))
    _, spec2 = world_from_dict(data)
    assert spec2.obstacle_density == 0.1


def test_scenario_version_check():
    spec = WorldSpec(6, 0.0, 1, 0)
    data = world_to_dict(generate_world(spec), spec)
    data["version"] = 2
    with pytest.raises(ValueError):
        world_from_dict(data)


def test_scenario_agent_id_check():
    spec = WorldSpec(6, 0.0, 2, 0)
    data = world_to_dict(generate_world(spec), spec)
    data["agents"][0]["id"] = 5
    with pytest.raises(ValueError):
        world_from_dict(data)


def test_replay_round_trip(tmp_path):
    spec = WorldSpec(8, 0.1, 2, 7)
    world = generate_world(spec)
    actions = [
        [Action.EAST, Action.STAY],
        [Action.NORTH, Action.WEST],
    ]
    path = tmp_path / "replay.json"
    save_replay(path, world, spec, actions)
    w2, s2, acts = load_replay(path)
    assert s2 == spec
    assert acts == actions
    assert np.array_equal(w2.positions, world.positions)


def test_render_ascii_glyphs():
    # Agent 0 off goal, agent 1 on its goal, one obstacle, one free goal cell.
    state = make_state(
        [[False, False, False],
         [False, True, False],
         [False, False, False]],
        positions=[[0, 0], [2, 2]],
        goals=[[0, 2], [2, 2]],
    )
    assert render_ascii(state) == "0.+\n.#.\n..*"


def test_render_ascii_agent_covers_goal_marker():
    # An agent standing on someone else's goal hides the '+'.
    state = make_state(
        [[False, False], [False, False]],
        positions=[[0, 0], [0, 1]],
        goals=[[0, 1], [1, 1]],
    )
    assert render_ascii(state) == "01\n.+"


def test_replay_frames_walk():
    state = make_state(
        [[False, False, False]] * 3,
        positions=[[0, 0]],
        goals=[[0, 2]],
    )
    frames = list(replay_frames(state, [[Action.EAST], [Action.EAST]]))
    assert [t for t, _, _ in frames] == [0, 1, 2]
    assert frames[0][2].splitlines()[0] == "0.+"
    assert frames[1][2].splitlines()[0] == ".0+"
    assert frames[2][2].splitlines()[0] == "..*"
    assert frames[2][1].on_goal.all()
