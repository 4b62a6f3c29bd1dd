"""Scenario and replay files plus an ASCII renderer.

A scenario file captures a concrete world (spec, explicit obstacle list,
agent starts and goals) and round-trips bit-exactly: integers stay integers
and the density float serializes via repr. A replay file is a scenario plus
the per-step joint actions of one episode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .world import Action, Grid, WorldSpec, WorldState, step

SCENARIO_VERSION = 1
AGENT_GLYPHS = "0123456789abcdefghijklmnopqrstuvwxyz"


def world_to_dict(world: WorldState, spec: WorldSpec) -> dict:
    obstacles = [[int(r), int(c)] for r, c in np.argwhere(world.grid.cells)]
    return {
        "version": SCENARIO_VERSION,
        "spec": {
            "size": spec.size,
            "obstacle_density": spec.obstacle_density,
            "num_agents": spec.num_agents,
            "seed": spec.seed,
        },
        "obstacles": obstacles,
        "agents": [
            {
                "id": i,
                "start": [int(world.positions[i, 0]), int(world.positions[i, 1])],
                "goal": [int(world.goals[i, 0]), int(world.goals[i, 1])],
            }
            for i in range(world.num_agents)
        ],
    }


def world_from_dict(data: dict) -> tuple[WorldState, WorldSpec]:
    if data.get("version") != SCENARIO_VERSION:
        raise ValueError(f"unsupported scenario version {data.get('version')!r}")
    s = data["spec"]
    spec = WorldSpec(
        size=int(s["size"]),
        obstacle_density=float(s["obstacle_density"]),
        num_agents=int(s["num_agents"]),
        seed=int(s["seed"]),
    )
    cells = np.zeros((spec.size, spec.size), dtype=bool)
    for r, c in data["obstacles"]:
        cells[int(r), int(c)] = True
    agents = sorted(data["agents"], key=lambda a: a["id"])
    if [a["id"] for a in agents] != list(range(len(agents))):
        raise ValueError("agent ids must be 0..A-1")
    positions = np.array([a["start"] for a in agents], dtype=np.int64)
    goals = np.array([a["goal"] for a in agents], dtype=np.int64)
    world = WorldState(Grid(cells), positions, goals, t=0)
    world.validate()
    return world, spec


def save_scenario(path, world: WorldState, spec: WorldSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world_to_dict(world, spec), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_scenario(path) -> tuple[WorldState, WorldSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return world_from_dict(json.load(fh))


def save_replay(path, world: WorldState, spec: WorldSpec,
                joint_actions: list[list[Action]]) -> None:
    """joint_actions: one list of per-agent actions per step."""
    data = world_to_dict(world, spec)
    data["actions"] = [[int(a) for a in stepa] for stepa in joint_actions]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_replay(path) -> tuple[WorldState, WorldSpec, list[list[Action]]]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    world, spec = world_from_dict(data)
    actions = [[Action(a) for a in stepa] for stepa in data.get("actions", [])]
    return world, spec, actions


def render_ascii(state: WorldState) -> str:
    """Fixed-width map: '#' obstacle, '.' free, '+' an agent's goal, agents
    as base-36 ids, '*' for an agent sitting on its own goal."""
    m = state.grid.size
    rows = [
        ["#" if state.grid.cells[r, c] else "." for c in range(m)]
        for r in range(m)
    ]
    for i in range(state.num_agents):
        gr, gc = (int(x) for x in state.goals[i])
        if rows[gr][gc] == ".":
            rows[gr][gc] = "+"
    for i in range(state.num_agents):
        r, c = (int(x) for x in state.positions[i])
        rows[r][c] = "*" if state.on_goal[i] else AGENT_GLYPHS[i % len(AGENT_GLYPHS)]
    return "\n".join("".join(row) for row in rows)


def replay_frames(world: WorldState, joint_actions: list[list[Action]]):
    """Yield (t, state, frame) for the initial state and every step of a
    replayed action sequence."""
    state = world
    yield 0, state, render_ascii(state)
    for t, actions in enumerate(joint_actions, start=1):
        state, _ = step(state, actions)
        yield t, state, render_ascii(state)
