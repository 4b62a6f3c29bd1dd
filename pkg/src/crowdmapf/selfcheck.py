"""Built-in diagnostics: quick oracle checks of the arithmetic contracts,
finite-difference validation of the hand-written backward pass (with a
deliberately corrupted-gradient negative control), optimality spot checks of
the expert against an exhaustive joint search, a metrics aggregation oracle,
and a world-invariant fuzz.

Every check recomputes its expected values from scratch with plain Python so
a bug in the library cannot hide behind itself. `run_selfcheck` prints one
line per check and returns a process exit code (0 all green, 1 otherwise).
"""

from __future__ import annotations

import math
import sys
from dataclasses import replace

import numpy as np

from .curriculum import CurriculumState, level_ranges, observe_episode
from .evaluation import EpisodeRecord, compute_metrics, emit_report
from .expert import brute_force_joint_cost, expert_action, plan_od_astar
from .policy import (
    LAYOUT,
    PARAM_COUNT,
    Hyper,
    PolicyParams,
    Trajectory,
    compute_losses,
    init_params,
    losses_and_grads,
    sample_actions,
)
from .reward import CrowdParams, zeta
from .world import (
    Action,
    EpisodeStatus,
    WorldSpec,
    action_masks,
    episode_status,
)


def _block_of(index: int) -> str:
    """Name of the parameter block a flat index falls into."""
    off = 0
    for name, shape in LAYOUT:
        n = int(np.prod(shape))
        if index < off + n:
            return name
        off += n
    raise IndexError(index)


# ---------------------------------------------------------------------------
# Arithmetic oracles

def check_episode_length() -> tuple[bool, str]:
    from .world import max_episode_length

    cases = 0
    for m in (4, 8, 10, 16, 20, 32, 40):
        for d in (0.0, 0.1, 0.17, 0.2, 0.3, 0.45, 0.6):
            for a in (1, 2, 4, 8, 17, 64):
                spec = WorldSpec(size=m, obstacle_density=d, num_agents=a, seed=0)
                want = math.floor(4.0 * m * (1.0 + d) + 5.0 * a + 1e-9)
                got = max_episode_length(spec)
                if got != want:
                    return False, f"L({m},{d},{a}) = {got}, expected {want}"
                cases += 1
    fixtures = [((20, 0.0, 8), 120), ((20, 0.3, 64), 424), ((10, 0.0, 1), 45)]
    for (m, d, a), want in fixtures:
        got = max_episode_length(WorldSpec(m, d, a, 0))
        if got != want:
            return False, f"fixture L({m},{d},{a}) = {got}, expected {want}"
    return True, f"{cases} grid cases + {len(fixtures)} fixtures"


def check_zeta() -> tuple[bool, str]:
    got = zeta(8, 20, 0.0)
    want = 0.7 + 8.0 / (400.0 - 8.0)
    if abs(got - want) > 1e-12:
        return False, f"zeta(8,20,0) = {got}, expected {want}"
    if abs(got - 0.7204) > 1e-4:
        return False, f"zeta(8,20,0) = {got}, fixture 0.7204 off by > 1e-4"
    if zeta(64, 20, 0.3) != 0.95:
        return False, "zeta(64,20,0.3) did not hit the 0.95 cap"
    prev = -1.0
    for a in range(1, 200):
        z = zeta(a, 20, 0.1)
        if z < prev - 1e-15:
            return False, f"zeta not monotone in agents at A={a}"
        prev = z
    try:
        zeta(400, 20, 0.0)
        return False, "over-packed world did not raise"
    except ValueError:
        pass
    return True, "fixtures, cap, monotonicity, over-packed guard"


def check_level_ranges() -> tuple[bool, str]:
    for sigma in range(0, 21):
        r = level_ranges(sigma)
        want_d = (min(0.05 * sigma, 0.2), min(0.1 + 0.1 * sigma, 0.6))
        want_s = (min(10 + 5 * sigma, 40), min(40 + 5 * sigma, 120))
        if (
            abs(r.d_lo - want_d[0]) > 1e-12
            or abs(r.d_hi - want_d[1]) > 1e-12
            or r.s_lo != want_s[0]
            or r.s_hi != want_s[1]
        ):
            return False, f"level_ranges({sigma}) = {r}, expected {want_d}, {want_s}"
    return True, "sigma 0..20 against closed forms"


def check_plateau_growth() -> tuple[bool, str]:
    state = CurriculumState(plateau_window=4, ma_window=8)
    spec = WorldSpec(size=10, obstacle_density=0.0, num_agents=1, seed=0)
    n = state.plateau_window
    seen = [n]
    # Constant rewards stall the moving average, forcing periodic advances.
    for _ in range(40):
        before = state.sigma
        observe_episode(state, total_reward=1.0, success=True, spec=spec)
        if state.sigma != before:
            want = math.ceil(1.5 * n)
            if state.plateau_window != want:
                return False, (
                    f"window grew {n} -> {state.plateau_window}, expected {want}"
                )
            n = state.plateau_window
            seen.append(n)
        if len(seen) >= 4:
            break
    if len(seen) < 4:
        return False, f"curriculum never advanced three times (windows {seen})"
    return True, f"plateau window growth {' -> '.join(map(str, seen))}"


# ---------------------------------------------------------------------------
# Gradient check

def _rollout_trajectory(params: PolicyParams, spec: WorldSpec, rng) -> Trajectory:
    from .world import generate_world, max_episode_length, observe, step
    from .reward import BlockingMonitor, RewardConstants, step_reward

    world = generate_world(spec)
    limit = min(max_episode_length(spec), 24)
    consts = RewardConstants()
    crowd = CrowdParams.from_spec(spec)
    monitor = BlockingMonitor(world.grid) if spec.num_agents > 1 else None
    a = spec.num_agents

    chans, gvs, acts_l, masks_l, rews, vals, blocks, ongoals = (
        [], [], [], [], [], [], [], []
    )
    state = world
    from .policy import forward_batch

    blocking_now = (
        monitor.blocking_flags(state) if monitor is not None
        else np.zeros(a, dtype=bool)
    )
    while episode_status(state, limit) == EpisodeStatus.RUNNING:
        channels = np.empty((a, 4, 10, 10))
        gvecs = np.empty((a, 2))
        for i in range(a):
            obs = observe(state, i)
            channels[i] = obs.channels
            gvecs[i] = obs.goal_vec
        logits, values, _, _ = forward_batch(params, channels, gvecs)
        masks = action_masks(state)
        idx = sample_actions(logits, masks, rng)
        actions = [Action(int(x)) for x in idx]
        new_state, events = step(state, actions)
        blocking_after = (
            monitor.blocking_flags(new_state) if monitor is not None
            else blocking_now
        )
        rewards, _ = step_reward(
            state, actions, events, new_state, consts, crowd,
            blocking=blocking_after, monitor=monitor,
        )
        chans.append(channels[0])
        gvs.append(gvecs[0])
        acts_l.append(int(actions[0]))
        masks_l.append(masks[0])
        rews.append(float(rewards[0]))
        vals.append(float(values[0]))
        blocks.append(float(blocking_now[0]))
        ongoals.append(float(state.on_goal[0]))
        state = new_state
        blocking_now = blocking_after

    t = len(acts_l)
    demo = np.zeros(t, dtype=bool)
    demo[::2] = True  # exercise the cloning loss on alternating steps
    return Trajectory(
        channels=np.stack(chans),
        goal_vecs=np.stack(gvs),
        actions=np.array(acts_l),
        masks=np.stack(masks_l),
        rewards=np.array(rews),
        values=np.array(vals),
        blocking_labels=np.array(blocks),
        on_goal_labels=np.array(ongoals),
        demo=demo,
        bootstrap=0.37,
    )


def _fd_mismatches(
    params: PolicyParams,
    traj: Trajectory,
    hyper: Hyper,
    indices,
    grads: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> list[tuple[int, str, float, float]]:
    """Central-difference comparison at the given flat indices.

    Relative error uses a 1e-4 floor in the denominator so dead-unit
    gradients (both sides numerically zero) compare in absolute terms.
    """
    bad = []
    flat = params.flat
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = compute_losses(params, traj, hyper).total
        flat[i] = orig - h
        f_minus = compute_losses(params, traj, hyper).total
        flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        g = float(grads[i])
        rel = abs(fd - g) / max(abs(fd), abs(g), 1e-4)
        if rel > tol:
            bad.append((int(i), _block_of(int(i)), fd, g))
    return bad


def check_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(20240601)
    hyper = Hyper()
    params = init_params(3)
    # Nudge every parameter off exact zero so no pre-activation sits exactly
    # on a relu kink or pool tie, which would make finite differences
    # one-sided.
    params.flat[:] += rng.normal(0.0, 1e-3, size=PARAM_COUNT)

    idx_rng = np.random.default_rng(7)
    indices = []
    off = 0
    for _, shape in LAYOUT:
        n = int(np.prod(shape))
        indices.extend(off + idx_rng.integers(0, n, size=2))
        off += n

    specs = [
        WorldSpec(size=8, obstacle_density=0.1, num_agents=2, seed=11),
        WorldSpec(size=10, obstacle_density=0.0, num_agents=3, seed=29),
    ]
    checked = 0
    for spec in specs:
        traj = _rollout_trajectory(params, spec, rng)
        _, grads = losses_and_grads(params, traj, hyper)
        bad = _fd_mismatches(params, traj, hyper, indices, grads)
        if bad:
            i, name, fd, g = bad[0]
            return False, (
                f"gradient mismatch in block '{name}' at flat index {i}: "
                f"finite difference {fd:.6g} vs analytic {g:.6g}"
            )
        checked += len(indices)

        # Negative control: corrupt one block's analytic gradient and require
        # the comparison to localize the damage to that block.
        target = "dense_w"
        corrupted = grads.copy()
        off = 0
        for name, shape in LAYOUT:
            n = int(np.prod(shape))
            if name == target:
                corrupted[off:off + n] += 1.0
                break
            off += n
        bad = _fd_mismatches(params, traj, hyper, indices, corrupted)
        blocks = {name for _, name, _, _ in bad}
        if blocks != {target}:
            return False, (
                f"negative control failed: corrupted '{target}' but "
                f"mismatches localized to {sorted(blocks) or 'nothing'}"
            )
    return True, (
        f"{checked} finite-difference probes across all {len(LAYOUT)} blocks; "
        f"negative control caught corrupted block 'dense_w'"
    )


# ---------------------------------------------------------------------------
# Expert optimality and replay

def check_expert() -> tuple[bool, str]:
    from .world import generate_world, step

    compared = 0
    for seed in range(20):
        a = 2 + seed % 2
        d = 0.0 if seed % 3 == 0 else 0.12
        spec = WorldSpec(size=5, obstacle_density=d, num_agents=a, seed=1000 + seed)
        world = generate_world(spec)
        plan = plan_od_astar(world)
        brute = brute_force_joint_cost(world)
        if plan is None or brute is None:
            return False, f"seed {spec.seed}: planner or oracle gave up"
        if plan.sum_of_costs != brute:
            return False, (
                f"seed {spec.seed}: operator decomposition cost "
                f"{plan.sum_of_costs} != exhaustive {brute}"
            )
        state = world
        for t in range(plan.makespan):
            actions = [expert_action(plan, i, t) for i in range(a)]
            state, events = step(state, actions)
            if events.collided.any():
                return False, f"seed {spec.seed}: plan replay collided at t={t}"
        if not state.all_on_goal():
            return False, f"seed {spec.seed}: plan replay missed the goals"
        compared += 1
    return True, f"{compared} instances optimal and collision-free on replay"


# ---------------------------------------------------------------------------
# Metrics oracle

def check_metrics() -> tuple[bool, str]:
    rng = np.random.default_rng(5150)
    for batch in range(6):
        a = int(rng.integers(1, 9))
        spec = WorldSpec(size=12, obstacle_density=0.1, num_agents=a, seed=0)
        force_failures = batch == 5
        records = []
        for ep in range(40):
            success = bool(rng.random() < 0.7) and not force_failures
            makespan = int(rng.integers(4, 80))
            records.append(
                EpisodeRecord(
                    spec=replace(spec, seed=ep),
                    success=success,
                    makespan=makespan,
                    moves_per_agent=[int(rng.integers(0, makespan + 1))
                                     for _ in range(a)],
                    collision_count=int(rng.integers(0, 18)),
                    seed=ep,
                )
            )
        row = compute_metrics(records)
        succ = [r for r in records if r.success]
        want_sr = 100.0 * len(succ) / len(records)
        if abs(row.success_rate - want_sr) > 1e-12:
            return False, f"success_rate {row.success_rate} != {want_sr}"
        if succ:
            want_mk = float(np.mean([r.makespan for r in succ]))
            want_mv = float(np.mean([sum(r.moves_per_agent) for r in succ]))
            if abs(row.mean_makespan - want_mk) > 1e-9:
                return False, f"mean_makespan {row.mean_makespan} != {want_mk}"
            if abs(row.mean_total_moves - want_mv) > 1e-9:
                return False, f"mean_total_moves {row.mean_total_moves} != {want_mv}"
        else:
            if row.mean_makespan is not None or row.mean_total_moves is not None:
                return False, "means over successes should be absent with none"
        want_cc = float(np.mean([r.collision_count for r in records]))
        if abs(row.mean_collision_count - want_cc) > 1e-9:
            return False, f"mean_collision_count {row.mean_collision_count} != {want_cc}"
        want_rate = want_cc / row.mean_makespan if succ else None
        if succ:
            if abs(row.collision_rate - want_rate) > 1e-9:
                return False, f"collision_rate {row.collision_rate} != {want_rate}"
        elif row.collision_rate is not None:
            return False, "collision_rate should be absent with no successes"
        if force_failures:
            rendered = emit_report([row], format="csv").splitlines()[1]
            cells = rendered.split(",")
            if cells[5] != "-" or cells[6] != "-" or cells[8] != "-":
                return False, f"dash convention violated in row: {rendered}"
    return True, "6 batches against direct recomputation, dash convention"


# ---------------------------------------------------------------------------
# World invariants

def check_world_invariants() -> tuple[bool, str]:
    from .world import generate_world, step

    rng = np.random.default_rng(99)
    steps = 0
    for seed in range(6):
        spec = WorldSpec(
            size=int(rng.integers(6, 14)),
            obstacle_density=float(rng.choice([0.0, 0.1, 0.2])),
            num_agents=int(rng.integers(2, 7)),
            seed=seed,
        )
        state = generate_world(spec)
        for _ in range(400):
            masks = action_masks(state)
            actions = [Action(int(x)) for x in sample_actions(
                np.zeros((spec.num_agents, 5)), masks, rng)]
            new_state, events = step(state, actions)
            try:
                new_state.validate()
            except AssertionError as exc:
                return False, f"seed {seed}: invariant violated: {exc}"
            if (events.moved & events.collided).any():
                return False, f"seed {seed}: agent both moved and collided"
            stayers = np.array([a == Action.STAY for a in actions])
            if (stayers & events.collided).any():
                return False, f"seed {seed}: stationary agent marked collided"
            state = new_state
            steps += 1
    return True, f"{steps} fuzzed steps, all invariants held"


# ---------------------------------------------------------------------------
# Driver

CHECKS = [
    ("episode-length formula", check_episode_length),
    ("crowding threshold", check_zeta),
    ("curriculum level ranges", check_level_ranges),
    ("plateau window growth", check_plateau_growth),
    ("analytic gradients vs finite differences", check_gradients),
    ("expert optimality and replay", check_expert),
    ("metrics aggregation", check_metrics),
    ("world invariants fuzz", check_world_invariants),
]


def run_selfcheck(stream=None) -> int:
    """Run every check; print one verdict line each; return exit status."""
    stream = stream if stream is not None else sys.stdout
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        mark = "ok " if ok else "FAIL"
        print(f"[{mark}] {name}: {detail}", file=stream)
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} of {len(CHECKS)} checks failed", file=stream)
        return 1
    print(f"all {len(CHECKS)} checks passed", file=stream)
    return 0


if __name__ == "__main__":
    sys.exit(run_selfcheck())
