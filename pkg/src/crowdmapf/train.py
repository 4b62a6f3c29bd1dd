"""Training orchestrator: worker loops, the shared parameter store, episode
rollouts with optional expert demonstrations, and run manifests.

Each worker repeatedly pulls a parameter snapshot, samples an environment
from the curriculum, rolls out one episode in which agent 0 is the learner
and every other agent runs the same snapshot (self-play), computes the loss
gradient for the learner's trajectory, and pushes it to the store. Episode
grain keeps the one-worker mode bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .curriculum import CurriculumState, demo_mode, observe_episode, sample_spec
from .expert import SearchBudget, expert_action, plan_for_world
from .policy import (
    Hyper,
    PolicyParams,
    Trajectory,
    apply_gradients,
    forward_batch,
    init_params,
    losses_and_grads,
    sample_actions,
)
from .reward import (
    BlockingMonitor,
    CrowdParams,
    RewardBreakdown,
    crowd_densities,
    step_reward,
    zeta,
)
from .world import (
    Action,
    EpisodeStatus,
    WorldSpec,
    action_masks,
    episode_status,
    generate_world,
    max_episode_length,
    observe,
    observe_batch,
    step,
)


class ParameterStore:
    """The single shared object of a training run: a flat parameter vector
    behind a lock, with atomic snapshot and clipped-SGD update."""

    def __init__(self, params: PolicyParams, hyper: Hyper):
        self._flat = params.flat.copy()
        self._hyper = hyper
        self._lock = threading.Lock()
        self.version = 0

    def snapshot(self) -> PolicyParams:
        with self._lock:
            return PolicyParams(self._flat.copy())

    def update(self, grads: np.ndarray) -> int:
        with self._lock:
            self._flat = apply_gradients(
                PolicyParams(self._flat), grads, self._hyper
            ).flat
            self.version += 1
            return self.version


@dataclass
class RunManifest:
    """Immutable summary of a finished training run."""

    config: dict
    code_version: str
    seed: int
    workers: int
    total_episodes: int
    per_level_episodes: dict
    demo_episodes: int
    success_episodes: int
    mean_losses: dict
    wall_time_s: float
    checkpoint_path: Optional[str] = None
    final_metrics_path: Optional[str] = None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, sort_keys=True, indent=1)
            fh.write("\n")


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    success: bool
    learner_reward: float
    breakdown: RewardBreakdown
    demo: bool
    steps: int


def rollout_episode(
    params: PolicyParams,
    spec: WorldSpec,
    demo: bool,
    config: TrainConfig,
    rng: np.random.Generator,
) -> EpisodeResult:
    """Run one training episode and assemble the learner's trajectory.

    In demonstration episodes every agent follows the expert plan and the
    trajectory carries demo flags for the behavior-cloning loss; when no
    plan can be found the episode silently falls back to exploration.
    """
    world = generate_world(spec)
    limit = max_episode_length(spec, config.world.alpha, config.world.beta)
    consts = config.reward.constants()
    crowd = CrowdParams(
        window=config.reward.crowd_window,
        zeta=zeta(spec.num_agents, spec.size, spec.obstacle_density),
    )
    detour = config.reward.blocking_detour
    a = spec.num_agents
    monitor = BlockingMonitor(world.grid) if a > 1 else None

    plan = None
    if demo:
        plan = plan_for_world(
            world,
            budget=SearchBudget(
                max_nodes=config.expert.od_max_nodes,
                timeout_ms=config.expert.od_timeout_ms,
            ),
            order_seed=spec.seed % 2**32,
            agent_cap=config.expert.od_agent_cap,
        )
        if plan is None:
            demo = False

    channels_l, gvecs_l, actions_l, masks_l = [], [], [], []
    rewards_l, values_l, block_l, ongoal_l = [], [], [], []
    breakdown = RewardBreakdown()
    learner_reward = 0.0

    state = world
    blocking_now = np.zeros(a, dtype=bool)
    if monitor is not None:
        blocking_now[0] = monitor.agent_blocking(state, 0, detour)
    densities = crowd_densities(state, crowd.window)

    # Demonstration episodes act from the plan, so only the learner's
    # observation and value are computed; exploration episodes batch all
    # agents through the network.
    while episode_status(state, limit) == EpisodeStatus.RUNNING:
        if demo:
            obs = observe(state, 0)
            channels = obs.channels[None]
            gvecs = obs.goal_vec[None]
        else:
            channels, gvecs = observe_batch(state)
        logits, values, _, _ = forward_batch(params, channels, gvecs)
        masks = action_masks(state)
        if demo:
            acts = [expert_action(plan, i, state.t) for i in range(a)]
        else:
            acts = [Action(int(x)) for x in sample_actions(logits, masks, rng)]
        new_state, events = step(state, acts)
        blocking_after = np.zeros(a, dtype=bool)
        if monitor is not None:
            # Flags are needed for stationary agents (penalty) and for the
            # learner (next step's head label); movers can't be penalized.
            for i in range(a):
                if i == 0 or not events.moved[i]:
                    blocking_after[i] = monitor.agent_blocking(
                        new_state, i, detour
                    )
        densities_after = crowd_densities(new_state, crowd.window)
        rewards, bd = step_reward(
            state, acts, events, new_state, consts, crowd,
            blocking=blocking_after, monitor=monitor, detour=detour,
            densities_before=densities, densities_after=densities_after,
        )
        densities = densities_after
        breakdown.add(bd)

        channels_l.append(channels[0])
        gvecs_l.append(gvecs[0])
        actions_l.append(int(acts[0]))
        masks_l.append(masks[0])
        rewards_l.append(float(rewards[0]))
        values_l.append(float(values[0]))
        block_l.append(float(blocking_now[0]))
        ongoal_l.append(float(state.on_goal[0]))
        learner_reward += float(rewards[0])

        state = new_state
        blocking_now = blocking_after

    success = episode_status(state, limit) == EpisodeStatus.SUCCESS
    bootstrap = 0.0
    if not success:
        obs = observe(state, 0)
        _, val, _, _ = forward_batch(params, obs.channels[None], obs.goal_vec[None])
        bootstrap = float(val[0])

    t = len(actions_l)
    traj = Trajectory(
        channels=np.stack(channels_l),
        goal_vecs=np.stack(gvecs_l),
        actions=np.array(actions_l),
        masks=np.stack(masks_l),
        rewards=np.array(rewards_l),
        values=np.array(values_l),
        blocking_labels=np.array(block_l),
        on_goal_labels=np.array(ongoal_l),
        demo=np.full(t, demo, dtype=bool),
        bootstrap=bootstrap,
    )
    return EpisodeResult(
        trajectory=traj,
        success=success,
        learner_reward=learner_reward,
        breakdown=breakdown,
        demo=demo,
        steps=t,
    )


def train(
    config: TrainConfig,
    out_dir: Optional[str] = None,
    curriculum_state: Optional[CurriculumState] = None,
    initial_params: Optional[PolicyParams] = None,
) -> tuple[PolicyParams, RunManifest]:
    """Run the full training loop and return final parameters + manifest.

    With `out_dir` set, periodic and final checkpoints land in
    out_dir/checkpoint.bin and the manifest in out_dir/manifest.json.
    """
    tc = config.train
    started = time.monotonic()
    hyper = config.policy.hyper()
    params0 = initial_params if initial_params is not None else init_params(tc.seed)
    store = ParameterStore(params0, hyper)

    cur = curriculum_state or CurriculumState(
        plateau_window=config.curriculum.initial_plateau_window,
        boost_probability=config.curriculum.boost_probability,
        boost_capacity=config.curriculum.boost_capacity,
        ma_window=config.curriculum.reward_ma_window,
    )
    if tc.pin_level is not None:
        cur.sigma = tc.pin_level
    allow_advance = tc.pin_level is None

    cur_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 7]))
    idx_lock = threading.Lock()
    cur_lock = threading.Lock()
    stats_lock = threading.Lock()
    next_idx = [0]
    per_level: dict[int, int] = defaultdict(int)
    loss_sums: dict[str, float] = defaultdict(float)
    counts = {"episodes": 0, "demo": 0, "success": 0}
    errors: list[BaseException] = []

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    ckpt_file = out_path / "checkpoint.bin" if out_path else None

    def save_ckpt(episode: int) -> None:
        if ckpt_file is None:
            return
        with cur_lock:
            cur_dict = cur.to_dict()
        save_checkpoint(
            ckpt_file,
            store.snapshot(),
            curriculum=cur_dict,
            meta={"episode": episode, "seed": tc.seed},
        )

    def worker(worker_id: int) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 101, worker_id]))
        try:
            while True:
                with idx_lock:
                    idx = next_idx[0]
                    if idx >= tc.episodes:
                        return
                    next_idx[0] += 1
                with cur_lock:
                    sigma_now = cur.sigma
                    spec = sample_spec(
                        cur, cur_rng,
                        fixed_size=tc.fixed_size,
                        fixed_density=tc.fixed_density,
                        fixed_agents=tc.fixed_agents,
                    )
                    demo = demo_mode(cur_rng, config.curriculum.demo_probability)
                snapshot = store.snapshot()
                result = rollout_episode(snapshot, spec, demo, config, rng)
                report, grads = losses_and_grads(snapshot, result.trajectory, hyper)
                store.update(grads)
                with cur_lock:
                    observe_episode(
                        cur, result.learner_reward, result.success, spec,
                        allow_advance=allow_advance,
                        improvement_tol=config.curriculum.improvement_tol,
                        level_episode_cap=config.curriculum.level_episode_cap,
                    )
                with stats_lock:
                    per_level[sigma_now] += 1
                    counts["episodes"] += 1
                    counts["demo"] += int(result.demo)
                    counts["success"] += int(result.success)
                    loss_sums["total"] += report.total
                    loss_sums["policy"] += report.policy_loss
                    loss_sums["value"] += report.value_loss
                    loss_sums["blocking"] += report.blocking_loss
                    loss_sums["on_goal"] += report.on_goal_loss
                    loss_sums["bc"] += report.bc_loss
                    loss_sums["entropy"] += report.entropy
                done = idx + 1
                if tc.checkpoint_interval and done % tc.checkpoint_interval == 0:
                    save_ckpt(done)
                if tc.log_interval and done % tc.log_interval == 0:
                    with cur_lock:
                        window = cur.reward_window
                        avg = sum(window) / len(window) if window else 0.0
                        sig = cur.sigma
                    with stats_lock:
                        sr = counts["success"] / max(1, counts["episodes"])
                    print(
                        f"[train] episode {done}/{tc.episodes} level {sig} "
                        f"avg_reward {avg:.2f} success {sr:.2%}",
                        flush=True,
                    )
        except BaseException as exc:  # propagate to the main thread
            errors.append(exc)

    threads = [
        threading.Thread(target=worker, args=(w,), daemon=True)
        for w in range(tc.workers)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]

    final_params = store.snapshot()
    wall = time.monotonic() - started
    n = max(1, counts["episodes"])
    manifest = RunManifest(
        config=config.to_dict(),
        code_version=__version__,
        seed=tc.seed,
        workers=tc.workers,
        total_episodes=counts["episodes"],
        per_level_episodes={str(k): v for k, v in sorted(per_level.items())},
        demo_episodes=counts["demo"],
        success_episodes=counts["success"],
        mean_losses={k: v / n for k, v in sorted(loss_sums.items())},
        wall_time_s=wall,
        checkpoint_path=str(ckpt_file) if ckpt_file else None,
    )
    if out_path is not None:
        save_ckpt(counts["episodes"])
        manifest.save(out_path / "manifest.json")
    return final_params, manifest
