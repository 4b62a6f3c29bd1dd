"""crowdmapf: a crowd-aware multi-agent grid pathfinding workbench.

Grid world with simultaneous moves and collision rejection, shaped rewards
with local-density and blocking terms, an operator-decomposition A* expert
with a prioritized space-time fallback, a small hand-rolled policy network
trained by advantage actor-critic with behavior cloning, an adaptive
curriculum, and a deterministic evaluation harness.
"""

__version__ = "0.1.0"

from .world import (
    Action,
    EpisodeStatus,
    Observation,
    StepEvents,
    WorldGenerationError,
    WorldSpec,
    WorldState,
    action_masks,
    episode_status,
    generate_world,
    max_episode_length,
    observe,
    step,
    valid_actions,
)
from .reward import (
    BlockingMonitor,
    CrowdParams,
    RewardBreakdown,
    RewardConstants,
    crowd_density,
    crowd_reward,
    episode_total,
    is_blocking,
    step_reward,
    zeta,
)
from .expert import (
    JointPlan,
    SearchBudget,
    bfs_distance,
    brute_force_joint_cost,
    expert_action,
    plan_for_world,
    plan_od_astar,
    plan_prioritized,
)
from .policy import (
    LAYOUT,
    PARAM_COUNT,
    ForwardOutput,
    Hyper,
    LossReport,
    PolicyParams,
    Trajectory,
    act,
    advantage,
    apply_gradients,
    backward,
    compute_losses,
    discounted_returns,
    forward,
    forward_batch,
    greedy_actions,
    init_params,
    losses_and_grads,
    masked_probs,
    sample_actions,
)
from .curriculum import (
    CurriculumState,
    LevelRanges,
    demo_mode,
    level_ranges,
    observe_episode,
    sample_spec,
)
from .evaluation import (
    EpisodeRecord,
    ExpertActor,
    MetricsRow,
    PolicyActor,
    RandomActor,
    benchmark,
    compute_metrics,
    emit_report,
    run_episode,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, save_config
from .train import ParameterStore, RunManifest, rollout_episode, train

__all__ = [
    "__version__",
    "Action",
    "EpisodeStatus",
    "Observation",
    "StepEvents",
    "WorldGenerationError",
    "WorldSpec",
    "WorldState",
    "action_masks",
    "episode_status",
    "generate_world",
    "max_episode_length",
    "observe",
    "step",
    "valid_actions",
    "BlockingMonitor",
    "CrowdParams",
    "RewardBreakdown",
    "RewardConstants",
    "crowd_density",
    "crowd_reward",
    "episode_total",
    "is_blocking",
    "step_reward",
    "zeta",
    "JointPlan",
    "SearchBudget",
    "bfs_distance",
    "brute_force_joint_cost",
    "expert_action",
    "plan_for_world",
    "plan_od_astar",
    "plan_prioritized",
    "LAYOUT",
    "PARAM_COUNT",
    "ForwardOutput",
    "Hyper",
    "LossReport",
    "PolicyParams",
    "Trajectory",
    "act",
    "advantage",
    "apply_gradients",
    "backward",
    "compute_losses",
    "discounted_returns",
    "forward",
    "forward_batch",
    "greedy_actions",
    "init_params",
    "losses_and_grads",
    "masked_probs",
    "sample_actions",
    "CurriculumState",
    "LevelRanges",
    "demo_mode",
    "level_ranges",
    "observe_episode",
    "sample_spec",
    "EpisodeRecord",
    "ExpertActor",
    "MetricsRow",
    "PolicyActor",
    "RandomActor",
    "benchmark",
    "compute_metrics",
    "emit_report",
    "run_episode",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "load_config",
    "save_config",
    "ParameterStore",
    "RunManifest",
    "rollout_episode",
    "train",
]
