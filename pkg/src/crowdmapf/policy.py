"""Four-head actor-critic network with hand-written forward/backward passes.

Architecture over the 10x10x4 observation:
  conv 3x3 valid 4->16, relu
  conv 3x3 valid 16->16, relu
  maxpool 2x2 (6x6 -> 3x3)
  flatten (144) concatenated with goal_vec (2)
  dense 146->128, relu
  heads: policy logits (5), value (1), blocking logit (1), on-goal logit (1)

Everything is float64 numpy. Convolutions run as im2col matmuls with index
arrays precomputed at import; the conv-2 input gradient is a transposed
convolution over the zero-padded output gradient, which keeps the backward
pass free of scatter-adds. Gradient correctness is enforced against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .world import NUM_ACTIONS, Action, Observation

# ---------------------------------------------------------------------------
# Parameter layout

LAYOUT: list[tuple[str, tuple[int, ...]]] = [
    ("conv1_w", (36, 16)),
    ("conv1_b", (16,)),
    ("conv2_w", (144, 16)),
    ("conv2_b", (16,)),
    ("dense_w", (146, 128)),
    ("dense_b", (128,)),
    ("policy_w", (128, 5)),
    ("policy_b", (5,)),
    ("value_w", (128,)),
    ("value_b", (1,)),
    ("block_w", (128,)),
    ("block_b", (1,)),
    ("ongoal_w", (128,)),
    ("ongoal_b", (1,)),
]


def _build_slices():
    slices = {}
    off = 0
    for name, shape in LAYOUT:
        n = int(np.prod(shape))
        slices[name] = (slice(off, off + n), shape)
        off += n
    return slices, off


_SLICES, PARAM_COUNT = _build_slices()  # PARAM_COUNT == 22760


def param_views(flat: np.ndarray) -> dict[str, np.ndarray]:
    """Named reshaped views into a flat parameter or gradient vector."""
    return {name: flat[sl].reshape(shape) for name, (sl, shape) in _SLICES.items()}


class PolicyParams:
    """Flat float64 parameter vector with named views per LAYOUT."""

    __slots__ = ("flat", "_views")

    def __init__(self, flat: Optional[np.ndarray] = None):
        if flat is None:
            flat = np.zeros(PARAM_COUNT)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (PARAM_COUNT,):
            raise ValueError(
                f"expected {PARAM_COUNT} parameters, got shape {flat.shape}"
            )
        self.flat = flat
        self._views: Optional[dict[str, np.ndarray]] = None

    def views(self) -> dict[str, np.ndarray]:
        """Cached named views; they alias `flat`, so in-place edits of either
        stay visible in both."""
        if self._views is None:
            self._views = param_views(self.flat)
        return self._views

    def view(self, name: str) -> np.ndarray:
        return self.views()[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.flat.copy())

    def __eq__(self, other):
        return isinstance(other, PolicyParams) and np.array_equal(
            self.flat, other.flat
        )


def init_params(seed: int) -> PolicyParams:
    """He-scaled weights everywhere, zero biases.

    Heads included: shrinking the head weights (a common trick for a
    near-uniform initial policy) starves the shared trunk of gradient, since
    every trunk gradient is filtered through the head weights on the way
    back. With plain SGD at a small learning rate that slows early learning
    by orders of magnitude.
    """
    rng = np.random.default_rng(seed)
    flat = np.zeros(PARAM_COUNT)
    views = param_views(flat)
    for name, shape in LAYOUT:
        if name.endswith("_b"):
            continue
        fan_in = shape[0]
        views[name][:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return PolicyParams(flat)


# ---------------------------------------------------------------------------
# im2col index tables (built once)

def _conv_indices(in_side, out_side, in_ch, stride_major):
    """Flat gather indices: (out_side^2, 9*in_ch) where the input is laid out
    with `stride_major` elements per row step and in_ch per cell when
    channel-last (stride_major = in_side*in_ch) or one per cell with a
    channel-major plane stride (handled by caller for conv1)."""
    idx = np.empty((out_side * out_side, 9 * in_ch), dtype=np.intp)
    for i in range(out_side):
        for j in range(out_side):
            p = i * out_side + j
            col = 0
            for u in range(3):
                for v in range(3):
                    base = (i + u) * stride_major + (j + v) * in_ch
                    for ch in range(in_ch):
                        idx[p, col] = base + ch
                        col += 1
    return idx


def _conv1_indices():
    # Input (4, 10, 10) channel-first, flattened to 400. Kernel rows ordered
    # (channel, u, v) to match conv1_w's 36 rows.
    idx = np.empty((64, 36), dtype=np.intp)
    for i in range(8):
        for j in range(8):
            p = i * 8 + j
            col = 0
            for c in range(4):
                for u in range(3):
                    for v in range(3):
                        idx[p, col] = c * 100 + (i + u) * 10 + (j + v)
                        col += 1
    return idx


IDX1 = _conv1_indices()
# conv2 input: (8, 8, 16) channel-last flat; kernel rows ordered (u, v, ch).
IDX2 = _conv_indices(8, 6, 16, 8 * 16)
# transposed conv gather over the (10, 10, 16) zero-padded gradient.
IDX2T = _conv_indices(10, 8, 16, 10 * 16)


# ---------------------------------------------------------------------------
# Forward

@dataclass
class ForwardOutput:
    """Single-observation network outputs."""

    logits: np.ndarray
    value: float
    p_block: float
    p_on_goal: float


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(v: dict[str, np.ndarray], channels: np.ndarray,
             goal_vecs: np.ndarray, need_cache: bool):
    b = channels.shape[0]
    x = channels.reshape(b, 400)
    cols1 = x[:, IDX1]                                   # (B, 64, 36)
    pre1 = (
        cols1.reshape(-1, 36) @ v["conv1_w"] + v["conv1_b"]
    ).reshape(b, 64, 16)
    h1 = np.maximum(pre1, 0.0)
    h1f = h1.reshape(b, 1024)
    cols2 = h1f[:, IDX2]                                 # (B, 36, 144)
    pre2 = (
        cols2.reshape(-1, 144) @ v["conv2_w"] + v["conv2_b"]
    ).reshape(b, 36, 16)
    h2 = np.maximum(pre2, 0.0)
    quads = (
        h2.reshape(b, 3, 2, 3, 2, 16)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, 9, 4, 16)
    )
    if need_cache:
        winners = quads.argmax(axis=2)                   # (B, 9, 16)
        pooled = np.take_along_axis(
            quads, winners[:, :, None, :], axis=2
        )[:, :, 0, :]
    else:
        winners = None
        pooled = quads.max(axis=2)
    z = np.concatenate([pooled.reshape(b, 144), goal_vecs], axis=1)
    pre3 = z @ v["dense_w"] + v["dense_b"]
    h3 = np.maximum(pre3, 0.0)
    logits = h3 @ v["policy_w"] + v["policy_b"]
    value = h3 @ v["value_w"] + v["value_b"][0]
    zb = h3 @ v["block_w"] + v["block_b"][0]
    zo = h3 @ v["ongoal_w"] + v["ongoal_b"][0]
    cache = None
    if need_cache:
        cache = {
            "cols1": cols1,
            "mask1": pre1 > 0.0,
            "cols2": cols2,
            "mask2": pre2 > 0.0,
            "winners": winners,
            "z": z,
            "mask3": pre3 > 0.0,
            "h3": h3,
        }
    return logits, value, zb, zo, cache


def forward_batch(params: PolicyParams, channels: np.ndarray,
                  goal_vecs: np.ndarray):
    """Network outputs for a batch of observations, no gradient cache."""
    logits, value, zb, zo, _ = _forward(params.views(), channels, goal_vecs, False)
    return logits, value, zb, zo


def forward(params: PolicyParams, obs: Observation) -> ForwardOutput:
    """Single-observation forward pass."""
    if obs.channels.shape != (4, 10, 10):
        raise ValueError(f"bad observation shape {obs.channels.shape}")
    logits, value, zb, zo, _ = _forward(
        params.views(), obs.channels[None], obs.goal_vec[None], False
    )
    return ForwardOutput(
        logits=logits[0],
        value=float(value[0]),
        p_block=float(_sigmoid(zb[0])),
        p_on_goal=float(_sigmoid(zo[0])),
    )


# ---------------------------------------------------------------------------
# Action selection

def _as_mask_array(mask) -> np.ndarray:
    if isinstance(mask, np.ndarray):
        arr = mask.astype(bool)
    else:
        arr = np.zeros(NUM_ACTIONS, dtype=bool)
        for a in mask:
            arr[int(a)] = True
    if arr.shape != (NUM_ACTIONS,) or not arr.any():
        raise ValueError("mask must enable at least one of the 5 actions")
    return arr


def masked_probs(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Renormalized softmax with invalid actions at exactly zero. Batched:
    logits (B, 5), masks (B, 5) boolean."""
    ml = np.where(masks, logits, -np.inf)
    mx = ml.max(axis=1, keepdims=True)
    e = np.exp(ml - mx)
    return e / e.sum(axis=1, keepdims=True)


def sample_actions(logits: np.ndarray, masks: np.ndarray, rng) -> np.ndarray:
    """One action index per row from the masked distribution."""
    p = masked_probs(logits, masks)
    cum = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, NUM_ACTIONS - 1)


def greedy_actions(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Highest-probability valid action per row; ties break to the lowest
    action index (argmax picks the first maximum)."""
    ml = np.where(masks, logits, -np.inf)
    return ml.argmax(axis=1)


def act(out: ForwardOutput, mask, rng=None, mode: str = "sample") -> Action:
    """Select an action from a forward output under a validity mask."""
    arr = _as_mask_array(mask)
    if mode == "greedy":
        return Action(int(greedy_actions(out.logits[None], arr[None])[0]))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        return Action(int(sample_actions(out.logits[None], arr[None], rng)[0]))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Returns, advantages, losses

@dataclass(frozen=True)
class Hyper:
    gamma: float = 0.95
    entropy_coef: float = 0.01
    learning_rate: float = 2e-4
    clip_norm: float = 40.0
    value_weight: float = 0.5
    blocking_weight: float = 0.5
    on_goal_weight: float = 0.5
    bc_weight: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("rates must be positive")


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """R_t = r_t + gamma * R_{t+1}, seeded at the far end by `bootstrap`
    (zero for terminal episodes, V of the final state for truncated ones)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rewards must be a non-empty 1-d sequence")
    out = np.empty_like(r)
    acc = float(bootstrap)
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def advantage(rewards, values, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """Full-horizon advantage: discounted return (bootstrapped) minus the
    stored value estimate at each step."""
    vals = np.asarray(values, dtype=np.float64)
    rets = discounted_returns(rewards, gamma, bootstrap)
    if vals.shape != rets.shape:
        raise ValueError("rewards and values must have equal length")
    return rets - vals


@dataclass
class Trajectory:
    """One agent's episode as stacked arrays; values are the rollout-time
    estimates (held constant inside the advantage)."""

    channels: np.ndarray        # (T, 4, 10, 10)
    goal_vecs: np.ndarray       # (T, 2)
    actions: np.ndarray         # (T,) int
    masks: np.ndarray           # (T, 5) bool
    rewards: np.ndarray         # (T,)
    values: np.ndarray          # (T,)
    blocking_labels: np.ndarray  # (T,) in {0, 1}
    on_goal_labels: np.ndarray   # (T,) in {0, 1}
    demo: np.ndarray            # (T,) bool
    bootstrap: float = 0.0

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.goal_vecs = np.asarray(self.goal_vecs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.masks = np.asarray(self.masks, dtype=bool)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.blocking_labels = np.asarray(self.blocking_labels, dtype=np.float64)
        self.on_goal_labels = np.asarray(self.on_goal_labels, dtype=np.float64)
        self.demo = np.asarray(self.demo, dtype=bool)
        t = self.length
        if t < 1:
            raise ValueError("trajectory must contain at least one step")
        if self.channels.shape != (t, 4, 10, 10) or self.goal_vecs.shape != (t, 2):
            raise ValueError("observation arrays have inconsistent shapes")
        for name in ("actions", "masks", "rewards", "values",
                     "blocking_labels", "on_goal_labels", "demo"):
            if getattr(self, name).shape[0] != t:
                raise ValueError(f"{name} length differs from trajectory length")

    @property
    def length(self) -> int:
        return self.channels.shape[0]


@dataclass
class LossReport:
    value_loss: float
    policy_loss: float
    entropy: float
    blocking_loss: float
    on_goal_loss: float
    bc_loss: float
    total: float


def _losses_from_outputs(traj: Trajectory, hyper: Hyper, logits, value, zb, zo):
    """Loss terms from head outputs.

    Steps are split by their demo flag: reinforcement terms (policy gradient,
    entropy bonus, value regression) run on exploration steps, the cloning
    term on demonstration steps, and the auxiliary heads on every step. The
    split keeps the large early value-regression gradients of off-policy
    demonstration steps from crowding the cloning signal out of the
    norm-clipped update.
    """
    probs = masked_probs(logits, traj.masks)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(probs > 0.0, np.log(probs), 0.0)
    entropy_t = -(probs * logp).sum(axis=1)
    logp_a = logp[np.arange(traj.length), traj.actions]

    returns = discounted_returns(traj.rewards, hyper.gamma, traj.bootstrap)
    adv = returns - traj.values
    live = ~traj.demo

    policy_loss = float(
        -(logp_a * adv * live).sum() - hyper.entropy_coef * (entropy_t * live).sum()
    )
    value_loss = float((((value - returns) ** 2) * live).sum())
    yb, yo = traj.blocking_labels, traj.on_goal_labels
    blocking_loss = float((np.logaddexp(0.0, zb) - zb * yb).sum())
    on_goal_loss = float((np.logaddexp(0.0, zo) - zo * yo).sum())
    bc_loss = float(-(logp_a * traj.demo).sum())

    total = (
        policy_loss
        + hyper.value_weight * value_loss
        + hyper.blocking_weight * blocking_loss
        + hyper.on_goal_weight * on_goal_loss
        + hyper.bc_weight * bc_loss
    )
    report = LossReport(
        value_loss=value_loss,
        policy_loss=policy_loss,
        entropy=float(entropy_t.sum()),
        blocking_loss=blocking_loss,
        on_goal_loss=on_goal_loss,
        bc_loss=bc_loss,
        total=total,
    )
    return report, probs, logp, entropy_t, returns, adv


def compute_losses(params: PolicyParams, traj: Trajectory, hyper: Hyper) -> LossReport:
    logits, value, zb, zo, _ = _forward(
        params.views(), traj.channels, traj.goal_vecs, False
    )
    report, *_ = _losses_from_outputs(traj, hyper, logits, value, zb, zo)
    return report


def losses_and_grads(
    params: PolicyParams, traj: Trajectory, hyper: Hyper
) -> tuple[LossReport, np.ndarray]:
    """Loss report plus the exact analytic gradient of total w.r.t. params."""
    v = params.views()
    logits, value, zb, zo, cache = _forward(
        v, traj.channels, traj.goal_vecs, True
    )
    report, probs, logp, entropy_t, returns, adv = _losses_from_outputs(
        traj, hyper, logits, value, zb, zo
    )
    t = traj.length
    onehot = np.zeros((t, NUM_ACTIONS))
    onehot[np.arange(t), traj.actions] = 1.0
    live = (~traj.demo)[:, None]

    # Policy head: score-function term and entropy bonus on exploration
    # steps, behavior cloning on demonstration steps.
    dlogits = adv[:, None] * (probs - onehot)
    dlogits += hyper.entropy_coef * probs * (logp + entropy_t[:, None])
    dlogits *= live
    if traj.demo.any():
        d = traj.demo
        dlogits[d] += hyper.bc_weight * (probs[d] - onehot[d])
    dvalue = hyper.value_weight * 2.0 * (value - returns) * live[:, 0]
    dzb = hyper.blocking_weight * (_sigmoid(zb) - traj.blocking_labels)
    dzo = hyper.on_goal_weight * (_sigmoid(zo) - traj.on_goal_labels)

    grads = np.zeros(PARAM_COUNT)
    gv = param_views(grads)
    h3 = cache["h3"]
    gv["policy_w"][:] = h3.T @ dlogits
    gv["policy_b"][:] = dlogits.sum(axis=0)
    gv["value_w"][:] = h3.T @ dvalue
    gv["value_b"][0] = dvalue.sum()
    gv["block_w"][:] = h3.T @ dzb
    gv["block_b"][0] = dzb.sum()
    gv["ongoal_w"][:] = h3.T @ dzo
    gv["ongoal_b"][0] = dzo.sum()

    dh3 = (
        dlogits @ v["policy_w"].T
        + dvalue[:, None] * v["value_w"][None, :]
        + dzb[:, None] * v["block_w"][None, :]
        + dzo[:, None] * v["ongoal_w"][None, :]
    )
    dpre3 = dh3 * cache["mask3"]
    gv["dense_w"][:] = cache["z"].T @ dpre3
    gv["dense_b"][:] = dpre3.sum(axis=0)
    dz = dpre3 @ v["dense_w"].T

    dpooled = dz[:, :144].reshape(t, 9, 16)
    dquads = np.zeros((t, 9, 4, 16))
    np.put_along_axis(
        dquads, cache["winners"][:, :, None, :], dpooled[:, :, None, :], axis=2
    )
    dpre2 = (
        dquads.reshape(t, 3, 3, 2, 2, 16)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(t, 36, 16)
    ) * cache["mask2"]

    cols2 = cache["cols2"]
    gv["conv2_w"][:] = cols2.reshape(-1, 144).T @ dpre2.reshape(-1, 16)
    gv["conv2_b"][:] = dpre2.sum(axis=(0, 1))

    # Input gradient of conv 2 as a transposed convolution: pad the output
    # gradient by 2 and convolve with the spatially flipped, in/out-swapped
    # kernel.
    pad = np.zeros((t, 10, 10, 16))
    pad[:, 2:8, 2:8, :] = dpre2.reshape(t, 6, 6, 16)
    kernel = (
        v["conv2_w"].reshape(3, 3, 16, 16)[::-1, ::-1]
        .transpose(0, 1, 3, 2)
        .reshape(144, 16)
    )
    dh1f = (
        pad.reshape(t, 1600)[:, IDX2T].reshape(-1, 144) @ kernel
    ).reshape(t, 64, 16)
    dpre1 = dh1f * cache["mask1"]
    gv["conv1_w"][:] = cache["cols1"].reshape(-1, 36).T @ dpre1.reshape(-1, 16)
    gv["conv1_b"][:] = dpre1.sum(axis=(0, 1))

    if not np.isfinite(grads).all():
        for name, _ in LAYOUT:
            if not np.isfinite(gv[name]).all():
                raise FloatingPointError(
                    f"non-finite gradient in parameter block '{name}'"
                )
    return report, grads


def backward(params: PolicyParams, traj: Trajectory, hyper: Hyper) -> np.ndarray:
    """Analytic gradient of LossReport.total for every parameter."""
    _, grads = losses_and_grads(params, traj, hyper)
    return grads


def apply_gradients(params: PolicyParams, grads: np.ndarray, hyper: Hyper) -> PolicyParams:
    """Global-norm clip followed by one plain gradient-descent step."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (PARAM_COUNT,):
        raise ValueError(
            f"gradient layout mismatch: expected ({PARAM_COUNT},), got {grads.shape}"
        )
    norm = float(np.linalg.norm(grads))
    scale = 1.0 if norm <= hyper.clip_norm or norm == 0.0 else hyper.clip_norm / norm
    return PolicyParams(params.flat - hyper.learning_rate * scale * grads)
