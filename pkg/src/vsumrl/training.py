"""REINFORCE training: episode sampling, policy-gradient estimate, Adam updates.

Each step runs one video: a train-mode forward gives per-frame probabilities,
K binary selections are sampled from them, each selection is scored by the
reward functions, and the advantage-weighted log-policy gradient (plus the
selection-fraction and L2 regularizers) is backpropagated through the model.
A per-video moving average of past rewards serves as the variance-reducing
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_io import Manifest, SentenceAlignment, VideoRecord, load_records
from .errors import NumericsError
from .model import ModelConfig, ModelParams, ForwardTrace, backward, forward, init_params
from .rewards import RewardBundle, RewardConfig, total_reward

# probabilities are clamped to this interval inside log-policy terms only
LOGPI_CLIP = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    episodes: int = 5            # K sampled selections per step
    learning_rate: float = 1e-5
    epsilon: float = 0.5         # target fraction of selected frames
    beta1: float = 0.12          # weight of the selection-fraction penalty
    beta2: float = 1e-5          # weight of the L2 penalty
    baseline_decay: float = 0.9
    seed: int = 0
    unimodal: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0,1)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.beta1 < 0.0 or self.beta2 < 0.0:
            raise ValueError("beta1/beta2 must be non-negative")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must be in [0,1)")


@dataclass
class BaselineState:
    """Per-video exponential moving average of past episode rewards."""

    values: dict[str, float] = field(default_factory=dict)

    def peek(self, video_id: str, fallback: float) -> float:
        """Baseline to use this step; unseen videos start at the fallback."""
        return self.values.get(video_id, fallback)

    def update(self, video_id: str, used: float, reward_mean: float, decay: float) -> None:
        self.values[video_id] = decay * used + (1.0 - decay) * reward_mean


class Adam:
    """Plain Adam with bias correction; state is keyed like the parameter dict."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, theta in params.tensors.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1 ** t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** t)
            theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


# ---------------------------------------------------------------------------
# Policy-gradient pieces
# ---------------------------------------------------------------------------

def sample_episode(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p_t) frame selections."""
    p = np.asarray(p, dtype=np.float64)
    return (rng.random(p.shape[0]) < p).astype(np.int8)


def log_policy(p: np.ndarray, actions: np.ndarray) -> float:
    """sum_t log pi(a_t | p_t) with p clamped away from the boundaries."""
    pc = np.clip(np.asarray(p, dtype=np.float64), LOGPI_CLIP, 1.0 - LOGPI_CLIP)
    a = np.asarray(actions, dtype=np.float64)
    return float((a * np.log(pc) + (1.0 - a) * np.log(1.0 - pc)).sum())


def log_policy_gradient_weights(p: np.ndarray, actions: np.ndarray,
                                reward_total: float, b: float) -> np.ndarray:
    """d/dp_t of -(R - b) * sum_t log pi(a_t | p_t)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise NumericsError("probabilities left the open interval (0,1)")
    a = np.asarray(actions, dtype=np.float64)
    if a.shape != p.shape:
        raise ValueError(f"actions shape {a.shape} != probabilities shape {p.shape}")
    pc = np.clip(p, LOGPI_CLIP, 1.0 - LOGPI_CLIP)
    score = a / pc - (1.0 - a) / (1.0 - pc)
    return -(reward_total - b) * score


def percentage_loss(p: np.ndarray, epsilon: float) -> tuple[float, np.ndarray]:
    """Squared gap between the mean selection probability and the target fraction."""
    p = np.asarray(p, dtype=np.float64)
    gap = float(p.mean() - epsilon)
    grad = np.full(p.shape[0], 2.0 * gap / p.shape[0])
    return gap * gap, grad


def l2_loss(params: ModelParams) -> tuple[float, dict[str, np.ndarray]]:
    """Sum of squares over every parameter tensor, with gradient 2*theta."""
    loss = 0.0
    grads = {}
    for name, arr in params.tensors.items():
        loss += float((arr * arr).sum())
        grads[name] = 2.0 * arr
    return loss, grads


def record_inputs(record: VideoRecord, unimodal: bool) -> tuple[np.ndarray, np.ndarray, SentenceAlignment]:
    """Model inputs for a record; unimodal mode drops every sentence token."""
    if unimodal:
        empty = np.zeros((0, record.sentence_features.shape[1]))
        alignment = SentenceAlignment(frame_count=record.frame_count, entries=())
        return record.frame_features, empty, alignment
    return record.frame_features, record.sentence_features, record.alignment


def surrogate_objective(params: ModelParams, record: VideoRecord,
                        episodes: Sequence[np.ndarray], rewards: Sequence[float],
                        b: float, cfg: TrainConfig) -> float:
    """The scalar the policy gradient differentiates, with episodes frozen.

    mean_k [-(R_k - b) * sum_t log pi(a_t | p_t)] + beta1 * L_pct + beta2 * L_2.
    Used by finite-difference verification; dropout must be off.
    """
    x, y, alignment = record_inputs(record, cfg.unimodal)
    trace = forward(params, x, y, alignment, mode="eval")
    j = float(np.mean([-(r - b) * log_policy(trace.p, a)
                       for a, r in zip(episodes, rewards)]))
    pct, _ = percentage_loss(trace.p, cfg.epsilon)
    l2, _ = l2_loss(params)
    return j + cfg.beta1 * pct + cfg.beta2 * l2


def surrogate_gradients(params: ModelParams, trace: ForwardTrace,
                        episodes: Sequence[np.ndarray], rewards: Sequence[float],
                        b: float, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Analytic gradients of surrogate_objective at the given forward trace."""
    upstream = np.zeros(trace.frame_count)
    for actions, reward in zip(episodes, rewards):
        upstream += log_policy_gradient_weights(trace.p, actions, reward, b)
    upstream /= len(episodes)
    _, pct_grad = percentage_loss(trace.p, cfg.epsilon)
    upstream += cfg.beta1 * pct_grad

    grads = backward(trace, params, upstream)
    if cfg.beta2 != 0.0:
        for name, arr in params.tensors.items():
            grads[name] += cfg.beta2 * 2.0 * arr
    return grads


RewardFn = Callable[[VideoRecord, np.ndarray], RewardBundle]


def _default_reward(reward_cfg: RewardConfig) -> RewardFn:
    def fn(record: VideoRecord, actions: np.ndarray) -> RewardBundle:
        return total_reward(record.frame_features, record.alignment, actions, reward_cfg)
    return fn


@dataclass
class TrainState:
    """Everything train_step mutates: parameters, optimizer, baseline, RNG."""

    params: ModelParams
    optimizer: Adam
    baseline: BaselineState
    rng: np.random.Generator


def train_step(state: TrainState, record: VideoRecord, cfg: TrainConfig,
               reward_cfg: RewardConfig, reward_fn: RewardFn | None = None) -> dict:
    """One REINFORCE update on one video; returns step diagnostics."""
    reward_fn = reward_fn or _default_reward(reward_cfg)
    x, y, alignment = record_inputs(record, cfg.unimodal)
    trace = forward(state.params, x, y, alignment, mode="train", rng=state.rng)

    episodes = [sample_episode(trace.p, state.rng) for _ in range(cfg.episodes)]
    bundles = [reward_fn(record, actions) for actions in episodes]
    totals = [bundle.total for bundle in bundles]
    reward_mean = float(np.mean(totals))

    b = state.baseline.peek(record.video_id, fallback=reward_mean)
    grads = surrogate_gradients(state.params, trace, episodes, totals, b, cfg)
    state.optimizer.step(state.params, grads)
    state.baseline.update(record.video_id, b, reward_mean, cfg.baseline_decay)

    return {
        "video_id": record.video_id,
        "r_div": float(np.mean([bd.r_div for bd in bundles])),
        "r_rep": float(np.mean([bd.r_rep for bd in bundles])),
        "r_sal": float(np.mean([bd.r_sal for bd in bundles])),
        "total": reward_mean,
        "baseline": b,
        "mean_p": float(trace.p.mean()),
        "degenerate_episodes": sum(1 for bd in bundles if bd.degenerate),
    }


def train(manifest_or_records: Manifest | list[VideoRecord], model_cfg: ModelConfig,
          cfg: TrainConfig, reward_cfg: RewardConfig,
          reward_fn: RewardFn | None = None) -> tuple[ModelParams, list[dict], TrainState]:
    """Full training run: seeded, sequential, deterministic.

    Returns final parameters, one log row per epoch, and the final state
    (optimizer and baseline included) for checkpointing.
    """
    records = (manifest_or_records if isinstance(manifest_or_records, list)
               else load_records(manifest_or_records))
    if not records:
        raise ValueError("training needs at least one video")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, seed=cfg.seed)
    state = TrainState(
        params=params,
        optimizer=Adam(params, lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                       beta2=cfg.adam_beta2, eps=cfg.adam_eps),
        baseline=BaselineState(),
        rng=rng,
    )

    log_rows = []
    for epoch in range(cfg.epochs):
        order = state.rng.permutation(len(records))
        steps = [train_step(state, records[i], cfg, reward_cfg, reward_fn)
                 for i in order]
        log_rows.append({
            "epoch": epoch,
            "mean_r_div": float(np.mean([s["r_div"] for s in steps])),
            "mean_r_rep": float(np.mean([s["r_rep"] for s in steps])),
            "mean_r_sal": float(np.mean([s["r_sal"] for s in steps])),
            "mean_total": float(np.mean([s["total"] for s in steps])),
            "mean_p": float(np.mean([s["mean_p"] for s in steps])),
        })
    return state.params, log_rows, state


def write_train_log(rows: list[dict], path) -> None:
    """One JSON object per epoch, one per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
