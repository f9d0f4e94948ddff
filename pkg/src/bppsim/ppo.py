"""Clipped-surrogate policy optimization over the ranking policy.

Returns and advantages are computed per episode (terminal-only reward,
generalized advantage estimation with a zero bootstrap at the end), then
flattened into one batch. The update runs several epochs of minibatch
gradient ascent on E[min(r*A, clip(r)*A)] - c_v*(V-G)^2 + c_e*H with all
gradients written out analytically and an Adam step on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import RngStream
from . import policy as pol


class TrainingError(Exception):
    """Non-finite loss or parameters during an update."""


@dataclass
class Hyperparams:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs_per_batch: int = 10
    minibatch: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    batch_episodes: int = 8

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lam must be in (0, 1]")
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip_eps must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "lam": self.lam, "clip_eps": self.clip_eps,
            "lr": self.lr, "epochs_per_batch": self.epochs_per_batch,
            "minibatch": self.minibatch, "value_coef": self.value_coef,
            "entropy_coef": self.entropy_coef, "batch_episodes": self.batch_episodes,
        }


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """returns[t] = sum_k gamma^k * rewards[t+k]."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_advantages(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> np.ndarray:
    """Generalized advantage estimation with a terminal bootstrap of values[-1].

    ``values`` has one more entry than ``rewards`` (0 at episode end).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) != len(rewards) + 1:
        raise ValueError("values must have len(rewards) + 1 entries")
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv


@dataclass
class Trajectory:
    """Flattened rollout batch ready for the update."""

    obs: np.ndarray        # (B, D) padded latencies
    degrees: np.ndarray    # (B,) valid slots per row
    scores: np.ndarray     # (B, D) realized scores, zero-padded
    log_probs: np.ndarray  # (B,)
    returns: np.ndarray    # (B,)
    advantages: np.ndarray  # (B,) normalized in-place by ppo_update

    def __len__(self) -> int:
        return len(self.log_probs)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = float(np.std(adv))
    if std < 1e-12:
        return np.zeros_like(adv)
    return (adv - float(np.mean(adv))) / (std + 1e-8)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, params: pol.PolicyParams, grads: dict[str, np.ndarray], lr: float) -> None:
        tree = params.as_dict()
        if not self.m:
            self.m = {k: np.zeros_like(a) for k, a in tree.items()}
            self.v = {k: np.zeros_like(a) for k, a in tree.items()}
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, arr in tree.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            arr -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def surrogate_objective(
    params: pol.PolicyParams, batch: Trajectory, idx: np.ndarray, h: Hyperparams
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Loss, analytic gradients, and update statistics on one minibatch.

    The loss is the negated objective: -E[min(r*A, clip(r)*A)]
    + value_coef*E[(V-G)^2] - entropy_coef*E[H]. The gradient of the clipped
    term flows only where the unclipped branch attains the min.
    """
    x = batch.obs[idx]
    degrees = batch.degrees[idx]
    scores = batch.scores[idx]
    logp_old = batch.log_probs[idx]
    adv = batch.advantages[idx]
    returns = batch.returns[idx]
    n, d_pad = x.shape
    mask = np.arange(d_pad)[None, :] < degrees[:, None]

    log_std = float(params.log_std)
    sigma = np.exp(log_std)
    means, h_cache = pol.score_forward(params, x)
    z = np.where(mask, (scores - means) / sigma, 0.0)
    logp_new = np.sum(
        np.where(mask, -0.5 * z * z - log_std - 0.5 * pol._LOG_2PI, 0.0), axis=1
    )
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - h.clip_eps, 1.0 + h.clip_eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    surr = np.minimum(surr1, surr2)
    policy_loss = -float(np.mean(surr))

    values, vh_cache = value_forward_batch(params, x)
    verr = values - returns
    value_loss = float(np.mean(verr * verr))

    deg_f = degrees.astype(float)
    entropy = deg_f * (log_std + 0.5 * (1.0 + pol._LOG_2PI))
    entropy_mean = float(np.mean(entropy))

    loss = policy_loss + h.value_coef * value_loss - h.entropy_coef * entropy_mean
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss (policy={policy_loss}, value={value_loss}, sigma={sigma})"
        )

    grads = pol.zero_grads(params)

    # Policy branch: d(-surr)/d(logp_new), nonzero only where the unclipped
    # term attains the min.
    take_unclipped = surr1 <= surr2
    dlogp = np.where(take_unclipped, -adv * ratio, 0.0) / n
    # logp -> mean scores and log_std
    dmeans = np.where(mask, dlogp[:, None] * z / sigma, 0.0)
    pol.score_backward(params, x, h_cache, dmeans, grads)
    grads["log_std"] += np.sum(dlogp * np.sum(np.where(mask, z * z - 1.0, 0.0), axis=1))

    # Value branch.
    dv = 2.0 * h.value_coef * verr / n
    pol.value_backward(params, x, vh_cache, dv, grads)

    # Entropy bonus (enters the loss with a minus sign).
    grads["log_std"] += -h.entropy_coef * np.mean(deg_f)

    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_mean,
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > h.clip_eps)),
    }
    return loss, grads, stats


def value_forward_batch(params: pol.PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v, h = pol.value_forward(params, x)
    return np.atleast_1d(v), h


def ppo_update(
    params: pol.PolicyParams,
    batch: Trajectory,
    h: Hyperparams,
    adam: AdamState,
    rng: RngStream,
) -> dict[str, float]:
    """Multiple epochs of shuffled-minibatch ascent; mutates params in place.

    Advantages are normalized once over the whole batch. Returns averaged
    update statistics (ratio, clip fraction, losses).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    batch.advantages = normalize_advantages(batch.advantages)
    n = len(batch)
    agg: dict[str, float] = {}
    steps = 0
    for _ in range(h.epochs_per_batch):
        order = rng.gen.permutation(n)
        for start in range(0, n, h.minibatch):
            idx = order[start : start + h.minibatch]
            _, grads, stats = surrogate_objective(params, batch, idx, h)
            adam.step(params, grads, h.lr)
            params.clamp_log_std()
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            steps += 1
    params.assert_finite()
    return {k: v / steps for k, v in agg.items()}
