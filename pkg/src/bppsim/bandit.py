"""Synthetic ranking bandit: a fast sanity task for the trainer.

Five neighbors, one with a clearly lower latency; reward 1 when that neighbor
is ranked first, else 0. A working policy-gradient loop must learn to score
the low-latency neighbor on top within a couple hundred iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import RngStream, derive_stream
from .env import Observation, StepRecord
from .policy import PolicyParams, init_policy, sample_ranking
from .ppo import AdamState, Hyperparams, ppo_update
from .trainer import episodes_to_trajectory

N_ARMS = 5
SPECIAL_LATENCY = 0.05
OTHER_LATENCY = 0.5


@dataclass
class BanditEpisode:
    records: list[StepRecord]
    reward: float
    baseline_reward: float | None = None


def bandit_hyperparams() -> Hyperparams:
    """Trainer defaults sized for the tiny one-step task."""
    return Hyperparams(lr=0.01, batch_episodes=32)


def play_episode(params: PolicyParams, rng: RngStream, greedy: bool = False) -> BanditEpisode:
    special = int(rng.gen.integers(N_ARMS))
    latencies = np.full(N_ARMS, OTHER_LATENCY)
    latencies[special] = SPECIAL_LATENCY
    perm, scores, log_prob, value = sample_ranking(
        params, latencies, N_ARMS, rng, greedy=greedy
    )
    reward = 1.0 if perm[0] == special else 0.0
    rec = StepRecord(
        node_id=0,
        observation=Observation(latencies=latencies, degree=N_ARMS),
        scores=scores,
        log_prob=log_prob,
        value_est=value,
        decision_index=0,
    )
    return BanditEpisode(records=[rec], reward=reward)


def greedy_success_rate(params: PolicyParams, seed: int, n_eval: int = 200) -> float:
    rng = derive_stream(seed, "bandit/eval")
    wins = sum(play_episode(params, rng, greedy=True).reward for _ in range(n_eval))
    return wins / n_eval


def train_bandit(
    iterations: int,
    seed: int = 0,
    h: Hyperparams | None = None,
) -> tuple[PolicyParams, list[float]]:
    """Train on the bandit; returns final params and per-iteration mean reward."""
    if h is None:
        h = bandit_hyperparams()
    params = init_policy(N_ARMS, derive_stream(seed, "bandit/init"),
                         hidden_scorer=16, hidden_value=16)
    rollout_rng = derive_stream(seed, "bandit/rollout")
    update_rng = derive_stream(seed, "bandit/update")
    adam = AdamState()
    history = []
    for _ in range(iterations):
        episodes = [play_episode(params, rollout_rng) for _ in range(h.batch_episodes)]
        history.append(float(np.mean([ep.reward for ep in episodes])))
        batch = episodes_to_trajectory(episodes, h, N_ARMS)
        if batch is not None:
            ppo_update(params, batch, h, adam, update_rng)
    return params, history
