"""Training loop: collect episode batches, compute targets, update, checkpoint.

Each iteration rolls out a fixed number of episodes with stochastic sampling,
turns the terminal reward into per-decision returns and GAE advantages, and
applies one clipped-surrogate update. The learning curve (iteration,
mean_reward, clip_fraction, value_loss) streams to CSV and the parameters
checkpoint after every iteration, so training is resumable.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .engine import derive_stream
from .env import EpisodeOutcome
from .policy import PolicyParams, init_policy, load_policy, save_policy
from .ppo import AdamState, Hyperparams, Trajectory, discounted_returns, gae_advantages, ppo_update
from .runner import collect_episodes, episode_seeds

CURVE_FIELDS = ("iteration", "mean_reward", "clip_fraction", "value_loss")


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None


def episodes_to_trajectory(
    episodes: list[EpisodeOutcome], h: Hyperparams, obs_dim: int
) -> Trajectory | None:
    """Flatten episode records into one batch with returns and advantages.

    The policy is parameter-shared across per-node agents, so each node's own
    decision sequence within an episode forms one trajectory: the episode's
    terminal reward sits at that node's last decision and discounts back over
    its few decisions. This keeps the credit signal alive at every decision
    (a single pooled sequence would decay it to nothing over thousands of
    steps). Episodes without decisions contribute nothing.
    """
    obs, degrees, scores, log_probs, returns, advantages = [], [], [], [], [], []
    for ep in episodes:
        if not ep.records:
            continue
        # Seed-matched control variate: the baseline shuffle's reward under the
        # same seed is independent of the policy's actions, so subtracting it
        # strips the shared forging/topology luck from the learning signal
        # without biasing the gradient.
        scalar = ep.reward
        if ep.baseline_reward is not None:
            scalar = ep.reward - ep.baseline_reward
        by_node: dict[int, list] = {}
        for rec in ep.records:
            by_node.setdefault(rec.node_id, []).append(rec)
        for recs in by_node.values():
            t_len = len(recs)
            rewards = np.zeros(t_len)
            rewards[-1] = scalar
            values = np.array([r.value_est for r in recs] + [0.0])
            returns.append(discounted_returns(rewards, h.gamma))
            advantages.append(gae_advantages(rewards, values, h.gamma, h.lam))
            for rec in recs:
                obs.append(rec.observation.latencies)
                degrees.append(rec.observation.degree)
                scores.append(rec.scores)
                log_probs.append(rec.log_prob)
    if not obs:
        return None
    return Trajectory(
        obs=np.asarray(obs),
        degrees=np.asarray(degrees, dtype=int),
        scores=np.asarray(scores),
        log_probs=np.asarray(log_probs),
        returns=np.concatenate(returns),
        advantages=np.concatenate(advantages),
    )


def train(
    cfg: ExperimentConfig,
    iterations: int,
    out_dir: str | None = None,
    workers: int = 1,
    resume: str | None = None,
    progress=None,
) -> TrainResult:
    """Run the full training loop; returns final parameters and the curve.

    ``resume`` continues from a checkpoint (iteration counter included); the
    curve CSV is appended to in that case. With ``out_dir=None`` nothing is
    written to disk.
    """
    h = cfg.rl.hyperparams
    root = cfg.experiment.root_seed
    start_iter = 0
    if resume is not None:
        params, meta = load_policy(resume)
        start_iter = int(meta.get("iteration", 0))
        if meta.get("config_digest") not in (None, cfg.digest()):
            raise ValueError("checkpoint was trained under a different configuration")
    else:
        params = init_policy(
            cfg.max_degree,
            derive_stream(root, "init"),
            hidden_scorer=cfg.rl.hidden_scorer,
            hidden_value=cfg.rl.hidden_value,
            log_std_init=cfg.rl.log_std_init,
        )
    adam = AdamState()
    update_rng = derive_stream(root, "train/shuffle")

    ckpt_path = curve_path = None
    curve_rows: list[dict] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "checkpoint.npz")
        curve_path = os.path.join(out_dir, "curve.csv")
        mode = "a" if (resume is not None and os.path.exists(curve_path)) else "w"
        curve_fh = open(curve_path, mode, newline="")
        writer = csv.DictWriter(curve_fh, fieldnames=CURVE_FIELDS)
        if mode == "w":
            writer.writeheader()
    else:
        curve_fh = writer = None

    def checkpoint(iteration: int) -> None:
        if ckpt_path is not None:
            save_policy(ckpt_path, params, meta={
                "iteration": iteration,
                "config_digest": cfg.digest(),
                "obs_dim": cfg.max_degree,
            })

    try:
        checkpoint(start_iter)
        for it in range(start_iter, start_iter + iterations):
            seeds = episode_seeds(root, it, h.batch_episodes)
            episodes = collect_episodes(cfg, params, seeds, stochastic=True,
                                        workers=workers,
                                        with_baseline=cfg.rl.paired_baseline)
            mean_reward = float(np.mean([ep.reward for ep in episodes]))
            batch = episodes_to_trajectory(episodes, h, cfg.max_degree)
            stats = {"clip_fraction": 0.0, "value_loss": 0.0}
            if batch is not None:
                stats = ppo_update(params, batch, h, adam, update_rng)
            row = {
                "iteration": it,
                "mean_reward": mean_reward,
                "clip_fraction": stats["clip_fraction"],
                "value_loss": stats["value_loss"],
            }
            curve_rows.append(row)
            if writer is not None:
                writer.writerow(row)
                curve_fh.flush()
            checkpoint(it + 1)
            if progress is not None:
                progress(it, row)
    finally:
        if curve_fh is not None:
            curve_fh.close()
    return TrainResult(params=params, curve=curve_rows, checkpoint_path=ckpt_path)
