"""Episode collection and paired baseline/treated evaluation.

Pairs share one derived seed, so both arms see the same topology, forging
schedule, and transaction schedule; only the broadcast ordering differs.
Multiple workers split pairs across processes and results merge in seed order,
so the output is identical at any worker count.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

from .config import ExperimentConfig
from .engine import stable_seed
from .env import EpisodeOutcome, run_episode
from .metrics import PairedRun
from .policy import PolicyParams


def episode_seeds(root_seed: int, iteration: int, count: int) -> list[int]:
    return [stable_seed(root_seed, f"train/{iteration}/{k}") for k in range(count)]


def pair_seeds(root_seed: int, count: int) -> list[int]:
    return [stable_seed(root_seed, f"pair/{k}") for k in range(count)]


def _collect_one(args) -> EpisodeOutcome:
    cfg, seed, params, stochastic, with_baseline = args
    outcome = run_episode(cfg, seed, params, learning=stochastic,
                          collect=params is not None)
    if with_baseline:
        outcome.baseline_reward = run_episode(cfg, seed, None).reward
    return outcome


def collect_episodes(
    cfg: ExperimentConfig,
    params: PolicyParams | None,
    seeds: list[int],
    stochastic: bool,
    workers: int = 1,
    with_baseline: bool = False,
) -> list[EpisodeOutcome]:
    """Roll out one episode per seed; optionally also run the baseline shuffle
    under each seed to provide a seed-matched reward reference."""
    jobs = [(cfg, s, params, stochastic, with_baseline) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_collect_one(j) for j in jobs]
    with mp.Pool(processes=min(workers, len(jobs))) as pool:
        return list(pool.imap(_collect_one, jobs, chunksize=1))


def _run_pair(args) -> PairedRun:
    cfg, seed, params, stochastic = args
    baseline = run_episode(cfg, seed, None)
    treated = run_episode(
        cfg, seed, params, learning=False, stochastic=stochastic
    )
    return PairedRun(seed=seed, baseline=baseline.report, treated=treated.report)


def evaluate_pairs(
    cfg: ExperimentConfig,
    params: PolicyParams,
    k: int,
    workers: int = 1,
    stochastic: bool = False,
    progress=None,
) -> list[PairedRun]:
    """k paired runs: baseline shuffle vs policy ordering under shared seeds.

    The treated arm is greedy by default; ``stochastic=True`` samples the
    policy noise instead (used for null-control experiments).
    """
    seeds = pair_seeds(cfg.experiment.root_seed, k)
    jobs = [(cfg, s, params, stochastic) for s in seeds]
    if workers <= 1 or k <= 1:
        out = []
        for i, job in enumerate(jobs):
            out.append(_run_pair(job))
            if progress is not None:
                progress(i + 1, k)
        return out
    results = []
    with mp.Pool(processes=min(workers, k)) as pool:
        for i, pair in enumerate(pool.imap(_run_pair, jobs, chunksize=1)):
            results.append(pair)
            if progress is not None:
                progress(i + 1, k)
    return results
