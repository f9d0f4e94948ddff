"""MDP wrapper around the simulator.

A node's observation is its connection list's latency estimates, normalized by
a fixed cap and padded to a constant width; the action is a permutation of the
connection list, produced by the shared ranking policy at every broadcast
decision. The episode reward is terminal: synchronized-blocks rate divided by
synchronization time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .engine import derive_stream
from .metrics import SimReport
from .policy import PolicyParams, sample_ranking
from .protocol import Block, NodeState, ProtocolFault, Simulation


@dataclass(frozen=True)
class Observation:
    latencies: np.ndarray  # (max_degree,), values in [0, 1], padded with 1.0
    degree: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(len(self.latencies), dtype=bool)
        m[: self.degree] = True
        return m


@dataclass(frozen=True)
class RankingAction:
    permutation: np.ndarray  # bijective over range(degree)


@dataclass
class StepRecord:
    node_id: int
    observation: Observation
    scores: np.ndarray
    log_prob: float
    value_est: float
    decision_index: int


@dataclass
class EpisodeOutcome:
    records: list[StepRecord]
    report: SimReport
    reward: float
    seed: int
    digest: str | None = None
    log: list = field(default_factory=list, repr=False)
    # reward of the baseline-shuffle run under the same seed, when collected;
    # used as a seed-matched control variate during training
    baseline_reward: float | None = None


def observe(node: NodeState, max_degree: int, cap_s: float = 1.0) -> Observation:
    """Normalized latency estimates in connection-list order, capped and padded.

    Neighbors without an estimate yet default to the cap (slowest plausible).
    """
    lat = np.ones(max_degree)
    est = node.latency_est
    for i, nb in enumerate(node.connections):
        e = est.get(nb)
        if e is not None and e < cap_s:
            lat[i] = e / cap_s
    return Observation(latencies=lat, degree=len(node.connections))


def apply_action(node: NodeState, action: RankingAction) -> list[int]:
    """Permute the connection list; downstream broadcast sends the full block
    to the first floor(sqrt(N)) entries of the result."""
    perm = np.asarray(action.permutation)
    conn = node.connections
    if len(perm) != len(conn) or not np.array_equal(np.sort(perm), np.arange(len(conn))):
        raise ProtocolFault(f"invalid permutation for node {node.id}")
    return [conn[i] for i in perm]


def episode_reward(report: SimReport) -> float:
    """Synchronized-blocks rate over synchronization time; 0 when nothing synced."""
    if report.sync_time_s is None or report.sync_time_s <= 0.0:
        return 0.0
    return report.sync_rate / report.sync_time_s


class PolicyOrderer:
    """Bridges the simulator's broadcast hook to the shared policy.

    Queried once per broadcast decision with the deciding node's observation;
    stochastic while learning, greedy otherwise. Collects one StepRecord per
    decision when asked to.
    """

    def __init__(
        self,
        params: PolicyParams,
        max_degree: int,
        cap_s: float,
        rng,
        greedy: bool,
        collect: bool,
    ) -> None:
        self.params = params
        self.max_degree = max_degree
        self.cap_s = cap_s
        self.rng = rng
        self.greedy = greedy
        self.collect = collect
        self.records: list[StepRecord] = []

    def __call__(self, sim: Simulation, node: NodeState, block: Block) -> list[int]:
        obs = observe(node, self.max_degree, self.cap_s)
        perm, scores, log_prob, value = sample_ranking(
            self.params, obs.latencies, obs.degree, self.rng, greedy=self.greedy
        )
        if self.collect:
            padded = np.zeros(self.max_degree)
            padded[: obs.degree] = scores
            self.records.append(
                StepRecord(
                    node_id=node.id,
                    observation=obs,
                    scores=padded,
                    log_prob=log_prob,
                    value_est=value,
                    decision_index=len(self.records),
                )
            )
        return apply_action(node, RankingAction(permutation=perm))


def run_episode(
    cfg: ExperimentConfig,
    seed: int,
    params: PolicyParams | None = None,
    learning: bool = False,
    collect: bool = False,
    keep_log: bool = False,
    track_digest: bool = False,
    stochastic: bool | None = None,
) -> EpisodeOutcome:
    """One fixed-duration simulation, baseline or policy-driven.

    With ``params`` the shared policy reorders every broadcast: stochastic
    sampling while learning, greedy otherwise (override with ``stochastic``).
    Without, the baseline shuffle applies. Identical (cfg, seed, params,
    flags) reproduce the outcome exactly.
    """
    if stochastic is None:
        stochastic = learning
    topology = cfg.build_topology(seed)
    model = cfg.latency_model()
    orderer = None
    if params is not None:
        orderer = PolicyOrderer(
            params,
            max_degree=cfg.max_degree,
            cap_s=cfg.rl.obs_cap_s,
            rng=derive_stream(seed, "policy") if stochastic else None,
            greedy=not stochastic,
            collect=collect,
        )
    sim = Simulation(
        topology=topology,
        latency_model=model,
        proto=cfg.protocol,
        duration_s=cfg.experiment.duration_s,
        seed=seed,
        sync_threshold=cfg.experiment.sync_threshold,
        order_fn=orderer,
        keep_log=keep_log,
        track_digest=track_digest,
    )
    report = sim.run()
    return EpisodeOutcome(
        records=orderer.records if orderer is not None else [],
        report=report,
        reward=episode_reward(report),
        seed=seed,
        digest=sim.digest(),
        log=sim.log,
    )
