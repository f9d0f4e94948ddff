"""Overlay topology and per-channel delay model.

Nodes live in named geographic regions; one-way latency between two nodes is a
log-normal jitter around a per-region-pair median, and moving a payload costs
an additional size-dependent transmission delay. The default build is the
150-node fully connected overlay (three regions, 50 nodes each, half miners).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import RngStream


class ConfigurationError(Exception):
    """Inconsistent topology or latency configuration."""


@dataclass(frozen=True)
class NodeDescriptor:
    id: int
    region: str
    is_miner: bool
    hash_rate_share: float


@dataclass
class Topology:
    nodes: list[NodeDescriptor]
    adjacency: list[list[int]]  # per-node ordered connection list

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def miners(self) -> list[NodeDescriptor]:
        return [n for n in self.nodes if n.is_miner]


@dataclass
class TopologyConfig:
    regions: tuple[str, ...] = ("Ohio", "Tokyo", "Ireland")
    nodes_per_region: int = 50
    miner_fraction: float = 0.5
    degree: int | None = None  # None = fully connected


# Default one-way medians in milliseconds. Intra-region links are fast; the
# three inter-region pairs are ordered Ohio-Ireland < Ohio-Tokyo < Ireland-Tokyo.
DEFAULT_BASE_MS = {
    ("Ohio", "Ohio"): 20.0,
    ("Tokyo", "Tokyo"): 20.0,
    ("Ireland", "Ireland"): 20.0,
    ("Ohio", "Ireland"): 80.0,
    ("Ohio", "Tokyo"): 150.0,
    ("Ireland", "Tokyo"): 220.0,
}


@dataclass
class LatencyModel:
    """Region-pair latency medians plus bandwidth and processing cost.

    ``base_ms`` is symmetric and strictly positive. ``t_proc_s`` is a per-byte
    processing delay by default; set ``t_proc_mode="per_block"`` to charge it
    once per message instead. ``link_sigma`` spreads a persistent per-link
    quality factor (log-normal, symmetric, drawn once per run) on top of the
    per-message jitter: each node has consistently better and worse direct
    connections, which is what makes its latency estimates worth acting on.
    """

    base_ms: dict[tuple[str, str], float] = field(
        default_factory=lambda: dict(DEFAULT_BASE_MS)
    )
    jitter_sigma: float = 0.25
    bandwidth_Bps: float = 1.25e6
    t_proc_s: float = 0.0
    t_proc_mode: str = "per_byte"
    link_sigma: float = 0.5

    def __post_init__(self) -> None:
        sym: dict[tuple[str, str], float] = {}
        for (a, b), v in self.base_ms.items():
            if v <= 0:
                raise ConfigurationError(f"latency base for {a}-{b} must be positive")
            sym[(a, b)] = v
            existing = self.base_ms.get((b, a), v)
            if existing != v and (b, a) in self.base_ms:
                raise ConfigurationError(f"latency base for {a}-{b} is asymmetric")
            sym[(b, a)] = v
        self.base_ms = sym
        if self.bandwidth_Bps <= 0:
            raise ConfigurationError("bandwidth_Bps must be positive")
        if self.t_proc_s < 0:
            raise ConfigurationError("t_proc_s must be non-negative")
        if self.t_proc_mode not in ("per_byte", "per_block"):
            raise ConfigurationError(f"unknown t_proc_mode {self.t_proc_mode!r}")

    def base_seconds(self, frm: str, to: str) -> float:
        try:
            return self.base_ms[(frm, to)] / 1000.0
        except KeyError:
            raise ConfigurationError(f"no latency entry for region pair {frm}-{to}")


def build_topology(cfg: TopologyConfig, rng: RngStream) -> Topology:
    """Construct the overlay: regions, miner flags, and per-node connection lists.

    Miner selection and each node's base connection order are drawn from
    ``rng``, so the same (config, seed) always yields the same topology. Miners
    split the hash rate equally.
    """
    if cfg.nodes_per_region < 2:
        raise ConfigurationError("nodes_per_region must be at least 2")
    if not (0.0 < cfg.miner_fraction <= 1.0):
        raise ConfigurationError("miner_fraction must be in (0, 1]")
    if len(cfg.regions) != len(set(cfg.regions)):
        raise ConfigurationError("region names must be unique")

    n_total = cfg.nodes_per_region * len(cfg.regions)
    miners_per_region = int(round(cfg.nodes_per_region * cfg.miner_fraction))
    if miners_per_region < 1:
        raise ConfigurationError("miner_fraction too small: no miners in a region")
    n_miners = miners_per_region * len(cfg.regions)
    share = 1.0 / n_miners

    nodes: list[NodeDescriptor] = []
    for r_idx, region in enumerate(cfg.regions):
        ids = np.arange(r_idx * cfg.nodes_per_region, (r_idx + 1) * cfg.nodes_per_region)
        miner_ids = set(rng.gen.choice(ids, size=miners_per_region, replace=False).tolist())
        for i in ids:
            is_miner = int(i) in miner_ids
            nodes.append(
                NodeDescriptor(
                    id=int(i),
                    region=region,
                    is_miner=is_miner,
                    hash_rate_share=share if is_miner else 0.0,
                )
            )

    if cfg.degree is None:
        neighbor_sets = [
            [j for j in range(n_total) if j != i] for i in range(n_total)
        ]
    else:
        if cfg.degree < 2 or cfg.degree % 2 != 0 or cfg.degree >= n_total:
            raise ConfigurationError(
                "degree must be an even integer in [2, n_nodes); use None for full mesh"
            )
        # Circulant graph: symmetric, connected, and independent of the rng so
        # that degree-limited test topologies stay easy to reason about.
        half = cfg.degree // 2
        neighbor_sets = [
            sorted({(i + off) % n_total for off in range(-half, half + 1) if off != 0})
            for i in range(n_total)
        ]

    adjacency = []
    for i in range(n_total):
        order = np.array(neighbor_sets[i], dtype=np.int64)
        rng.gen.shuffle(order)
        adjacency.append(order.tolist())

    return Topology(nodes=nodes, adjacency=adjacency)


def sample_latency(model: LatencyModel, frm: str, to: str, rng: RngStream) -> float:
    """One-way latency draw in seconds: median * exp(sigma * z), z ~ N(0,1)."""
    base = model.base_seconds(frm, to)
    if model.jitter_sigma == 0.0:
        return base
    z = rng.gen.standard_normal()
    return base * float(np.exp(model.jitter_sigma * z))


def draw_link_factors(model: LatencyModel, n_nodes: int, rng: RngStream) -> np.ndarray:
    """Persistent symmetric per-link quality multipliers, log-normal around 1."""
    if model.link_sigma == 0.0:
        return np.ones((n_nodes, n_nodes))
    g = rng.gen.standard_normal((n_nodes, n_nodes))
    g = (g + g.T) / np.sqrt(2.0)
    return np.exp(model.link_sigma * g)


def pair_base_matrix(model: LatencyModel, topology: Topology, factors: np.ndarray) -> np.ndarray:
    """Per-pair median latency (seconds): region base times the link factor."""
    regions = [n.region for n in topology.nodes]
    names = sorted(set(regions))
    idx = {r: i for i, r in enumerate(names)}
    region_base = np.empty((len(names), len(names)))
    for a in names:
        for b in names:
            region_base[idx[a], idx[b]] = model.base_seconds(a, b)
    r_idx = np.array([idx[r] for r in regions])
    return region_base[np.ix_(r_idx, r_idx)] * factors


def transmission_delay(model: LatencyModel, size: float, latency: float) -> float:
    """Total one-way delay for a payload of ``size`` bytes given a latency draw.

    latency + size * (1/bandwidth + t_proc) with per-byte processing, or
    latency + size/bandwidth + t_proc when processing is charged per message.
    """
    if size < 0:
        raise ValueError("size must be non-negative")
    if model.t_proc_mode == "per_byte":
        return latency + size * (1.0 / model.bandwidth_Bps + model.t_proc_s)
    return latency + size / model.bandwidth_Bps + model.t_proc_s


def min_one_hop_delay(model: LatencyModel, smallest_payload: float = 0.0) -> float:
    """Lower bound on any single message delay under zero jitter.

    With log-normal jitter the draw can undershoot the median, so this bound
    uses a generous 5-sigma allowance below the smallest median.
    """
    base = min(model.base_ms.values()) / 1000.0
    floor = base * float(np.exp(-5.0 * model.jitter_sigma))
    return transmission_delay(model, smallest_payload, floor)
