"""Block forging and block-hash propagation state machines.

The Ethereum-style scheme is the default: a node that learns a new block sends
the full payload to the first floor(sqrt(N)) entries of its (re)ordered
connection list and a hash announcement to the rest; announce receivers fetch
header and body from the first announcer. A Bitcoin-style inv/getdata variant
sits behind ``variant="bitcoin"``. Transactions flood one hop from random
injection points and feed each receiver's per-neighbor latency estimate, which
is the observable the ranking agent later consumes.

Every run is driven by a single event queue; all randomness comes from labeled
substreams of the run seed so paired runs share their exogenous schedule
(topology, forging, transactions) while protocol-endogenous draws stay
isolated per concern.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

from .engine import EventQueue, RngStream, derive_stream, run_until
from .network import LatencyModel, Topology, draw_link_factors, pair_base_matrix
from . import metrics

# Block-propagation message kinds. Tx traffic is tracked separately and never
# counts toward the per-block message metric.
FULL_BLOCK = "full_block"
HASH_ANNOUNCE = "hash_announce"
GET_HEADER = "get_header"
HEADER = "header"
GET_BODY = "get_body"
BODY = "body"
INV = "inv"
GET_DATA = "get_data"

BLOCK_MSG_KINDS = (
    FULL_BLOCK, HASH_ANNOUNCE, GET_HEADER, HEADER, GET_BODY, BODY, INV, GET_DATA,
)


class ProtocolFault(Exception):
    """A state-machine contract was violated (e.g. broadcast order is not a permutation)."""


@dataclass(frozen=True)
class Block:
    id: int
    parent_id: int | None
    height: int
    forger: int
    size: float
    forged_at: float


@dataclass
class ProtocolConfig:
    variant: str = "ethereum"  # or "bitcoin"
    block_bytes: float = 154363.0
    header_bytes: float = 600.0    # header request and response
    announce_bytes: float = 72.0   # 32-byte hash + 40-byte envelope
    request_bytes: float = 72.0    # get-body / inv / get-data
    tx_bytes: float = 250.0
    forging_interval_s: float = 13.0
    tx_rate_per_s: float = 12.0
    order_mode: str = "shuffle"    # baseline broadcast order: "shuffle" or "fixed"
    latency_alpha: float = 0.3     # EWMA weight for latency estimates

    def __post_init__(self) -> None:
        if self.variant not in ("ethereum", "bitcoin"):
            raise ValueError(f"unknown protocol variant {self.variant!r}")
        if self.order_mode not in ("shuffle", "fixed"):
            raise ValueError(f"unknown order_mode {self.order_mode!r}")


@dataclass
class NodeState:
    """Per-node protocol state."""

    id: int
    region: str
    is_miner: bool
    connections: list[int]
    known_blocks: set[int] = field(default_factory=set)
    pending: set[int] = field(default_factory=set)
    latency_est: dict[int, float] = field(default_factory=dict)
    first_seen: dict[int, float] = field(default_factory=dict)
    head_id: int = 0
    head_height: int = 0


def update_latency_estimate(
    node: NodeState, neighbor: int, observed: float, alpha: float = 0.3
) -> None:
    """EWMA update of the node's delay estimate for one neighbor.

    The first observation seeds the estimate directly.
    """
    if observed <= 0:
        raise ValueError("observed delay must be positive")
    old = node.latency_est.get(neighbor)
    if old is None:
        node.latency_est[neighbor] = observed
    else:
        node.latency_est[neighbor] = (1.0 - alpha) * old + alpha * observed


def full_block_fanout(n_connections: int) -> int:
    """How many neighbors receive the full payload: floor(sqrt(N)), at least 1."""
    return max(1, math.isqrt(n_connections))


def draw_forging_schedule(
    topology: Topology, interval_s: float, duration_s: float, rng: RngStream
) -> list[tuple[float, int]]:
    """Poisson block arrivals over [0, duration) with hash-rate-weighted forgers."""
    miners = topology.miners
    if not miners:
        raise ValueError("topology has no miners")
    ids = [m.id for m in miners]
    total = sum(m.hash_rate_share for m in miners)
    weights = [m.hash_rate_share / total for m in miners]
    schedule = []
    t = 0.0
    while True:
        t += float(rng.gen.exponential(interval_s))
        if t >= duration_s:
            break
        forger = int(rng.gen.choice(ids, p=weights))
        schedule.append((t, forger))
    return schedule


def draw_tx_schedule(
    n_nodes: int, rate_per_s: float, duration_s: float, rng: RngStream
) -> list[tuple[float, int]]:
    """Poisson transaction injections at uniformly random nodes."""
    if rate_per_s <= 0:
        raise ValueError("tx rate must be positive")
    schedule = []
    t = 0.0
    while True:
        t += float(rng.gen.exponential(1.0 / rate_per_s))
        if t >= duration_s:
            break
        src = int(rng.gen.integers(0, n_nodes))
        schedule.append((t, src))
    return schedule


# order_fn(sim, node, block) -> permuted copy of node.connections
OrderFn = Callable[["Simulation", NodeState, Block], list[int]]


class Simulation:
    """One fixed-duration propagation run over a frozen topology.

    The broadcast order at every decision comes from ``order_fn``; the default
    baseline freshly shuffles the node's connection list ("shuffle") or keeps
    its base order ("fixed"). A run is strictly single-threaded and fully
    determined by (topology, config, seed, order_fn).
    """

    def __init__(
        self,
        topology: Topology,
        latency_model: LatencyModel,
        proto: ProtocolConfig,
        duration_s: float,
        seed: int,
        sync_threshold: float = 0.5,
        order_fn: OrderFn | None = None,
        keep_log: bool = False,
        track_digest: bool = False,
    ) -> None:
        self.topology = topology
        self.model = latency_model
        self.proto = proto
        self.duration_s = duration_s
        self.seed = seed
        self.sync_threshold = sync_threshold
        self.keep_log = keep_log
        self._hasher = hashlib.sha256() if track_digest else None

        self.queue = EventQueue()
        self.rng_forge = derive_stream(seed, "net/forging")
        self.rng_tx = derive_stream(seed, "net/tx-schedule")
        self.rng_lat_block = derive_stream(seed, "net/latency-block")
        self.rng_lat_tx = derive_stream(seed, "net/latency-tx")
        self.rng_shuffle = derive_stream(seed, "net/shuffle")

        factors = draw_link_factors(
            latency_model, topology.n_nodes, derive_stream(seed, "net/link-latency")
        )
        self.pair_base = pair_base_matrix(latency_model, topology, factors)
        self._byte_cost = 1.0 / latency_model.bandwidth_Bps + (
            latency_model.t_proc_s if latency_model.t_proc_mode == "per_byte" else 0.0
        )
        self._flat_cost = (
            latency_model.t_proc_s if latency_model.t_proc_mode == "per_block" else 0.0
        )

        self.nodes = [
            NodeState(
                id=d.id,
                region=d.region,
                is_miner=d.is_miner,
                connections=list(topology.adjacency[d.id]),
            )
            for d in topology.nodes
        ]
        self.order_fn = order_fn if order_fn is not None else self._baseline_order

        genesis = Block(id=0, parent_id=None, height=0, forger=-1,
                        size=proto.block_bytes, forged_at=0.0)
        self.blocks: dict[int, Block] = {0: genesis}
        for node in self.nodes:
            node.known_blocks.add(0)
        self._next_block_id = 1

        self.threshold_count = math.ceil(sync_threshold * len(self.nodes))
        self.known_count: dict[int, int] = {}
        self.sync_at: dict[int, float] = {}
        self.forged: list[Block] = []

        self.msgs_sent = 0
        self.msgs_received = 0
        self.bytes_sent = 0.0
        self.tx_sent = 0
        self.tx_received = 0
        self.anomalies = 0
        self.log: list[tuple] = []

        for t, forger in draw_forging_schedule(
            topology, proto.forging_interval_s, duration_s, self.rng_forge
        ):
            self.queue.schedule(t, "forge", forger)
        for t, src in draw_tx_schedule(
            len(self.nodes), proto.tx_rate_per_s, duration_s, self.rng_tx
        ):
            self.queue.schedule(t, "txinj", src)
        self.queue.schedule(duration_s, "end")

    # -- infrastructure ----------------------------------------------------

    def _digest_event(self, ev) -> None:
        h = self._hasher
        if h is None:
            return
        h.update(f"{ev.kind}:{ev.at.hex()}:{ev.seq}".encode())
        p = ev.payload
        if type(p) is tuple:
            h.update((":".join(str(x) for x in p[:4])).encode())
        elif p is not None:
            h.update(str(p).encode())
        h.update(b"\n")

    def digest(self) -> str | None:
        return self._hasher.hexdigest() if self._hasher is not None else None

    def _log_row(self, row: tuple) -> None:
        if self.keep_log:
            self.log.append(row)

    def _baseline_order(self, sim: "Simulation", node: NodeState, block: Block) -> list[int]:
        if self.proto.order_mode == "fixed":
            return list(node.connections)
        perm = self.rng_shuffle.gen.permutation(len(node.connections))
        conn = node.connections
        return [conn[i] for i in perm]

    # -- protocol actions --------------------------------------------------

    def _pair_delay(self, frm_id: int, to_id: int, size: float, rng: RngStream) -> float:
        """Latency draw for one ordered pair plus the size-dependent delay."""
        base = self.pair_base[frm_id, to_id]
        sigma = self.model.jitter_sigma
        if sigma != 0.0:
            base = base * math.exp(sigma * rng.gen.standard_normal())
        return base + size * self._byte_cost + self._flat_cost

    def send_message(self, frm: NodeState, to_id: int, kind: str, block_id: int, size: float) -> None:
        delay = self._pair_delay(frm.id, to_id, size, self.rng_lat_block)
        now = self.queue.now
        self.queue.schedule(now + delay, "msg", (kind, frm.id, to_id, block_id, size, now))
        self.msgs_sent += 1
        self.bytes_sent += size
        self._log_row(("send", now, kind, frm.id, to_id, block_id, size))

    def broadcast_block(self, node: NodeState, block: Block) -> None:
        """Send the full payload to the first floor(sqrt(N)) neighbors of the
        chosen order, a hash announcement (or inv) to the rest."""
        order = self.order_fn(self, node, block)
        if len(order) != len(node.connections) or set(order) != set(node.connections):
            raise ProtocolFault(
                f"broadcast order for node {node.id} is not a permutation of its connections"
            )
        if self.proto.variant == "bitcoin":
            for to_id in order:
                self.send_message(node, to_id, INV, block.id, self.proto.request_bytes)
            return
        n_full = full_block_fanout(len(order))
        for i, to_id in enumerate(order):
            if i < n_full:
                self.send_message(node, to_id, FULL_BLOCK, block.id, block.size)
            else:
                self.send_message(node, to_id, HASH_ANNOUNCE, block.id, self.proto.announce_bytes)

    def learn_block(self, node: NodeState, block: Block) -> None:
        """Mark the block known, update chain head and sync tally, re-broadcast."""
        now = self.queue.now
        node.known_blocks.add(block.id)
        node.pending.discard(block.id)
        node.first_seen[block.id] = now
        if block.height > node.head_height:
            node.head_id = block.id
            node.head_height = block.height
        count = self.known_count.get(block.id, 0) + 1
        self.known_count[block.id] = count
        if count == self.threshold_count and block.id not in self.sync_at:
            self.sync_at[block.id] = now
        self._log_row(("known", now, node.id, block.id))
        self.broadcast_block(node, block)

    def _handle_forge(self, forger_id: int) -> None:
        forger = self.nodes[forger_id]
        parent = self.blocks[forger.head_id]
        block = Block(
            id=self._next_block_id,
            parent_id=parent.id,
            height=parent.height + 1,
            forger=forger_id,
            size=self.proto.block_bytes,
            forged_at=self.queue.now,
        )
        self._next_block_id += 1
        self.blocks[block.id] = block
        self.forged.append(block)
        self._log_row(("forge", block.forged_at, block.id, forger_id, block.size, block.height))
        self.learn_block(forger, block)

    def handle_message(self, node: NodeState, kind: str, frm: int, block_id: int,
                       size: float, send_t: float) -> None:
        self.msgs_received += 1
        self._log_row(("recv", self.queue.now, kind, frm, node.id, block_id, size, send_t))
        block = self.blocks[block_id]
        proto = self.proto

        if kind == FULL_BLOCK:
            if block_id not in node.known_blocks:
                self.learn_block(node, block)
        elif kind == HASH_ANNOUNCE:
            if block_id not in node.known_blocks and block_id not in node.pending:
                node.pending.add(block_id)
                self.send_message(node, frm, GET_HEADER, block_id, proto.header_bytes)
        elif kind == GET_HEADER:
            if block_id in node.known_blocks:
                self.send_message(node, frm, HEADER, block_id, proto.header_bytes)
            else:
                self.anomalies += 1
        elif kind == HEADER:
            if block_id in node.pending:
                self.send_message(node, frm, GET_BODY, block_id, proto.request_bytes)
        elif kind == GET_BODY:
            if block_id in node.known_blocks:
                body = max(block.size - proto.header_bytes, 0.0)
                self.send_message(node, frm, BODY, block_id, body)
            else:
                self.anomalies += 1
        elif kind == BODY:
            if block_id in node.pending:
                self.learn_block(node, block)
            elif block_id not in node.known_blocks:
                self.anomalies += 1  # body never requested
        elif kind == INV:
            if block_id not in node.known_blocks and block_id not in node.pending:
                node.pending.add(block_id)
                self.send_message(node, frm, GET_DATA, block_id, proto.request_bytes)
        elif kind == GET_DATA:
            if block_id in node.known_blocks:
                self.send_message(node, frm, FULL_BLOCK, block_id, block.size)
            else:
                self.anomalies += 1
        else:
            raise ProtocolFault(f"unknown message kind {kind!r}")

    def _handle_tx_injection(self, src_id: int) -> None:
        """Flood one transaction a single hop; receivers update latency estimates."""
        src = self.nodes[src_id]
        now = self.queue.now
        tx_bytes = self.proto.tx_bytes
        for to_id in src.connections:
            delay = self._pair_delay(src_id, to_id, tx_bytes, self.rng_lat_tx)
            self.queue.schedule(now + delay, "tx", (src_id, to_id, now))
            self.tx_sent += 1

    def _handle_event(self, ev) -> None:
        self._digest_event(ev)
        if ev.kind == "msg":
            kind, frm, to, block_id, size, send_t = ev.payload
            self.handle_message(self.nodes[to], kind, frm, block_id, size, send_t)
        elif ev.kind == "tx":
            frm, to, send_t = ev.payload
            self.tx_received += 1
            update_latency_estimate(self.nodes[to], frm, ev.at - send_t,
                                    self.proto.latency_alpha)
        elif ev.kind == "forge":
            self._handle_forge(ev.payload)
        elif ev.kind == "txinj":
            self._handle_tx_injection(ev.payload)
        elif ev.kind == "end":
            self._log_row(("end", ev.at))

    def run(self) -> "metrics.SimReport":
        run_until(self.queue, self.duration_s, self._handle_event)
        return self.report()

    def report(self) -> "metrics.SimReport":
        sync_times = [
            self.sync_at[b.id] - b.forged_at for b in self.forged if b.id in self.sync_at
        ]
        return metrics.SimReport.from_tallies(
            forged=len(self.forged),
            synchronized=len(sync_times),
            sync_times=sync_times,
            messages=self.msgs_sent,
            messages_received=self.msgs_received,
            bytes_sent=self.bytes_sent,
            tx_messages=self.tx_sent,
            anomalies=self.anomalies,
        )
