"""Deterministic discrete-event core: virtual clock, event queue, labeled RNG streams.

Simulated time is continuous (float seconds). Events are totally ordered by
(time, insertion sequence), so runs with the same seed and configuration replay
the exact same event sequence. Randomness is organized as named substreams
derived from one root seed: consumers that must stay aligned between paired
runs (forging schedule, transaction schedule, topology) read from their own
labels and are never perturbed by draws made on other labels.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np


class SchedulingError(Exception):
    """Raised when an event is scheduled before the current clock."""


@dataclass(frozen=True)
class Event:
    """One simulation occurrence, ordered by (at, seq).

    ``kind`` is a small string tag ("forge", "msg", "tx", "end"); ``payload``
    is whatever the handler needs and is never inspected by the queue.
    """

    at: float
    seq: int
    kind: str
    payload: Any = None

    def sort_key(self) -> tuple[float, int]:
        return (self.at, self.seq)


class EventQueue:
    """Priority queue over events with a monotone clock.

    The tie-break counter is assigned at scheduling time, which makes the
    dequeue order a strict total order independent of payload contents.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Event]] = []
        self._next_seq = 0
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, at: float, kind: str, payload: Any = None) -> Event:
        if at < self.now:
            raise SchedulingError(
                f"cannot schedule {kind!r} at t={at:.6f}: clock already at t={self.now:.6f}"
            )
        ev = Event(at=at, seq=self._next_seq, kind=kind, payload=payload)
        self._next_seq += 1
        heapq.heappush(self._heap, (at, ev.seq, ev))
        return ev

    def pop(self) -> Event:
        at, _, ev = heapq.heappop(self._heap)
        self.now = at
        return ev


def run_until(
    queue: EventQueue,
    t_end: float,
    handler: Callable[[Event], None],
    log: list[Event] | None = None,
) -> list[Event]:
    """Drain the queue up to and including t_end; return the processed events.

    Every event with ``at <= t_end`` is handed to ``handler`` exactly once, in
    (at, seq) order. Events scheduled beyond t_end stay in the queue untouched.
    The clock ends at exactly t_end. A handler exception propagates with the
    partial log attached so the caller can inspect what ran.
    """
    if log is None:
        log = []
    while len(queue) > 0 and queue._heap[0][0] <= t_end:
        ev = queue.pop()
        log.append(ev)
        try:
            handler(ev)
        except Exception as exc:
            exc.partial_log = log  # type: ignore[attr-defined]
            raise
    queue.now = t_end
    return log


@dataclass
class RngStream:
    """A reproducible random substream identified by (root_seed, label).

    The generator seed is a stable hash of the pair, so identical labels give
    identical sequences on every platform while distinct labels behave as
    independent streams.
    """

    root_seed: int
    label: str
    gen: np.random.Generator = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.gen is None:
            self.gen = np.random.default_rng(_stream_key(self.root_seed, self.label))


def _stream_key(root_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{root_seed}\x1f{label}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def derive_stream(root_seed: int, label: str) -> RngStream:
    """Stateless derivation of a labeled substream from a root seed."""
    return RngStream(root_seed=root_seed, label=label)


def stable_seed(root_seed: int, label: str) -> int:
    """A derived 63-bit seed; used to give every episode/pair its own root."""
    return _stream_key(root_seed, label) % (2**63)


def log_digest(rows: Iterable[str]) -> str:
    """SHA-256 digest over textual log rows; used to compare runs by content."""
    h = hashlib.sha256()
    for row in rows:
        h.update(row.encode())
        h.update(b"\n")
    return h.hexdigest()
