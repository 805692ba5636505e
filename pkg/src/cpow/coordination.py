"""Shared-pool mutual exclusion (Ricart-Agrawala) and Berkeley-style clock agreement."""
from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .chain import Transaction
from .errors import AlreadyWanted, NoSamples, NotHoldingMutex, SyncStale

NodeId = str


@dataclass(frozen=True, order=True)
class LamportStamp:
    counter: int
    node: NodeId


class MutexState(str, enum.Enum):
    RELEASED = "released"
    WANTED = "wanted"
    HELD = "held"


@dataclass(frozen=True)
class MutexRequest:
    stamp: LamportStamp


@dataclass(frozen=True)
class MutexReply:
    sender: NodeId


class RicartAgrawala:
    """One node's view of a group mutex. Methods return ``(destination, message)`` pairs."""

    def __init__(self, node: NodeId, peers: Iterable[NodeId]):
        self.node = node
        self.peers = frozenset(p for p in peers if p != node)
        self.clock = 0
        self.state = MutexState.RELEASED
        self.pending_replies: set[NodeId] = set()
        self.deferred: set[NodeId] = set()
        self.my_request: Optional[LamportStamp] = None

    @property
    def held(self) -> bool:
        return self.state is MutexState.HELD

    def request(self) -> list[tuple[NodeId, MutexRequest]]:
        if self.state is not MutexState.RELEASED:
            raise AlreadyWanted(f"{self.node} already {self.state.value}")
        self.clock += 1
        self.my_request = LamportStamp(self.clock, self.node)
        self.pending_replies = set(self.peers)
        self.state = MutexState.HELD if not self.peers else MutexState.WANTED
        return [(p, MutexRequest(self.my_request)) for p in sorted(self.peers)]

    def on_request(self, src: NodeId, stamp: LamportStamp) -> list[tuple[NodeId, MutexReply]]:
        self.clock = max(self.clock, stamp.counter) + 1
        if self.state is MutexState.HELD or (
            self.state is MutexState.WANTED and self.my_request < stamp
        ):
            self.deferred.add(src)
            return []
        return [(src, MutexReply(self.node))]

    def on_reply(self, src: NodeId) -> bool:
        """Record a reply; True when this reply grants entry."""
        self.pending_replies.discard(src)
        if self.state is MutexState.WANTED and not self.pending_replies:
            self.state = MutexState.HELD
            return True
        return False

    def release(self) -> list[tuple[NodeId, MutexReply]]:
        out = [(d, MutexReply(self.node)) for d in sorted(self.deferred)]
        self.state = MutexState.RELEASED
        self.deferred.clear()
        self.my_request = None
        return out


@dataclass
class SharedTxPool:
    """Append-only, totally ordered transaction log replicated across a group."""

    ordered: list[Transaction] = field(default_factory=list)
    seen: set[bytes] = field(default_factory=set)
    _early: dict[int, Transaction] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ordered)

    def _append(self, tx: Transaction) -> bool:
        d = tx.digest()
        if d in self.seen:
            return False
        self.seen.add(d)
        self.ordered.append(tx)
        return True

    def receive(self, index: int, tx: Transaction) -> None:
        """Apply a replicated insert; out-of-order arrivals wait for the gap to fill."""
        if index < len(self.ordered):
            return
        self._early[index] = tx
        while len(self.ordered) in self._early:
            self._append(self._early.pop(len(self.ordered)))

    def digest(self) -> bytes:
        from .chain import tx_root

        return tx_root(self.ordered)


def pool_insert(pool: SharedTxPool, tx: Transaction, mutex: Optional[RicartAgrawala]) -> SharedTxPool:
    """Append ``tx`` under the group mutex; duplicates are ignored."""
    if mutex is None or not mutex.held:
        raise NotHoldingMutex("shared pool insertion outside the critical section")
    pool._append(tx)
    return pool


@dataclass(frozen=True)
class ClockSample:
    node: NodeId
    reported_time: int


@dataclass(frozen=True)
class SyncResult:
    reference: int
    offsets: dict[NodeId, int]
    height: int = 0
    used: tuple[NodeId, ...] = ()

    def adjusted(self, samples: Iterable[ClockSample]) -> dict[NodeId, int]:
        return {s.node: s.reported_time + self.offsets[s.node] for s in samples}


def berkeley_sync(
    samples: Iterable[ClockSample], outlier_bound: Optional[float] = None, height: int = 0
) -> SyncResult:
    """Mean of reported clocks after dropping samples far from the median.

    With no explicit bound, samples further than 10x the median absolute
    deviation are discarded. The reference is floored to an integer tick so
    every participant computes the identical value.
    """
    samples = sorted(samples, key=lambda s: s.node)
    if not samples:
        raise NoSamples("berkeley_sync needs at least one clock sample")
    times = [s.reported_time for s in samples]
    median = statistics.median(times)
    if outlier_bound is None:
        outlier_bound = 10 * statistics.median(abs(t - median) for t in times)
    used = [s for s in samples if abs(s.reported_time - median) <= outlier_bound] or samples
    reference = sum(s.reported_time for s in used) // len(used)
    offsets = {s.node: reference - s.reported_time for s in samples}
    return SyncResult(reference, offsets, height, tuple(s.node for s in used))


def group_timestamp(sync: SyncResult, height: int, parent_timestamp: int = 0) -> int:
    """Shared header timestamp for ``height``; never earlier than the parent's."""
    if sync.height != height:
        raise SyncStale(f"sync taken for height {sync.height}, now mining {height}")
    return max(sync.reference, parent_timestamp)
