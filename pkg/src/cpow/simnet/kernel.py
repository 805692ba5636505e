"""Discrete-event kernel: virtual time, latency-modelled delivery, introspection hooks."""
from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..errors import Deadlock, InvariantViolation, UnknownNode


@dataclass(order=True)
class SimEvent:
    deliver_at: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    src: Optional[str] = field(default=None, compare=False)


@dataclass(frozen=True)
class LatencyModel:
    """Latency = base + uniform integer in [0, jitter] ticks."""

    base: int = 1000
    jitter: int = 500

    def __post_init__(self):
        if self.base < 0 or self.jitter < 0:
            raise ValueError("latency parameters must be >= 0")

    def sample(self, rng: random.Random) -> int:
        return self.base + (rng.randint(0, self.jitter) if self.jitter else 0)


class Process:
    """A simulated participant. ``handle`` is the only entry point."""

    id: str

    def handle(self, sim: "Simulator", event: SimEvent) -> None:  # pragma: no cover
        raise NotImplementedError


class Simulator:
    def __init__(self, seed: int = 0, latency: LatencyModel = LatencyModel(), trace_len: int = 64):
        self.now = 0
        self.seed = seed
        self.latency = latency
        self.rng = random.Random(f"net:{seed}")
        self.processes: dict[str, Process] = {}
        self.queue: list[SimEvent] = []
        self.events_processed = 0
        self._seq = 0
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._predicates: list[tuple[str, Callable[["Simulator"], bool]]] = []
        self.recent: deque = deque(maxlen=trace_len)

    # -- wiring --------------------------------------------------------------

    def add(self, process: Process) -> Process:
        self.processes[process.id] = process
        return process

    def remove(self, node_id: str) -> None:
        self.processes.pop(node_id, None)

    def introspect(self, name: str, predicate: Callable[["Simulator"], bool]) -> None:
        """Evaluate ``predicate`` after every event; the first False aborts the run."""
        self._predicates.append((name, predicate))

    # -- scheduling ----------------------------------------------------------

    def _push(self, at: int, target: str, payload, src) -> SimEvent:
        if at < self.now:
            raise ValueError("cannot schedule into the past")
        ev = SimEvent(at, self._seq, target, payload, src)
        self._seq += 1
        heapq.heappush(self.queue, ev)
        return ev

    def send(self, src: str, dst: str, payload) -> SimEvent:
        if dst not in self.processes:
            raise UnknownNode(dst)
        at = self.now + self.latency.sample(self.rng)
        key = (src, dst)
        at = max(at, self._last_delivery.get(key, 0))  # per-pair FIFO
        self._last_delivery[key] = at
        return self._push(at, dst, payload, src)

    def broadcast(self, src: str, dsts, payload) -> None:
        for dst in dsts:
            if dst != src:
                self.send(src, dst, payload)

    def schedule(self, target: str, delay: int, payload) -> SimEvent:
        """Local timer: no network latency, delivered to ``target`` after ``delay`` ticks."""
        return self._push(self.now + max(0, delay), target, payload, target)

    # -- execution -----------------------------------------------------------

    def step(self) -> bool:
        if not self.queue:
            return False
        ev = heapq.heappop(self.queue)
        self.now = ev.deliver_at
        self.events_processed += 1
        self.recent.append((ev.deliver_at, ev.src, ev.target, type(ev.payload).__name__))
        proc = self.processes.get(ev.target)
        if proc is not None:
            proc.handle(self, ev)
        for name, pred in self._predicates:
            if not pred(self):
                raise InvariantViolation(f"invariant '{name}' violated at tick {self.now}", self.recent)
        return True

    def run(
        self,
        stop: Optional[Callable[["Simulator"], bool]] = None,
        until: Optional[int] = None,
        max_events: Optional[int] = None,
    ) -> None:
        """Process events until ``stop`` holds, time passes ``until``, or the queue drains.

        A drained queue with an unmet ``stop`` condition is a :class:`Deadlock`.
        """
        while True:
            if stop is not None and stop(self):
                return
            if max_events is not None and self.events_processed >= max_events:
                return
            if not self.queue:
                if stop is None:
                    return
                raise Deadlock(f"no pending events at tick {self.now} and stop condition unmet")
            if until is not None and self.queue[0].deliver_at > until:
                self.now = max(self.now, until)
                return
            self.step()
