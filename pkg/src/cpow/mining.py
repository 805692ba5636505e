"""Nonce search, hashrate calibration, proof traces and the closed-form timing model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from .chain import BlockHeader, NONCE_MAX, difficulty_limit, header_hasher
from .errors import EmptyRange

TICKS_PER_SECOND = 1_000_000  # one virtual tick is a microsecond
DEFAULT_SAMPLE_STRIDE = 64


@dataclass(frozen=True, order=True)
class NonceRange:
    start: int
    end: int  # exclusive

    def __post_init__(self):
        if not 0 <= self.start < self.end <= NONCE_MAX + 1:
            raise EmptyRange(f"invalid nonce range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def size(self) -> int:
        """Same as ``len`` but safe for ranges wider than ``sys.maxsize``."""
        return self.end - self.start

    def __contains__(self, nonce: int) -> bool:
        return self.start <= nonce < self.end

    def __iter__(self):
        return iter(range(self.start, self.end))

    def overlaps(self, other: "NonceRange") -> bool:
        return self.start < other.end and other.start < self.end

    def as_list(self) -> list[int]:
        return [self.start, self.end]


@dataclass(frozen=True)
class HashrateEstimate:
    nonces_per_second: float

    def __post_init__(self):
        if not self.nonces_per_second > 0:
            raise ValueError("hashrate must be positive")


@dataclass
class ProofTrace:
    """Sampled nonce -> digest mapping over the ranges a miner claims to have searched."""

    entries: dict[int, bytes] = field(default_factory=dict)
    claimed: tuple[NonceRange, ...] = ()

    def __post_init__(self):
        self.entries = dict(sorted(self.entries.items()))

    def __len__(self) -> int:
        return len(self.entries)

    def covers(self, nonce: int) -> bool:
        return any(nonce in r for r in self.claimed)

    def is_sound(self) -> bool:
        return all(self.covers(n) for n in self.entries)


@dataclass
class MiningOutcome:
    found: Optional[tuple[int, bytes]]
    trace: ProofTrace
    nonces_tried: int

    @property
    def exhausted(self) -> bool:
        return self.found is None


def calibrate_hashrate(delay_per_nonce: int, window: int, base_hash_cost: int = 0) -> HashrateEstimate:
    """Nonces per second for a node paying ``delay_per_nonce + base_hash_cost`` ticks per nonce."""
    if window <= 0:
        raise ValueError("calibration window must be positive")
    cost = delay_per_nonce + base_hash_cost
    if cost <= 0:
        raise ValueError("per-nonce cost must be positive")
    return HashrateEstimate(TICKS_PER_SECOND / cost)


def nonces_in_window(window: int, cost_per_nonce: int) -> int:
    return window // cost_per_nonce


def expected_solo_time(n_total: int, rate: HashrateEstimate) -> float:
    """Seconds for one miner to exhaust ``n_total`` nonces."""
    return n_total / rate.nonces_per_second


def expected_collab_time(n_total: int, rate: HashrateEstimate, n: int) -> float:
    if n < 1:
        raise ValueError("group size must be >= 1")
    return n_total / (n * rate.nonces_per_second)


@dataclass(frozen=True)
class ScanPlan:
    """Deterministic visiting order over a base range plus extra segments.

    Extra segments are spread evenly through the base scan (one extra nonce
    first, then a run of base nonces, and so on) so that a miner certifies
    its extra segment at the same pace it advances through its base.
    """

    base: NonceRange
    extras: tuple[NonceRange, ...] = ()

    def __len__(self) -> int:
        return self.size

    @property
    def size(self) -> int:
        return self.base.size + self.extra_len

    @property
    def extra_len(self) -> int:
        return sum(e.size for e in self.extras)

    def _extra_at(self, k: int) -> int:
        for seg in self.extras:
            if k < seg.size:
                return seg.start + k
            k -= seg.size
        raise IndexError(k)

    def nonce_at(self, i: int) -> int:
        extra = self.extra_len
        if not extra:
            return self.base.start + i
        run = self.base.size // extra
        if run == 0:
            return self._extra_at(i) if i < extra else self.base.start + i - extra
        block, offset = divmod(i, run + 1)
        if offset == 0 and block < extra:
            return self._extra_at(block)
        return self.base.start + i - min(extra, block + 1)

    def spans(self, i: int, stop: int) -> Iterator[tuple[int, int]]:
        """Plan positions ``[i, stop)`` as consecutive ``(first_nonce, count)`` runs."""
        stop = min(stop, self.size)
        extra = self.extra_len
        run = self.base.size // extra if extra else 0
        if not extra or run == 0:
            # no interleaving: extras (if any) first, then the whole base
            while i < stop:
                if i < extra:
                    yield self._extra_at(i), 1
                    i += 1
                else:
                    yield self.base.start + i - extra, stop - i
                    i = stop
            return
        while i < stop:
            block, offset = divmod(i, run + 1)
            if offset == 0 and block < extra:
                yield self._extra_at(block), 1
                i += 1
                continue
            count = min(stop - i, run + 1 - offset) if block < extra else stop - i
            yield self.base.start + i - min(extra, block + 1), count
            i += count

    def ranges(self) -> tuple[NonceRange, ...]:
        return (self.base,) + self.extras


class NonceScanner:
    """Incremental, rewindable search over a :class:`ScanPlan`.

    The simulator hashes a slice ahead, then rewinds if a new block
    interrupts the slice before its virtual completion time.
    """

    def __init__(
        self,
        header: BlockHeader,
        plan: ScanPlan,
        difficulty: int,
        sample_stride: int = DEFAULT_SAMPLE_STRIDE,
        dense: Sequence[NonceRange] = (),
        record: bool = True,
    ):
        if sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        self.header = header
        self.plan = plan
        self.limit = difficulty_limit(difficulty)
        self.stride = sample_stride
        self.dense = tuple(dense)
        self.record = record
        self.position = 0
        self.found: Optional[tuple[int, bytes]] = None
        self.entries: dict[int, bytes] = {}
        self._prefix = header_hasher(header)
        self._slice: list[int] = []
        self._slice_start = 0

    @property
    def exhausted(self) -> bool:
        return self.position >= self.plan.size

    @property
    def done(self) -> bool:
        return self.found is not None or self.exhausted

    def _keep(self, nonce: int) -> bool:
        if nonce % self.stride == 0:
            return True
        for seg in self.dense:
            if seg.start <= nonce < seg.end:
                return True
        return False

    def advance(self, budget: int) -> int:
        """Hash up to ``budget`` nonces, stopping right after a hit. Returns the count."""
        if self.done:
            return 0
        stop = min(self.position + budget, self.plan.size)
        prefix, limit, record, keep = self._prefix, self.limit, self.record, self._keep
        self._slice = []
        self._slice_start = self.position
        i = self.position
        for first, run in self.plan.spans(i, stop):
            for nonce in range(first, first + run):
                h = prefix.copy()
                h.update(nonce.to_bytes(8, "big"))
                digest = h.digest()
                i += 1
                if record and keep(nonce):
                    self.entries[nonce] = digest
                    self._slice.append(nonce)
                if int.from_bytes(digest, "big") < limit:
                    self.found = (nonce, digest)
                    break
            if self.found is not None:
                break
        count = i - self.position
        self.position = i
        return count

    def rewind(self, keep: int) -> None:
        """Keep only the first ``keep`` nonces of the most recent slice."""
        target = self._slice_start + keep
        if target >= self.position:
            return
        dropped = {self.plan.nonce_at(j) for j in range(target, self.position)}
        for nonce in self._slice:
            if nonce in dropped:
                self.entries.pop(nonce, None)
        if self.found is not None and self.found[0] in dropped:
            self.found = None
        self.position = target

    def trace(self) -> ProofTrace:
        return ProofTrace(dict(self.entries), self.plan.ranges())


def search_range(
    header: BlockHeader,
    nonce_range: NonceRange,
    difficulty: int,
    sample_stride: int = DEFAULT_SAMPLE_STRIDE,
    overlap_segments: Iterable[NonceRange] = (),
) -> MiningOutcome:
    """Scan ``nonce_range`` in ascending order until a digest meets ``difficulty``."""
    if not isinstance(nonce_range, NonceRange):
        raise EmptyRange("a NonceRange is required")
    overlap_segments = tuple(overlap_segments)
    for seg in overlap_segments:
        if seg.start < nonce_range.start or seg.end > nonce_range.end:
            raise ValueError("overlap segments must lie inside the searched range")
    scanner = NonceScanner(
        header, ScanPlan(nonce_range), difficulty, sample_stride, overlap_segments
    )
    tried = scanner.advance(len(nonce_range))
    trace = ProofTrace(scanner.entries, (nonce_range,))
    return MiningOutcome(scanner.found, trace, tried)
