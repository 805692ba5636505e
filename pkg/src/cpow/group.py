"""Group formation by hashrate matching and nonce-range division with hidden overlaps."""
from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .errors import FormationTimeout, GroupTooSmall, NotAMember, OverlapTooSmall
from .mining import HashrateEstimate, NonceRange

NodeId = str

DEFAULT_TOLERANCE = 1.5
DEFAULT_TARGET_SIZE = 6
DEFAULT_OVERLAP_FRACTION = 0.01
DEFAULT_N_TOTAL = 2**24


class GroupStatus(str, enum.Enum):
    FORMING = "forming"
    MINING = "mining"
    SETTLING = "settling"


@dataclass(frozen=True)
class CollabRequest:
    sender: NodeId
    hashrate: HashrateEstimate
    sent_at: int

    @property
    def priority(self) -> tuple[int, NodeId]:
        return (self.sent_at, self.sender)


@dataclass(frozen=True)
class GroupDescriptor:
    group_id: str
    members: tuple[NodeId, ...]
    target_size: int = DEFAULT_TARGET_SIZE
    shared_etherbase: Optional[bytes] = None
    status: GroupStatus = GroupStatus.FORMING

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise ValueError("group members must be distinct")
        if len(self.members) > self.target_size:
            raise ValueError("group exceeds its target size")
        if (self.shared_etherbase is None) != (self.status is GroupStatus.FORMING):
            raise ValueError("shared etherbase is set exactly when the group is past formation")

    def activate(self, etherbase: bytes) -> "GroupDescriptor":
        return replace(self, shared_etherbase=etherbase, status=GroupStatus.MINING)


@dataclass(frozen=True)
class DeliveredRange:
    """What a miner is told to search: one contiguous base plus unlabeled extras."""

    base: NonceRange
    extras: tuple[NonceRange, ...] = ()

    def ranges(self) -> tuple[NonceRange, ...]:
        return (self.base,) + self.extras

    def __contains__(self, nonce: int) -> bool:
        return any(nonce in r for r in self.ranges())

    def __len__(self) -> int:
        return sum(len(r) for r in self.ranges())

    def to_payload(self) -> dict:
        return {"base": self.base.as_list(), "extra": [e.as_list() for e in self.extras]}


@dataclass(frozen=True)
class RangeAssignment:
    n_total: int
    per_miner: dict[NodeId, DeliveredRange]
    # (holder, owner) -> segment of owner's base also delivered to holder.
    # Kept by the verifier only; never serialized toward miners.
    overlaps: dict[tuple[NodeId, NodeId], NonceRange] = field(default_factory=dict)

    def delivered(self, node: NodeId) -> DeliveredRange:
        return self.per_miner[node]

    def bases(self) -> dict[NodeId, NonceRange]:
        return {m: d.base for m, d in self.per_miner.items()}

    def overlaps_of(self, node: NodeId) -> dict[tuple[NodeId, NodeId], NonceRange]:
        return {k: v for k, v in self.overlaps.items() if node in k}

    def covered(self) -> list[NonceRange]:
        """Union of delivered ranges as sorted, merged intervals."""
        spans = sorted(r for d in self.per_miner.values() for r in d.ranges())
        merged: list[list[int]] = []
        for r in spans:
            if merged and r.start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], r.end)
            else:
                merged.append([r.start, r.end])
        return [NonceRange(s, e) for s, e in merged]


@dataclass
class PeerSet:
    trusted: set[NodeId] = field(default_factory=set)

    def extend(self, peers) -> None:
        self.trusted.update(peers)


def should_accept(local: HashrateEstimate, remote: HashrateEstimate, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    if tolerance < 1:
        raise ValueError("tolerance is a ratio >= 1")
    a, b = local.nonces_per_second, remote.nonces_per_second
    return max(a, b) / min(a, b) <= tolerance


class FormationPhase(str, enum.Enum):
    SOLO = "solo"  # not looking for a group
    SEEKING = "seeking"  # broadcast our own request, collecting acceptances
    JOINED = "joined"  # accepted someone else's request, awaiting the group
    MINING = "mining"


@dataclass
class FormationState:
    node: NodeId
    hashrate: HashrateEstimate
    tolerance: float = DEFAULT_TOLERANCE
    phase: FormationPhase = FormationPhase.SOLO
    own_request: Optional[CollabRequest] = None
    accepted: Optional[NodeId] = None
    acceptors: list[NodeId] = field(default_factory=list)
    group_full: bool = False


def handle_request(state: FormationState, req: CollabRequest) -> tuple[bool, FormationState]:
    """Decide whether to accept a collaboration request, in delivery order.

    The first compatible request wins. A seeker that has not gathered any
    acceptances yet yields to a request with better ``(sent_at, sender)``
    priority, so concurrent seekers converge on a single initiator.
    """
    if req.sender == state.node or state.group_full:
        return False, state
    if state.phase in (FormationPhase.MINING, FormationPhase.SOLO, FormationPhase.JOINED):
        return False, state
    if not should_accept(state.hashrate, req.hashrate, state.tolerance):
        return False, state
    own = state.own_request
    if own is not None and (state.acceptors or own.priority < req.priority):
        return False, state
    new = replace(state, phase=FormationPhase.JOINED, accepted=req.sender, acceptors=[])
    return True, new


def finalize_group(
    group_id: str,
    members: Sequence[NodeId],
    target_size: int = DEFAULT_TARGET_SIZE,
    peer_sets: Optional[dict[NodeId, PeerSet]] = None,
) -> GroupDescriptor:
    """Close formation: all-pairs trust, descriptor still in FORMING until keys exist."""
    members = tuple(sorted(members))
    if len(members) < 2:
        raise FormationTimeout("a group needs at least two members; reverting to solo")
    if peer_sets is not None:
        for m in members:
            peer_sets.setdefault(m, PeerSet()).extend(x for x in members if x != m)
    return GroupDescriptor(group_id, members, max(target_size, len(members)))


def _partition(start: int, end: int, parts: int) -> list[NonceRange]:
    size, extra = divmod(end - start, parts)
    out, cursor = [], start
    for i in range(parts):
        width = size + (1 if i < extra else 0)
        out.append(NonceRange(cursor, cursor + width))
        cursor += width
    return out


def _carve(owner_base: NonceRange, length: int, align: int) -> NonceRange:
    start = -(-owner_base.start // align) * align
    if start + length > owner_base.end:
        start = owner_base.start
    if start + length > owner_base.end:
        raise OverlapTooSmall("overlap segment does not fit inside the partner's range")
    return NonceRange(start, start + length)


def divide_nonce_range(
    n_total: int,
    members: Sequence[NodeId],
    overlap_fraction: float = DEFAULT_OVERLAP_FRACTION,
    seed: int = 0,
    align: int = 1,
    start: int = 0,
) -> RangeAssignment:
    """Split ``[start, start + n_total)`` equally, then add one hidden overlap per member.

    Member ``i`` receives an extra segment carved from the head of the base
    of member ``(i + k) mod n``; the rotation ``k`` is drawn from ``seed``.
    """
    members = list(members)
    n = len(members)
    if n < 2:
        raise GroupTooSmall("range division needs at least two members")
    if n_total < n:
        raise GroupTooSmall("fewer nonces than members")
    bases = _partition(start, start + n_total, n)
    per_miner = {m: DeliveredRange(b) for m, b in zip(members, bases)}
    overlaps: dict[tuple[NodeId, NodeId], NonceRange] = {}
    if overlap_fraction > 0:
        base_size = n_total // n
        if overlap_fraction * base_size < 1:
            raise OverlapTooSmall("overlap_fraction x base size must cover at least one nonce")
        length = math.ceil(overlap_fraction * base_size)
        shift = random.Random(seed).randrange(1, n)
        for i, holder in enumerate(members):
            owner = members[(i + shift) % n]
            seg = _carve(per_miner[owner].base, length, align)
            overlaps[(holder, owner)] = seg
        for holder in members:
            extras = tuple(seg for (h, _), seg in overlaps.items() if h == holder)
            per_miner[holder] = DeliveredRange(per_miner[holder].base, extras)
    return RangeAssignment(n_total, per_miner, overlaps)


@dataclass
class LeaveResult:
    group: Optional[GroupDescriptor]
    assignment: Optional[RangeAssignment]

    @property
    def dissolved(self) -> bool:
        return self.group is None


def leave_group(
    group: GroupDescriptor,
    assignment: RangeAssignment,
    node: NodeId,
    progress: Optional[int] = None,
    overlap_fraction: float = DEFAULT_OVERLAP_FRACTION,
    seed: int = 0,
) -> LeaveResult:
    """Remove ``node``; its unsearched base tail is split among the survivors.

    ``progress`` is the first base nonce the leaver had not yet searched
    (defaults to the start of its base, i.e. nothing searched).
    """
    if node not in group.members:
        raise NotAMember(f"{node} is not a member of {group.group_id}")
    survivors = [m for m in group.members if m != node]
    if len(survivors) < 2:
        return LeaveResult(None, None)
    leaver_base = assignment.per_miner[node].base
    cut = leaver_base.start if progress is None else max(leaver_base.start, progress)
    tails = (
        _partition(cut, leaver_base.end, len(survivors))
        if leaver_base.end - cut >= len(survivors)
        else []
    )
    if 0 < leaver_base.end - cut < len(survivors):
        tails = [NonceRange(cut, leaver_base.end)] + [None] * (len(survivors) - 1)
    # Re-pair overlaps among survivors inside their own bases.
    kept = {
        (h, o): seg for (h, o), seg in assignment.overlaps.items() if node not in (h, o)
    }
    holders = {h for h, _ in kept}
    orphans = [m for m in survivors if m not in holders]
    if orphans and overlap_fraction > 0:
        shift = random.Random(seed).randrange(1, len(survivors))
        for m in orphans:
            owner = survivors[(survivors.index(m) + shift) % len(survivors)]
            base = assignment.per_miner[owner].base
            length = max(1, math.ceil(overlap_fraction * len(base)))
            if any(seg.overlaps(NonceRange(base.start, base.start + length)) for (h, o), seg in kept.items() if o == owner):
                start = max(seg.end for (h, o), seg in kept.items() if o == owner)
                seg = NonceRange(start, min(base.end, start + length))
            else:
                seg = NonceRange(base.start, min(base.end, base.start + length))
            kept[(m, owner)] = seg
    per_miner = {}
    for m, tail in zip(survivors, tails or [None] * len(survivors)):
        extras = tuple(seg for (h, _), seg in kept.items() if h == m)
        if tail is not None:
            extras = extras + (tail,)
        per_miner[m] = DeliveredRange(assignment.per_miner[m].base, extras)
    new_group = replace(group, members=tuple(survivors))
    return LeaveResult(new_group, RangeAssignment(assignment.n_total, per_miner, kept))
