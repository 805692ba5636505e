"""Contribution verifier and reward manager.

Holds key shares and the private overlap map for every registered group,
cross-checks miners' nonce->digest traces on their overlap segments,
splits the etherbase balance by verified coverage and signs withdrawals.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .chain import BlockHeader, Ledger, Transaction, hash_header
from .errors import (
    DuplicateGroup,
    EmptyHonestSet,
    ExceedsShare,
    HeightMismatch,
    InsufficientShares,
    MissingShares,
    NotEligible,
    UnknownGroup,
)
from .group import GroupDescriptor, RangeAssignment
from .mining import NonceRange, ProofTrace
from .threshold import (
    GroupKeyPair,
    SecretShare,
    SignedWithdrawal,
    derive_etherbase,
    reconstruct,
    sign_withdrawal,
)

NodeId = str
DEFAULT_AUDIT_RATE = 0.05  # fraction of agreeing overlap nonces recomputed anyway


@dataclass
class GroupRecord:
    descriptor: GroupDescriptor
    public: GroupKeyPair
    shares: dict[NodeId, SecretShare]
    registered_at: int = 0
    assignment: Optional[RangeAssignment] = None

    @property
    def group_id(self) -> str:
        return self.descriptor.group_id

    @property
    def etherbase(self) -> bytes:
        return derive_etherbase(self.public)

    @property
    def overlaps(self) -> dict[tuple[NodeId, NodeId], NonceRange]:
        return dict(self.assignment.overlaps) if self.assignment else {}


@dataclass
class ContributionProof:
    miner: NodeId
    trace: ProofTrace
    block_height: int


@dataclass
class VerificationVerdict:
    honest: frozenset = frozenset()
    dishonest: frozenset = frozenset()
    unverifiable: frozenset = frozenset()
    evidence: dict[NodeId, list[tuple[int, bytes, bytes]]] = field(default_factory=dict)
    recomputed: int = 0


@dataclass(frozen=True)
class OracleReport:
    etherbase: bytes
    balance: int
    at: int
    outflow: int = 0  # cumulative debits observed on the etherbase


@dataclass
class RewardEntry:
    miner: NodeId
    amount: int
    withdrawn_amount: int = 0

    @property
    def withdrawn(self) -> bool:
        return self.withdrawn_amount >= self.amount

    @property
    def available(self) -> int:
        return self.amount - self.withdrawn_amount


class AuditLog:
    """Append-only JSON-lines log: ``{tick, event, group_id, miner, details}``."""

    def __init__(self, path: Optional[str | Path] = None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("")

    def record(self, tick: int, event: str, group_id: Optional[str] = None, miner: Optional[str] = None, **details) -> None:
        rec = {"tick": tick, "event": event, "group_id": group_id, "miner": miner, "details": details}
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def events(self, name: str) -> list[dict]:
        return [r for r in self.records if r["event"] == name]


def register_group(
    registry: dict[str, GroupRecord],
    descriptor: GroupDescriptor,
    public: GroupKeyPair,
    shares: dict[NodeId, SecretShare],
    at: int = 0,
) -> GroupRecord:
    if descriptor.group_id in registry:
        raise DuplicateGroup(descriptor.group_id)
    missing = set(descriptor.members) - set(shares)
    if missing or len(shares) != len(descriptor.members):
        raise MissingShares(f"no share for {sorted(missing)}" if missing else "share/member mismatch")
    if not 2 <= public.threshold <= public.share_count or public.share_count != len(shares):
        raise MissingShares("threshold parameters do not match the registered shares")
    record = GroupRecord(descriptor, public, dict(shares), at)
    registry[descriptor.group_id] = record
    return record


def oracle_poll(ledger: Ledger, records: Iterable[GroupRecord], at: int) -> list[OracleReport]:
    return [
        OracleReport(r.etherbase, ledger.balance(r.etherbase), at, ledger.outflow.get(r.etherbase, 0))
        for r in records
    ]


def verify_contributions(
    record: GroupRecord,
    proofs: Sequence[ContributionProof],
    header: BlockHeader,
    height: Optional[int] = None,
    audit_rate: float = 0.0,
    rng: Optional[random.Random] = None,
) -> VerificationVerdict:
    """Cross-check overlap digests between partners; recompute only on disagreement.

    A side whose digest differs from the recomputed one is dishonest. A
    side with no entries inside an overlap it shares is unverifiable. When
    the partner never submitted, the present side's overlap entries are
    recomputed directly. ``audit_rate`` additionally recomputes a random
    fraction of agreeing overlap nonces, which catches colluding pairs.
    """
    if record is None:
        raise UnknownGroup("no such group")
    heights = {p.block_height for p in proofs}
    if len(heights) > 1 or (height is not None and heights and heights != {height}):
        raise HeightMismatch(f"proofs span heights {sorted(heights)}")
    rng = rng or random.Random(0)
    by_miner = {p.miner: p for p in proofs}
    members = set(record.descriptor.members)
    assignment = record.assignment
    dishonest: set[NodeId] = set()
    unverifiable: set[NodeId] = set(m for m in by_miner if m not in members)
    evidence: dict[NodeId, list[tuple[int, bytes, bytes]]] = {}
    checked: dict[NodeId, int] = {m: 0 for m in by_miner}
    cache: dict[int, bytes] = {}

    def truth(x: int) -> bytes:
        if x not in cache:
            cache[x] = hash_header(header, x)
        return cache[x]

    def blame(miner: NodeId, x: int, submitted: bytes) -> None:
        dishonest.add(miner)
        evidence.setdefault(miner, []).append((x, submitted, truth(x)))

    if assignment is not None:
        for m, p in by_miner.items():
            if m in members and tuple(p.trace.claimed) != assignment.per_miner[m].ranges():
                unverifiable.add(m)

    for (holder, owner), seg in sorted((assignment.overlaps if assignment else {}).items()):
        present = [m for m in (holder, owner) if m in by_miner]
        in_seg = {
            m: {x: d for x, d in by_miner[m].trace.entries.items() if x in seg} for m in present
        }
        common = (
            sorted(set(in_seg[holder]) & set(in_seg[owner])) if len(present) == 2 else []
        )
        if not common:
            # No cross-check possible: recompute whatever was submitted.
            for m in present:
                if not in_seg[m]:
                    unverifiable.add(m)
                    continue
                for x, d in sorted(in_seg[m].items()):
                    if d != truth(x):
                        blame(m, x, d)
                checked[m] += 1
            continue
        a, b = in_seg[holder], in_seg[owner]
        for x in common:
            if a[x] != b[x] or (audit_rate > 0 and rng.random() < audit_rate):
                for m, d in ((holder, a[x]), (owner, b[x])):
                    if d != truth(x):
                        blame(m, x, d)
        checked[holder] += 1
        checked[owner] += 1

    for m in by_miner:
        if checked.get(m, 0) == 0:
            unverifiable.add(m)
    unverifiable -= dishonest
    honest = set(by_miner) - dishonest - unverifiable
    return VerificationVerdict(
        frozenset(honest), frozenset(dishonest), frozenset(unverifiable), evidence, len(cache)
    )


def _coverage(proof: ContributionProof) -> int:
    return sum(1 for x in proof.trace.entries if proof.trace.covers(x))


def compute_rewards(
    verdict: VerificationVerdict,
    report: OracleReport,
    proofs: Sequence[ContributionProof],
    reserved: int = 0,
) -> list[RewardEntry]:
    """Split the unreserved etherbase balance over honest miners by verified coverage.

    Amounts are floored; the leftover units go to the lowest honest node id.
    Dishonest and unverifiable submitters receive zero.
    """
    if not verdict.honest:
        raise EmptyHonestSet("every proof failed verification; pool is frozen")
    pool = max(0, report.balance - reserved)
    honest = sorted(verdict.honest)
    cover = {p.miner: _coverage(p) for p in proofs if p.miner in verdict.honest}
    for m in honest:
        cover.setdefault(m, 0)
    total = sum(cover.values())
    if total == 0:
        cover = {m: 1 for m in honest}
        total = len(honest)
    amounts = {m: pool * cover[m] // total for m in honest}
    amounts[honest[0]] += pool - sum(amounts.values())
    submitters = sorted({p.miner for p in proofs} | set(honest))
    return [RewardEntry(m, amounts.get(m, 0)) for m in submitters]


class CVRM:
    """Stateful service wrapper: registry, settlement bookkeeping and signing."""

    def __init__(self, rng: Optional[random.Random] = None, audit: Optional[AuditLog] = None, audit_rate: float = DEFAULT_AUDIT_RATE):
        self.rng = rng or random.Random(0)
        self.audit = audit or AuditLog()
        self.audit_rate = audit_rate
        self.records: dict[str, GroupRecord] = {}
        self.entitlements: dict[tuple[str, NodeId], RewardEntry] = {}
        self.latest_verdict: dict[str, VerificationVerdict] = {}
        self.allocated: dict[str, int] = {}
        self.frozen: dict[str, int] = {}
        self.withdrawal_seq: dict[str, int] = {}

    def record(self, group_id: str) -> GroupRecord:
        try:
            return self.records[group_id]
        except KeyError:
            raise UnknownGroup(group_id) from None

    def register_group(self, descriptor, public, shares, at: int = 0, assignment=None) -> GroupRecord:
        rec = register_group(self.records, descriptor, public, shares, at)
        rec.assignment = assignment
        self.audit.record(at, "register", descriptor.group_id, None,
                          members=list(descriptor.members), threshold=public.threshold)
        return rec

    def assign(self, group_id: str, assignment: RangeAssignment, at: int = 0) -> None:
        self.record(group_id).assignment = assignment
        self.audit.record(at, "assign_ranges", group_id, None, n_total=assignment.n_total,
                          members=sorted(assignment.per_miner))

    def reserved(self, group_id: str, report: OracleReport) -> int:
        return self.allocated.get(group_id, 0) - report.outflow + self.frozen.get(group_id, 0)

    def settle(self, group_id: str, proofs: Sequence[ContributionProof], header: BlockHeader,
               ledger: Ledger, height: int, at: int = 0) -> tuple[VerificationVerdict, list[RewardEntry]]:
        rec = self.record(group_id)
        verdict = verify_contributions(rec, proofs, header, height, self.audit_rate, self.rng)
        self.latest_verdict[group_id] = verdict
        (report,) = oracle_poll(ledger, [rec], at)
        reserved = self.reserved(group_id, report)
        self.audit.record(at, "verdict", group_id, None, height=height,
                          honest=sorted(verdict.honest), dishonest=sorted(verdict.dishonest),
                          unverifiable=sorted(verdict.unverifiable), recomputed=verdict.recomputed)
        for m, ev in sorted(verdict.evidence.items()):
            self.audit.record(at, "evidence", group_id, m,
                              items=[[x, s.hex(), t.hex()] for x, s, t in ev])
        try:
            entries = compute_rewards(verdict, report, proofs, reserved)
        except EmptyHonestSet:
            self.frozen[group_id] = self.frozen.get(group_id, 0) + max(0, report.balance - reserved)
            self.audit.record(at, "pool_frozen", group_id, None, height=height)
            return verdict, []
        for e in entries:
            key = (group_id, e.miner)
            cur = self.entitlements.setdefault(key, RewardEntry(e.miner, 0))
            cur.amount += e.amount
            self.allocated[group_id] = self.allocated.get(group_id, 0) + e.amount
            self.audit.record(at, "reward", group_id, e.miner, height=height, amount=e.amount)
        return verdict, entries

    def next_withdrawal_seq(self, group_id: str) -> int:
        seq = self.withdrawal_seq.get(group_id, 0)
        self.withdrawal_seq[group_id] = seq + 1
        return seq

    def authorize_withdrawal(self, group_id: str, miner: NodeId, tx: Transaction, at: int = 0) -> SignedWithdrawal:
        rec = self.record(group_id)
        verdict = self.latest_verdict.get(group_id)
        if verdict is None or miner not in verdict.honest:
            self.audit.record(at, "withdrawal_denied", group_id, miner, reason="not_eligible")
            raise NotEligible(f"{miner} is not in the latest honest set")
        if tx.sender != rec.etherbase:
            raise NotEligible("withdrawals must spend from the group etherbase")
        entry = self.entitlements.get((group_id, miner))
        if entry is None or tx.amount > entry.available:
            self.audit.record(at, "withdrawal_denied", group_id, miner, reason="exceeds_share")
            raise ExceedsShare(f"{miner} requested {tx.amount}, entitled to "
                               f"{entry.available if entry else 0}")
        shares = [rec.shares[m] for m in sorted(rec.shares)]
        if len(shares) < rec.public.threshold:
            raise InsufficientShares("not enough stored shares to reconstruct the group key")
        k = reconstruct(shares, rec.public.threshold)
        sig = sign_withdrawal(k, tx, self.rng)
        del k
        entry.withdrawn_amount += tx.amount
        self.audit.record(at, "withdrawal_signed", group_id, miner, amount=tx.amount,
                          seq=tx.seq, eligible=True)
        return sig
