"""Simulated participants: miners, the chain endpoint and the verifier service."""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from ..chain import NONCE_MAX, Block, BlockHeader, Ledger, Transaction, address_from, tx_root
from ..coordination import (
    ClockSample,
    MutexState,
    RicartAgrawala,
    SharedTxPool,
    berkeley_sync,
    group_timestamp,
    pool_insert,
)
from ..cvrm import CVRM, AuditLog, ContributionProof
from ..errors import CPoWError, ExceedsShare, FormationTimeout, NotEligible
from ..group import (
    CollabRequest,
    DeliveredRange,
    FormationPhase,
    FormationState,
    GroupDescriptor,
    PeerSet,
    RangeAssignment,
    divide_nonce_range,
    finalize_group,
    handle_request,
    leave_group,
    should_accept,
)
from ..mining import TICKS_PER_SECOND, NonceRange, NonceScanner, ProofTrace, ScanPlan, calibrate_hashrate
from ..threshold import default_threshold, derive_etherbase, dkg
from .config import NodeConfig, ScenarioConfig
from .kernel import Process, SimEvent, Simulator
from .messages import (
    CollabAccept,
    CollabDecline,
    CollabRedirect,
    CollabRequestMsg,
    Dissolved,
    FormationDeadline,
    FormGroup,
    GroupReady,
    JoinDeadline,
    LeaveNotice,
    LeaveTimer,
    MineTick,
    MutexRelease,
    MutexReplyMsg,
    MutexRequestMsg,
    NewBlock,
    PoolInsert,
    ProofSubmission,
    Reassign,
    RewardNotice,
    SeekTimer,
    SettleDeadline,
    Start,
    SubmitBlock,
    SubmitWithdrawal,
    SyncSample,
    TxTick,
    WithdrawDenied,
    WithdrawRequest,
    WithdrawSigned,
)

CHAIN_ID = "chain"
CVRM_ID = "cvrm"
FULL_RANGE = NonceRange(0, NONCE_MAX + 1)


class _Dispatch(Process):
    def handle(self, sim: Simulator, event: SimEvent) -> None:
        handler = getattr(self, "on_" + type(event.payload).__name__, None)
        if handler is None:
            raise CPoWError(f"{self.id} cannot handle {type(event.payload).__name__}")
        handler(sim, event.src, event.payload)


# -- chain endpoint -------------------------------------------------------------


@dataclass
class BlockRecord:
    height: int
    miner: str
    beneficiary: bytes
    at: int


class ChainService(_Dispatch):
    """Single authoritative ledger; first valid block at each height wins."""

    def __init__(self, scenario: ScenarioConfig, ledger: Ledger, recipients: list[str]):
        self.id = CHAIN_ID
        self.scenario = scenario
        self.ledger = ledger
        self.recipients = recipients
        self.blocks: list[BlockRecord] = []
        self.stale = 0
        self.rejected: list[tuple[int, str, str]] = []
        self._withdrawals: dict[bytes, dict[int, SubmitWithdrawal]] = {}
        self._expected: dict[bytes, int] = {}

    @property
    def done(self) -> bool:
        return self.ledger.height >= self.scenario.blocks_target

    def on_SubmitBlock(self, sim, src, msg: SubmitBlock):
        if self.done:
            self.stale += 1
            return
        try:
            self.ledger.apply_block(msg.block, self.scenario.block_reward)
        except CPoWError as exc:
            self.stale += 1
            self.rejected.append((sim.now, msg.miner, type(exc).__name__))
            return
        self.blocks.append(BlockRecord(self.ledger.height, msg.miner, msg.block.header.beneficiary, sim.now))
        note = NewBlock(msg.block, self.ledger.height, final=self.done)
        for dst in self.recipients:
            sim.send(self.id, dst, note)

    def on_SubmitWithdrawal(self, sim, src, msg: SubmitWithdrawal):
        # Signed withdrawals may overtake each other in flight; apply in seq order.
        sender = msg.tx.sender
        queue = self._withdrawals.setdefault(sender, {})
        queue[msg.tx.seq] = msg
        while self._expected.get(sender, 0) in queue:
            item = queue.pop(self._expected.get(sender, 0))
            self._expected[sender] = item.tx.seq + 1
            try:
                self.ledger.apply_withdrawal(item.tx, item.signature, item.public)
            except CPoWError as exc:
                self.rejected.append((sim.now, src, type(exc).__name__))


# -- verifier service -------------------------------------------------------------


class CVRMService(_Dispatch):
    """Network face of :class:`~cpow.cvrm.CVRM`: forms groups, settles blocks, signs withdrawals."""

    def __init__(self, scenario: ScenarioConfig, seed: int, ledger: Ledger, audit: AuditLog):
        self.id = CVRM_ID
        self.scenario = scenario
        self.ledger = ledger  # read through the oracle only
        self.keys_rng = random.Random(f"cvrm-keys:{seed}")
        self.cvrm = CVRM(rng=random.Random(f"cvrm:{seed}"), audit=audit, audit_rate=scenario.audit_rate)
        self.versions: dict[str, dict[int, tuple[GroupDescriptor, RangeAssignment]]] = {}
        self.current: dict[str, int] = {}
        self.dissolved: set[str] = set()
        self.by_etherbase: dict[bytes, str] = {}
        self.headers: dict[tuple[str, int], BlockHeader] = {}
        self.proofs: dict[tuple[str, int], dict[str, tuple[int, ContributionProof]]] = {}
        self.settled: set[tuple[str, int]] = set()
        self._counter = 0

    @property
    def audit(self) -> AuditLog:
        return self.cvrm.audit

    def active_members(self) -> dict[str, tuple[str, ...]]:
        return {
            gid: rec.descriptor.members
            for gid, rec in self.cvrm.records.items()
            if gid not in self.dissolved
        }

    def on_FormGroup(self, sim, src, msg: FormGroup):
        gid = f"group-{self._counter}"
        self._counter += 1
        try:
            descriptor = finalize_group(gid, msg.members, self.scenario.group_target_size)
        except FormationTimeout:
            return
        n = len(descriptor.members)
        t = min(n, self.scenario.threshold or default_threshold(n))
        public, shares = dkg(n, t, self.keys_rng)
        share_map = dict(zip(descriptor.members, shares))
        descriptor = descriptor.activate(derive_etherbase(public))
        assignment = divide_nonce_range(
            self.scenario.n_total, descriptor.members, self.scenario.overlap_fraction,
            seed=self.keys_rng.getrandbits(32),
        )
        self.cvrm.register_group(descriptor, public, share_map, at=sim.now)
        self.cvrm.assign(gid, assignment, at=sim.now)
        self.versions[gid] = {0: (descriptor, assignment)}
        self.current[gid] = 0
        self.by_etherbase[descriptor.shared_etherbase] = gid
        for m in descriptor.members:
            sim.send(self.id, m, GroupReady(
                gid, descriptor.members, descriptor.shared_etherbase, public,
                share_map[m], assignment.delivered(m), 0,
            ))

    def on_LeaveNotice(self, sim, src, msg: LeaveNotice):
        gid = msg.group_id
        if gid in self.dissolved:
            return
        rec = self.cvrm.record(gid)
        result = leave_group(
            rec.descriptor, rec.assignment, msg.node,
            overlap_fraction=self.scenario.overlap_fraction, seed=self.keys_rng.getrandbits(32),
        )
        self.audit.record(sim.now, "leave", gid, msg.node, dissolved=result.dissolved)
        survivors = [m for m in rec.descriptor.members if m != msg.node]
        if result.dissolved:
            self.dissolved.add(gid)
            for m in survivors:
                sim.send(self.id, m, Dissolved(gid))
            return
        version = self.current[gid] + 1
        self.current[gid] = version
        self.versions[gid][version] = (result.group, result.assignment)
        rec.descriptor = result.group
        self.cvrm.assign(gid, result.assignment, at=sim.now)
        for m in result.group.members:
            sim.send(self.id, m, Reassign(gid, version, result.group.members, result.assignment.delivered(m)))

    # settlement

    def on_NewBlock(self, sim, src, msg: NewBlock):
        gid = self.by_etherbase.get(msg.block.header.beneficiary)
        if gid is None:
            return
        key = (gid, msg.height)
        self.headers[key] = msg.block.header
        sim.schedule(self.id, self.scenario.settle_timeout, SettleDeadline(gid, msg.height))
        self._try_settle(sim, key)

    def on_ProofSubmission(self, sim, src, msg: ProofSubmission):
        key = (msg.group_id, msg.proof.block_height)
        if key in self.settled:
            self.audit.record(sim.now, "late_proof", msg.group_id, msg.proof.miner,
                              height=msg.proof.block_height)
            return
        self.proofs.setdefault(key, {})[msg.proof.miner] = (msg.version, msg.proof)
        self._try_settle(sim, key)

    def on_SettleDeadline(self, sim, src, msg: SettleDeadline):
        self._try_settle(sim, (msg.group_id, msg.height), force=True)

    def _try_settle(self, sim, key, force: bool = False):
        if key in self.settled or key not in self.headers:
            return
        gid, height = key
        got = self.proofs.get(key, {})
        version = max((v for v, _ in got.values()), default=self.current[gid])
        descriptor, assignment = self.versions[gid][version]
        if not force and not set(descriptor.members) <= set(got):
            return
        self.settled.add(key)
        rec = self.cvrm.record(gid)
        live = (rec.descriptor, rec.assignment)
        rec.descriptor, rec.assignment = descriptor, assignment
        try:
            proofs = [got[m][1] for m in sorted(got)]
            verdict, entries = self.cvrm.settle(gid, proofs, self.headers[key], self.ledger, height, at=sim.now)
        finally:
            rec.descriptor, rec.assignment = live
        for e in entries:
            sim.send(self.id, e.miner, RewardNotice(gid, height, e.amount))
        for m in sorted(verdict.dishonest | verdict.unverifiable):
            if all(e.miner != m for e in entries):
                sim.send(self.id, m, RewardNotice(gid, height, 0))

    def on_WithdrawRequest(self, sim, src, msg: WithdrawRequest):
        gid = msg.group_id
        rec = self.cvrm.record(gid)
        seq = self.cvrm.withdrawal_seq.get(gid, 0)
        try:
            tx = Transaction(rec.etherbase, msg.to, msg.amount, seq)
            sig = self.cvrm.authorize_withdrawal(gid, msg.miner, tx, at=sim.now)
        except (NotEligible, ExceedsShare) as exc:
            sim.send(self.id, src, WithdrawDenied(gid, type(exc).__name__))
            return
        self.cvrm.next_withdrawal_seq(gid)
        sim.send(self.id, src, WithdrawSigned(gid, tx, sig, rec.public))


# -- miners -----------------------------------------------------------------------


@dataclass
class NodeStats:
    nonces: int = 0  # hashes actually completed in virtual time
    mining_events: int = 0
    blocks_submitted: int = 0
    # (group_id or None, height, round, started_at, exhausted_at)
    exhaustions: list[tuple] = field(default_factory=list)
    denied: list[str] = field(default_factory=list)
    formation_timeouts: int = 0


@dataclass
class GroupView:
    group_id: str
    members: tuple[str, ...]
    etherbase: bytes
    delivered: DeliveredRange
    version: int
    mutex: RicartAgrawala
    pool: SharedTxPool = field(default_factory=SharedTxPool)
    samples: dict[tuple[int, int], dict[str, SyncSample]] = field(default_factory=dict)
    round: int = 0


class MinerNode(_Dispatch):
    def __init__(self, cfg: NodeConfig, scenario: ScenarioConfig, seed: int, miners: list[str], genesis: Block):
        self.id = cfg.id
        self.cfg = cfg
        self.scenario = scenario
        self.rng = random.Random(f"node:{seed}:{cfg.id}")
        self.cost = cfg.nonce_delay + scenario.base_hash_cost
        self.hashrate = calibrate_hashrate(cfg.nonce_delay, TICKS_PER_SECOND, scenario.base_hash_cost)
        self.wallet = address_from(f"wallet:{cfg.id}")
        self.peers = [m for m in miners if m != cfg.id]
        # chain view
        self.tip = genesis
        self.height = 0
        self.final = False
        self.included: set[bytes] = set()
        self.chain_seq: dict[bytes, int] = {}
        # own transactions
        self.tx_seq = 0
        self.pending: list[Transaction] = []
        # formation and group
        self.formation = FormationState(cfg.id, self.hashrate, scenario.tolerance)
        self.peer_set = PeerSet()
        self.group: Optional[GroupView] = None
        self.share = None
        self.leave_pending = False
        self.past_groups: list[str] = []
        # mining
        self.scanner: Optional[NonceScanner] = None
        self.txs: tuple[Transaction, ...] = ()
        self.epoch = 0
        self.slice_start = 0
        self.slice_len = 0
        self.scan_key: Optional[tuple] = None
        self.scan_started = 0
        self.scan_version = 0
        self.stats = NodeStats()
        self.headers: dict[tuple[str, int, int], bytes] = {}
        self.syncs: list[tuple[str, int, int, object, tuple]] = []

    # -- helpers ---------------------------------------------------------------

    def local_clock(self, sim) -> int:
        return max(0, sim.now + self.cfg.clock_skew)

    def _send_all(self, sim, dsts, msg):
        for d in dsts:
            if d != self.id:
                sim.send(self.id, d, msg)

    def _select_txs(self, candidates) -> tuple[Transaction, ...]:
        out: list[Transaction] = []
        last = dict(self.chain_seq)
        for tx in candidates:
            if len(out) >= self.scenario.max_block_txs:
                break
            if tx.digest() in self.included or tx.seq != last.get(tx.sender, -1) + 1:
                continue
            out.append(tx)
            last[tx.sender] = tx.seq
        return tuple(out)

    # -- lifecycle ---------------------------------------------------------------

    def on_Start(self, sim, src, msg):
        sim.schedule(self.id, self.rng.randint(1, self.scenario.tx_interval), TxTick())
        if self.cfg.leave_at is not None:
            sim.schedule(self.id, self.cfg.leave_at, LeaveTimer())
        if self.cfg.initial_role == "seeking":
            self.formation.phase = FormationPhase.SEEKING
            sim.schedule(self.id, self.rng.randint(0, self.scenario.formation_jitter), SeekTimer())
        else:
            self.start_solo(sim)

    def on_TxTick(self, sim, src, msg):
        if self.final:
            return
        payload = hashlib.sha256(f"{self.id}:{self.tx_seq}".encode()).digest()
        self.pending.append(Transaction(self.wallet, self.wallet, 0, self.tx_seq, payload))
        self.tx_seq += 1
        if self.group is not None:
            self.request_cs(sim)
        sim.schedule(self.id, self.scenario.tx_interval, TxTick())

    # -- mining ------------------------------------------------------------------

    def interrupt(self, sim) -> None:
        """Stop the current slice at the present tick, discarding un-hashed lookahead."""
        if self.scanner is not None and self.slice_len:
            keep = min(self.slice_len, (sim.now - self.slice_start) // self.cost)
            self.scanner.rewind(keep)
            self.stats.nonces += keep
        self.slice_len = 0
        self.epoch += 1

    def start_scan(self, sim, header, plan, txs, key, record, dense=()):
        self.interrupt(sim)
        self.scanner = NonceScanner(header, plan, self.scenario.difficulty,
                                    self.scenario.sample_stride, dense, record)
        self.txs = txs
        self.scan_key = key
        self.scan_started = sim.now
        self.next_slice(sim)

    def next_slice(self, sim) -> None:
        if self.final or self.scanner is None:
            return
        count = self.scanner.advance(self.scenario.slice_size)
        if count == 0:
            self.on_exhausted(sim)
            return
        self.slice_start = sim.now
        self.slice_len = count
        sim.schedule(self.id, count * self.cost, MineTick(self.epoch))

    def on_MineTick(self, sim, src, msg: MineTick):
        if msg.epoch != self.epoch:
            return
        self.stats.mining_events += 1
        self.stats.nonces += self.slice_len
        self.slice_len = 0
        if self.scanner.found is not None:
            nonce, _ = self.scanner.found
            block = Block(self.scanner.header.with_nonce(nonce), self.txs)
            self.stats.blocks_submitted += 1
            sim.send(self.id, CHAIN_ID, SubmitBlock(block, self.id))
            return
        self.next_slice(sim)

    def on_exhausted(self, sim) -> None:
        gid = self.group.group_id if self.group else None
        _, height, rnd = self.scan_key
        self.stats.exhaustions.append((gid, height, rnd, self.scan_started, sim.now))
        if self.group is None:
            self.start_solo(sim)
            return
        # every member re-synchronizes on a fresh timestamp once all have run dry
        self.group.round = rnd + 1
        self.send_sample(sim)

    def start_solo(self, sim) -> None:
        if self.final:
            return
        ts = max(self.local_clock(sim), self.tip.header.timestamp)
        rnd = 0
        if self.scan_key and self.scan_key[0] is None and self.scan_key[1] == self.height + 1:
            rnd = self.scan_key[2] + 1
            ts = max(ts, self.scanner.header.timestamp + 1)
        txs = self._select_txs(self.pending)
        header = BlockHeader(self.tip.digest, tx_root(txs), ts, self.wallet, self.scenario.difficulty)
        self.start_scan(sim, header, ScanPlan(FULL_RANGE), txs, (None, self.height + 1, rnd), record=False)

    def on_NewBlock(self, sim, src, msg: NewBlock):
        if msg.height <= self.height:
            return
        self.interrupt(sim)
        g = self.group
        if g is not None and msg.block.header.beneficiary == g.etherbase:
            self.submit_proof(sim, msg)
        self.tip = msg.block
        self.height = msg.height
        for tx in msg.block.txs:
            self.included.add(tx.digest())
            self.chain_seq[tx.sender] = tx.seq
        self.pending = [tx for tx in self.pending if tx.digest() not in self.included]
        self.final = msg.final
        self.scanner = None
        self.scan_key = None
        if self.final:
            return
        if g is not None and self.leave_pending:
            self.leave(sim)
            return
        if g is not None:
            g.round = 0
            self.send_sample(sim)
        else:
            self.start_solo(sim)

    # -- contribution proofs ---------------------------------------------------------

    def submit_proof(self, sim, msg: NewBlock) -> None:
        g = self.group
        same_height = (
            self.scanner is not None
            and self.scan_key[0] == g.group_id
            and self.scanner.header.parent == msg.block.header.parent
        )
        if same_height:
            trace, version = self.scanner.trace(), self.scan_version
        else:
            trace, version = ProofTrace({}, g.delivered.ranges()), g.version
        if self.cfg.fabricate:
            trace = self.fabricate(trace, g.delivered)
        proof = ContributionProof(self.id, trace, msg.height)
        sim.send(self.id, CVRM_ID, ProofSubmission(g.group_id, version, proof))

    def fabricate(self, trace: ProofTrace, delivered: DeliveredRange) -> ProofTrace:
        """Forge digests inside the extra segments, where a partner is known to overlap."""
        entries = dict(trace.entries)
        targets = [x for x in entries if any(x in e for e in delivered.extras)]
        if not targets:
            targets = [e.start + k for e in delivered.extras for k in range(min(len(e), self.cfg.fabricate))]
        for x in targets[: self.cfg.fabricate]:
            entries[x] = self.rng.getrandbits(256).to_bytes(32, "big")
        return ProofTrace(entries, trace.claimed)

    # -- formation ---------------------------------------------------------------

    def on_SeekTimer(self, sim, src, msg):
        f = self.formation
        if f.phase is not FormationPhase.SEEKING or f.own_request is not None:
            return
        f.own_request = CollabRequest(self.id, self.hashrate, sim.now)
        self._send_all(sim, self.peers, CollabRequestMsg(f.own_request))
        sim.schedule(self.id, self.scenario.formation_timeout, FormationDeadline())

    def on_CollabRequestMsg(self, sim, src, msg: CollabRequestMsg):
        accepted, state = handle_request(self.formation, msg.request)
        if not accepted:
            return
        self.formation = state
        sim.send(self.id, msg.request.sender, CollabAccept(self.id, self.hashrate))
        sim.schedule(self.id, 2 * self.scenario.formation_timeout, JoinDeadline(msg.request.sender))

    def on_CollabAccept(self, sim, src, msg: CollabAccept):
        f = self.formation
        if f.phase is FormationPhase.JOINED and f.accepted is not None:
            sim.send(self.id, src, CollabRedirect(f.accepted))
            return
        if (
            f.phase is FormationPhase.SEEKING
            and f.own_request is not None
            and not f.group_full
            and should_accept(self.hashrate, msg.hashrate, f.tolerance)
        ):
            f.acceptors.append(src)
            if len(f.acceptors) + 1 >= self.scenario.group_target_size:
                self.finalize(sim)
            return
        sim.send(self.id, src, CollabDecline(self.id))

    def on_CollabRedirect(self, sim, src, msg: CollabRedirect):
        f = self.formation
        if f.phase is FormationPhase.JOINED and f.accepted == src and msg.target != self.id:
            f.accepted = msg.target
            sim.send(self.id, msg.target, CollabAccept(self.id, self.hashrate))

    def on_CollabDecline(self, sim, src, msg: CollabDecline):
        f = self.formation
        if f.phase is FormationPhase.JOINED and f.accepted == src:
            self.revert_to_solo(sim)

    def on_FormationDeadline(self, sim, src, msg):
        f = self.formation
        if f.phase is not FormationPhase.SEEKING or f.group_full:
            return
        if f.acceptors:
            self.finalize(sim)
        else:
            self.stats.formation_timeouts += 1
            self.revert_to_solo(sim)

    def on_JoinDeadline(self, sim, src, msg: JoinDeadline):
        f = self.formation
        if f.phase is FormationPhase.JOINED and self.group is None:
            self.stats.formation_timeouts += 1
            self.revert_to_solo(sim)

    def finalize(self, sim) -> None:
        f = self.formation
        f.group_full = True
        sim.send(self.id, CVRM_ID, FormGroup(tuple([self.id] + f.acceptors)))

    def revert_to_solo(self, sim) -> None:
        self.formation.phase = FormationPhase.SOLO
        if self.scanner is None and self.group is None:
            self.start_solo(sim)

    def on_GroupReady(self, sim, src, msg: GroupReady):
        if self.group is not None:
            return
        self.formation.phase = FormationPhase.MINING
        self.peer_set.extend(m for m in msg.members if m != self.id)
        self.share = msg.share
        self.group = GroupView(
            msg.group_id, msg.members, msg.etherbase, msg.delivered, msg.version,
            RicartAgrawala(self.id, msg.members),
        )
        self.interrupt(sim)
        self.scanner = None
        self.scan_key = None
        if self.final:
            return
        self.send_sample(sim)
        self.request_cs(sim)

    # -- leaving -------------------------------------------------------------------

    def on_LeaveTimer(self, sim, src, msg):
        if self.group is not None:
            self.leave_pending = True

    def leave(self, sim) -> None:
        g = self.group
        for dst, reply in g.mutex.release():
            sim.send(self.id, dst, MutexReplyMsg(g.group_id, reply.sender))
        sample = SyncSample(g.group_id, self.height + 1, 0, ClockSample(self.id, self.local_clock(sim)),
                            len(g.pool), leaving=True)
        self._send_all(sim, g.members, sample)
        sim.send(self.id, CVRM_ID, LeaveNotice(g.group_id, self.id))
        self.past_groups.append(g.group_id)
        self.group = None
        self.leave_pending = False
        self.formation.phase = FormationPhase.SOLO
        self.start_solo(sim)

    def on_Reassign(self, sim, src, msg: Reassign):
        g = self.group
        if g is None or g.group_id != msg.group_id or msg.version <= g.version:
            return
        gone = set(g.members) - set(msg.members)
        g.members, g.delivered, g.version = msg.members, msg.delivered, msg.version
        m = g.mutex
        m.peers = frozenset(p for p in msg.members if p != self.id)
        m.pending_replies -= gone
        m.deferred -= gone
        if m.state is MutexState.WANTED and not m.pending_replies:
            m.state = MutexState.HELD
            self.enter_cs(sim)
        self.check_sync(sim)

    def on_Dissolved(self, sim, src, msg: Dissolved):
        g = self.group
        if g is None or g.group_id != msg.group_id:
            return
        self.interrupt(sim)
        self.past_groups.append(g.group_id)
        self.group = None
        self.scanner = None
        self.scan_key = None
        self.formation.phase = FormationPhase.SOLO
        self.start_solo(sim)

    # -- clock agreement and group headers ----------------------------------------------

    def send_sample(self, sim) -> None:
        g = self.group
        s = SyncSample(g.group_id, self.height + 1, g.round, ClockSample(self.id, self.local_clock(sim)), len(g.pool))
        g.samples.setdefault((s.height, s.round), {})[self.id] = s
        self._send_all(sim, g.members, s)
        self.check_sync(sim)

    def on_SyncSample(self, sim, src, msg: SyncSample):
        g = self.group
        if g is None or g.group_id != msg.group_id or msg.height <= self.height:
            return
        g.samples.setdefault((msg.height, msg.round), {})[msg.sample.node] = msg
        self.check_sync(sim)

    def check_sync(self, sim) -> None:
        g = self.group
        if g is None or self.final:
            return
        key = (self.height + 1, g.round)
        if self.scan_key == (g.group_id,) + key or self.id not in g.samples.get(key, {}):
            return
        got = g.samples.get(key, {})
        if any(m not in got for m in g.members):
            return
        relevant = [got[m] for m in g.members]
        if any(s.leaving for s in relevant):
            return  # wait for the verifier's reassignment
        height, rnd = key
        sync = berkeley_sync([s.sample for s in relevant], self.scenario.outlier_bound, height=height)
        ts = group_timestamp(sync, height, self.tip.header.timestamp)
        prefix = min(s.pool_len for s in relevant)
        txs = self._select_txs(g.pool.ordered[:prefix])
        header = BlockHeader(self.tip.digest, tx_root(txs), ts, g.etherbase, self.scenario.difficulty)
        self.headers[(g.group_id, height, rnd)] = header.encode()
        self.syncs.append((g.group_id, height, rnd, sync, tuple(s.sample for s in relevant)))
        for k in [k for k in g.samples if k[0] < height]:
            del g.samples[k]
        plan = ScanPlan(g.delivered.base, g.delivered.extras)
        self.scan_version = g.version
        self.start_scan(sim, header, plan, txs, (g.group_id,) + key, record=True, dense=g.delivered.extras)

    # -- shared pool under mutual exclusion --------------------------------------------------

    def _unpooled(self) -> list[Transaction]:
        return [tx for tx in self.pending if tx.digest() not in self.group.pool.seen]

    def request_cs(self, sim) -> None:
        g = self.group
        if g is None or g.mutex.state is not MutexState.RELEASED or not self._unpooled():
            return
        for dst, req in g.mutex.request():
            sim.send(self.id, dst, MutexRequestMsg(g.group_id, req.stamp))
        if g.mutex.held:
            self.enter_cs(sim)

    def enter_cs(self, sim) -> None:
        g = self.group
        for tx in self._unpooled():
            index = len(g.pool)
            pool_insert(g.pool, tx, g.mutex)
            self._send_all(sim, g.members, PoolInsert(g.group_id, index, tx))
        sim.schedule(self.id, self.scenario.cs_hold, MutexRelease(g.group_id))

    def on_MutexRelease(self, sim, src, msg: MutexRelease):
        g = self.group
        if g is None or g.group_id != msg.group_id or not g.mutex.held:
            return
        for dst, reply in g.mutex.release():
            sim.send(self.id, dst, MutexReplyMsg(g.group_id, reply.sender))
        self.request_cs(sim)

    def on_MutexRequestMsg(self, sim, src, msg: MutexRequestMsg):
        g = self.group
        if g is None or g.group_id != msg.group_id:
            # not (or no longer) a member: never block the requester
            sim.send(self.id, src, MutexReplyMsg(msg.group_id, self.id))
            return
        for dst, reply in g.mutex.on_request(src, msg.stamp):
            sim.send(self.id, dst, MutexReplyMsg(g.group_id, reply.sender))

    def on_MutexReplyMsg(self, sim, src, msg: MutexReplyMsg):
        g = self.group
        if g is None or g.group_id != msg.group_id:
            return
        if g.mutex.on_reply(src):
            self.enter_cs(sim)

    def on_PoolInsert(self, sim, src, msg: PoolInsert):
        g = self.group
        if g is not None and g.group_id == msg.group_id:
            g.pool.receive(msg.index, msg.tx)

    # -- rewards -------------------------------------------------------------------

    def on_RewardNotice(self, sim, src, msg: RewardNotice):
        amount = msg.amount
        if amount == 0 and self.cfg.fabricate:
            # a cheater still tries to claim an equal split
            amount = self.scenario.block_reward // max(1, len(self.group.members) if self.group else 1)
        if amount > 0:
            sim.send(self.id, CVRM_ID, WithdrawRequest(msg.group_id, self.id, amount, self.wallet))

    def on_WithdrawSigned(self, sim, src, msg: WithdrawSigned):
        sim.send(self.id, CHAIN_ID, SubmitWithdrawal(msg.group_id, msg.tx, msg.signature, msg.public))

    def on_WithdrawDenied(self, sim, src, msg: WithdrawDenied):
        self.stats.denied.append(msg.reason)
