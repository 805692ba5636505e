"""Build a simulated network from a scenario, run it, and collect the observable result."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..chain import Ledger
from ..cvrm import AuditLog
from ..errors import Deadlock
from .config import ScenarioConfig
from .kernel import LatencyModel, Simulator
from .messages import Start
from .processes import CHAIN_ID, CVRM_ID, ChainService, CVRMService, MinerNode, NodeStats


@dataclass
class SimulationResult:
    scenario: ScenarioConfig
    seed: int
    ledger: Ledger
    audit: AuditLog
    stats: dict[str, NodeStats]
    wallets: dict[str, bytes]
    block_miners: list[tuple[int, str, bytes]]  # (height, submitting node, beneficiary)
    group_members: dict[str, tuple[str, ...]]  # as formed
    group_etherbases: dict[str, bytes]
    headers: dict[tuple[str, int, int], dict[str, bytes]]
    syncs: dict[tuple[str, int, int], dict[str, tuple]]
    pools: dict[str, dict[str, list[bytes]]]
    elapsed: int
    events: int
    stale_blocks: int
    rejected: list = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.ledger.height

    def blocks_won(self) -> dict[str, int]:
        won = {n.id: 0 for n in self.scenario.nodes}
        for _, miner, _ in self.block_miners:
            won[miner] += 1
        return won

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.ledger.fingerprint().encode())
        for line in self.audit.lines():
            h.update(line.encode())
        h.update(json.dumps({k: [s.nonces, s.mining_events] for k, s in sorted(self.stats.items())}).encode())
        h.update(str(self.elapsed).encode())
        return h.hexdigest()


def mutex_safety(nodes: list[MinerNode]) -> Callable[[Simulator], bool]:
    def check(sim: Simulator) -> bool:
        holders: dict[str, int] = {}
        for n in nodes:
            if n.group is not None and n.group.mutex.held:
                holders[n.group.group_id] = holders.get(n.group.group_id, 0) + 1
        return all(v <= 1 for v in holders.values())

    return check


def membership_safety(nodes: list[MinerNode], cvrm: CVRMService) -> Callable[[Simulator], bool]:
    def check(sim: Simulator) -> bool:
        seen: dict[str, str] = {}
        for gid, members in cvrm.active_members().items():
            for m in members:
                if m in seen:
                    return False
                seen[m] = gid
        # a node's own view may lag a dissolution, but never points at a foreign group
        return all(n.group is None or seen.get(n.id) in (None, n.group.group_id) for n in nodes)

    return check


def build(config: ScenarioConfig, seed: int = 0):
    config.validate()
    sim = Simulator(seed, LatencyModel(config.latency_base, config.latency_jitter))
    ledger = Ledger.create(genesis_tag=f"{config.name}:{seed}".encode())
    audit = AuditLog()
    ids = [n.id for n in config.nodes]
    nodes = [MinerNode(cfg, config, seed, ids, ledger.tip) for cfg in config.nodes]
    chain = ChainService(config, ledger, ids + [CVRM_ID])
    cvrm = CVRMService(config, seed, ledger, audit)
    for p in [chain, cvrm, *nodes]:
        sim.add(p)
    return sim, chain, cvrm, nodes


def run(
    config: ScenarioConfig,
    seed: int = 0,
    stop: Optional[Callable[[Simulator], bool]] = None,
    until: Optional[int] = None,
    invariants: bool = True,
    setup: Optional[Callable] = None,
) -> SimulationResult:
    """Run ``config`` under ``seed``.

    Without ``stop`` the run lasts until the chain reaches ``blocks_target``
    and every in-flight message (settlement, withdrawals) has drained, or
    until ``max_ticks``. A drained queue short of the target is a Deadlock.
    """
    sim, chain, cvrm, nodes = build(config, seed)
    if invariants:
        sim.introspect("mutex-safety", mutex_safety(nodes))
        sim.introspect("membership-safety", membership_safety(nodes, cvrm))
    if setup is not None:
        setup(sim, chain, cvrm, nodes)
    for n in nodes:
        sim.schedule(n.id, 0, Start())
    limit = config.max_ticks if until is None else until
    sim.run(stop=stop, until=limit)
    if stop is None and not sim.queue and chain.ledger.height < config.blocks_target:
        raise Deadlock(f"network went quiet at height {chain.ledger.height} of {config.blocks_target}")
    return collect(sim, chain, cvrm, nodes, config, seed)


def collect(sim, chain: ChainService, cvrm: CVRMService, nodes: list[MinerNode], config, seed) -> SimulationResult:
    headers: dict = {}
    syncs: dict = {}
    pools: dict = {}
    for n in nodes:
        for key, enc in n.headers.items():
            headers.setdefault(key, {})[n.id] = enc
        for gid, height, rnd, result, samples in n.syncs:
            syncs.setdefault((gid, height, rnd), {})[n.id] = (result, samples)
        if n.group is not None:
            pools.setdefault(n.group.group_id, {})[n.id] = [tx.digest() for tx in n.group.pool.ordered]
    groups = {gid: v[0][0].members for gid, v in cvrm.versions.items()}
    etherbases = {gid: rec.etherbase for gid, rec in cvrm.cvrm.records.items()}
    return SimulationResult(
        scenario=config,
        seed=seed,
        ledger=chain.ledger,
        audit=cvrm.audit,
        stats={n.id: n.stats for n in nodes},
        wallets={n.id: n.wallet for n in nodes},
        block_miners=[(b.height, b.miner, b.beneficiary) for b in chain.blocks],
        group_members=groups,
        group_etherbases=etherbases,
        headers=headers,
        syncs=syncs,
        pools=pools,
        elapsed=sim.now,
        events=sim.events_processed,
        stale_blocks=chain.stale,
        rejected=list(chain.rejected),
    )
