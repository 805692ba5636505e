import hashlib
from pathlib import Path

import pytest

from cpow.chain import BlockHeader, ZERO_DIGEST, address_from
from cpow.simnet import NodeConfig, ScenarioConfig

ROOT = Path(__file__).resolve().parent.parent
DATA = Path(__file__).resolve().parent / "data"
NINE_NODE_SCENARIO = ROOT / "scenarios" / "nine_node.json"


def make_header(tag: str = "h", timestamp: int = 1000, difficulty: int = 8) -> BlockHeader:
    parent = hashlib.sha256(tag.encode()).digest()
    return BlockHeader(parent, ZERO_DIGEST, timestamp, address_from(tag), difficulty)


@pytest.fixture
def header():
    return make_header()


@pytest.fixture(scope="session")
def nine_node_config() -> ScenarioConfig:
    return ScenarioConfig.load(NINE_NODE_SCENARIO)


def small_group_config(n: int = 3, **overrides) -> ScenarioConfig:
    """n equal seekers plus one strong solo miner, fast enough for unit tests."""
    nodes = [NodeConfig(f"w{i}", nonce_delay=5000, clock_skew=(i - 1) * 7000,
                        initial_role="seeking", node_class="weak") for i in range(n)]
    nodes.append(NodeConfig("s0", nonce_delay=0, node_class="strong"))
    params = dict(name="small", nodes=tuple(nodes), difficulty=9, blocks_target=8,
                  group_target_size=n, base_hash_cost=714, progress_interval=32,
                  n_total=2**20, threshold=None)
    params.update(overrides)
    return ScenarioConfig(**params).validate()


def mine_block(ledger, beneficiary: bytes, difficulty: int = 0, txs=()):
    """Find the first valid nonce on top of the ledger tip."""
    from cpow.chain import Block, hash_header, meets_difficulty, tx_root

    tip = ledger.tip
    h = BlockHeader(tip.digest, tx_root(txs), tip.header.timestamp + 1, beneficiary, difficulty)
    nonce = 0
    while not meets_difficulty(hash_header(h, nonce), difficulty):
        nonce += 1
    return Block(h.with_nonce(nonce), tuple(txs))


def honest_proofs(assignment, header, height: int = 1, stride: int = 1):
    """Exhaustive scans of every delivered range at an unreachable difficulty."""
    from cpow.cvrm import ContributionProof
    from cpow.mining import NonceScanner, ScanPlan

    proofs = {}
    for m, delivered in assignment.per_miner.items():
        plan = ScanPlan(delivered.base, delivered.extras)
        scanner = NonceScanner(header, plan, 256, stride, dense=delivered.extras)
        scanner.advance(plan.size)
        proofs[m] = ContributionProof(m, scanner.trace(), height)
    return proofs


def registered_group(n: int = 3, seed: int = 0, n_total: int = 3000, overlap: float = 0.01, threshold=None):
    """A CVRM with one registered group and its range assignment."""
    import random

    from cpow.cvrm import CVRM
    from cpow.group import divide_nonce_range, finalize_group
    from cpow.threshold import default_threshold, derive_etherbase, dkg

    rng = random.Random(f"group:{seed}")
    members = [f"m{i}" for i in range(n)]
    t = threshold or default_threshold(n)
    pub, shares = dkg(n, t, rng)
    desc = finalize_group("g", members, n).activate(derive_etherbase(pub))
    assignment = divide_nonce_range(n_total, members, overlap, seed)
    cvrm = CVRM(rng=random.Random(seed), audit_rate=0.0)
    cvrm.register_group(desc, pub, dict(zip(members, shares)), assignment=assignment)
    return cvrm, cvrm.record("g")


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_criterion(key: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[key] = (passed, detail)
    print(f"criterion {key}: {'PASS' if passed else 'FAIL'} - {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} - {detail}")
