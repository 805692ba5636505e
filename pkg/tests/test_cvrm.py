import random

import pytest

from cpow.chain import BlockHeader, EMPTY_TX_ROOT, Ledger, Transaction, address_from, hash_header
from cpow.cvrm import (
    AuditLog,
    ContributionProof,
    OracleReport,
    VerificationVerdict,
    compute_rewards,
    oracle_poll,
    register_group,
    verify_contributions,
)
from cpow.errors import (
    DuplicateGroup,
    EmptyHonestSet,
    ExceedsShare,
    HeightMismatch,
    MissingShares,
    NotEligible,
)
from cpow.group import finalize_group
from cpow.mining import NonceRange, ProofTrace
from cpow.threshold import derive_etherbase, dkg, reconstruct, verify_withdrawal

from conftest import honest_proofs, mine_block, registered_group


def group_header(record, tag=b"\x07" * 32):
    return BlockHeader(tag, EMPTY_TX_ROOT, 1000, record.etherbase, 20)


def forge(proof, nonces):
    entries = dict(proof.trace.entries)
    for x in nonces:
        entries[x] = bytes(32) if entries.get(x) != bytes(32) else b"\x01" * 32
    return ContributionProof(proof.miner, ProofTrace(entries, proof.trace.claimed), proof.block_height)


class TestRegister:
    def setup(self, n=6):
        pub, shares = dkg(n, 4, random.Random(1))
        desc = finalize_group("g", [f"m{i}" for i in range(n)], n)
        return desc, pub, dict(zip(desc.members, shares))

    def test_stored(self):
        reg = {}
        desc, pub, shares = self.setup()
        rec = register_group(reg, desc, pub, shares)
        assert reg["g"] is rec and len(rec.shares) == 6

    def test_missing_share(self):
        desc, pub, shares = self.setup()
        shares.pop("m5")
        with pytest.raises(MissingShares):
            register_group({}, desc, pub, shares)

    def test_duplicate(self):
        reg = {}
        desc, pub, shares = self.setup()
        register_group(reg, desc, pub, shares)
        with pytest.raises(DuplicateGroup):
            register_group(reg, desc, pub, shares)


class TestOracle:
    def test_balance_after_blocks(self):
        _, rec = registered_group()
        ledger = Ledger.create()
        for _ in range(10):
            ledger.apply_block(mine_block(ledger, rec.etherbase), 2)
        (report,) = oracle_poll(ledger, [rec], 5)
        assert report.balance == 20 and report.etherbase == rec.etherbase
        assert oracle_poll(ledger, [rec], 6)[0].balance == 20

    def test_unregistered_address_not_reported(self):
        _, rec = registered_group()
        ledger = Ledger.create()
        ledger.apply_block(mine_block(ledger, address_from("stranger")), 2)
        reports = oracle_poll(ledger, [rec], 0)
        assert [r.etherbase for r in reports] == [rec.etherbase] and reports[0].balance == 0


class TestVerify:
    def test_all_honest(self):
        _, rec = registered_group(3)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h)
        v = verify_contributions(rec, list(proofs.values()), h, 1)
        assert v.honest == {"m0", "m1", "m2"} and not v.dishonest and v.evidence == {}
        # agreement means nothing had to be recomputed
        assert v.recomputed == 0

    def test_fabricated_digest_blamed(self):
        _, rec = registered_group(3)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h)
        (holder, owner), seg = sorted(rec.assignment.overlaps.items())[0]
        proofs[owner] = forge(proofs[owner], [seg.start])
        v = verify_contributions(rec, list(proofs.values()), h, 1)
        assert v.dishonest == {owner} and holder in v.honest
        (x, submitted, recomputed), = v.evidence[owner]
        assert x == seg.start and recomputed == hash_header(h, x) != submitted

    def test_omitted_overlap_unverifiable(self):
        _, rec = registered_group(3)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h)
        (holder, owner), seg = sorted(rec.assignment.overlaps.items())[0]
        p = proofs[holder]
        kept = {x: d for x, d in p.trace.entries.items() if x not in seg}
        proofs[holder] = ContributionProof(holder, ProofTrace(kept, p.trace.claimed), 1)
        v = verify_contributions(rec, list(proofs.values()), h, 1)
        assert holder in v.unverifiable and holder not in v.honest

    def test_colluding_pair_caught_by_audit(self):
        _, rec = registered_group(2)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h)
        (holder, owner), seg = sorted(rec.assignment.overlaps.items())[0]
        # both sides agree on the same wrong digests
        proofs = {m: forge(p, list(seg)) for m, p in proofs.items()}
        assert not verify_contributions(rec, list(proofs.values()), h, 1).dishonest
        v = verify_contributions(rec, list(proofs.values()), h, 1, audit_rate=1.0)
        assert v.dishonest == {holder, owner}

    def test_sparse_stride(self):
        _, rec = registered_group(4, n_total=8000, overlap=0.05)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h, stride=7)
        v = verify_contributions(rec, list(proofs.values()), h, 1)
        assert v.honest == set(rec.descriptor.members)

    def test_height_mismatch(self):
        _, rec = registered_group(2)
        h = group_header(rec)
        proofs = list(honest_proofs(rec.assignment, h).values())
        proofs[0] = ContributionProof(proofs[0].miner, proofs[0].trace, 2)
        with pytest.raises(HeightMismatch):
            verify_contributions(rec, proofs, h)


def plain_proof(miner, n_entries):
    return ContributionProof(miner, ProofTrace({x: bytes(32) for x in range(n_entries)}, (NonceRange(0, 1000),)), 1)


class TestRewards:
    report = OracleReport(b"\x00" * 20, 9, 0)

    def test_equal_split(self):
        proofs = [plain_proof(m, 10) for m in ("a", "b", "c")]
        v = VerificationVerdict(frozenset("abc"))
        assert {e.miner: e.amount for e in compute_rewards(v, self.report, proofs)} == {"a": 3, "b": 3, "c": 3}

    def test_remainder_to_lowest_id(self):
        proofs = [plain_proof(m, 10) for m in ("a", "b", "c")]
        v = VerificationVerdict(frozenset("ab"), frozenset("c"))
        assert {e.miner: e.amount for e in compute_rewards(v, self.report, proofs)} == {"a": 5, "b": 4, "c": 0}

    def test_proportional(self):
        proofs = [plain_proof("a", 30), plain_proof("b", 10)]
        v = VerificationVerdict(frozenset("ab"))
        entries = compute_rewards(v, OracleReport(b"\x00" * 20, 100, 0), proofs)
        assert {e.miner: e.amount for e in entries} == {"a": 75, "b": 25}

    def test_reserved_excluded(self):
        proofs = [plain_proof(m, 10) for m in ("a", "b")]
        v = VerificationVerdict(frozenset("ab"))
        entries = compute_rewards(v, OracleReport(b"\x00" * 20, 10, 0), proofs, reserved=4)
        assert sum(e.amount for e in entries) == 6

    def test_all_dishonest(self):
        with pytest.raises(EmptyHonestSet):
            compute_rewards(VerificationVerdict(dishonest=frozenset("ab")), self.report, [])


class TestWithdrawals:
    def settled(self, fabricate=False):
        cvrm, rec = registered_group(3, seed=2)
        ledger = Ledger.create()
        for _ in range(3):
            ledger.apply_block(mine_block(ledger, rec.etherbase), 10)
        h = group_header(rec)
        proofs = honest_proofs(rec.assignment, h)
        if fabricate:
            (holder, owner), seg = sorted(rec.assignment.overlaps.items())[0]
            proofs[holder] = forge(proofs[holder], [seg.start])
        verdict, entries = cvrm.settle("g", list(proofs.values()), h, ledger, 1)
        return cvrm, rec, ledger, verdict, {e.miner: e.amount for e in entries}

    def test_exact_entitlement(self):
        cvrm, rec, ledger, _, amounts = self.settled()
        assert sum(amounts.values()) == 30
        to = address_from("m1-wallet")
        tx = Transaction(rec.etherbase, to, amounts["m1"], cvrm.next_withdrawal_seq("g"))
        sig = cvrm.authorize_withdrawal("g", "m1", tx)
        assert verify_withdrawal(rec.public, tx, sig)
        ledger.apply_withdrawal(tx, sig, rec.public)
        assert ledger.balance(to) == amounts["m1"]

    def test_dishonest_denied(self):
        cvrm, rec, _, verdict, amounts = self.settled(fabricate=True)
        (cheat,) = verdict.dishonest
        assert amounts[cheat] == 0
        with pytest.raises(NotEligible):
            cvrm.authorize_withdrawal("g", cheat, Transaction(rec.etherbase, address_from("x"), 1, 0))
        assert cvrm.audit.events("withdrawal_denied")[0]["miner"] == cheat

    def test_exceeds_share(self):
        cvrm, rec, _, _, amounts = self.settled()
        with pytest.raises(ExceedsShare):
            cvrm.authorize_withdrawal("g", "m0", Transaction(rec.etherbase, address_from("x"), amounts["m0"] + 1, 0))

    def test_second_withdrawal_of_same_share(self):
        cvrm, rec, _, _, amounts = self.settled()
        tx = Transaction(rec.etherbase, address_from("x"), amounts["m2"], 0)
        cvrm.authorize_withdrawal("g", "m2", tx)
        with pytest.raises(ExceedsShare):
            cvrm.authorize_withdrawal("g", "m2", tx.replace(seq=1))

    def test_group_key_never_stored(self):
        cvrm, rec, *_ = self.settled()
        k = reconstruct([rec.shares[m] for m in sorted(rec.shares)], rec.public.threshold)
        tx = Transaction(rec.etherbase, address_from("x"), 1, 0)
        cvrm.authorize_withdrawal("g", "m0", tx)

        def ints(obj, depth=0):
            if depth > 4:
                return
            if isinstance(obj, int):
                yield obj
            elif isinstance(obj, dict):
                for v in obj.values():
                    yield from ints(v, depth + 1)
            elif isinstance(obj, (list, tuple, set, frozenset)):
                for v in obj:
                    yield from ints(v, depth + 1)
            elif hasattr(obj, "__dict__"):
                for v in vars(obj).values():
                    yield from ints(v, depth + 1)

        assert k not in set(ints(cvrm))

    def test_audit_log_file(self, tmp_path):
        log = AuditLog(tmp_path / "audit.jsonl")
        log.record(5, "register", "g", None, members=["a"])
        assert (tmp_path / "audit.jsonl").read_text().strip() == log.lines()[0]
