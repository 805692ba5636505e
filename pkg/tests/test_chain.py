import hashlib
import random

import pytest
from hypothesis import given, strategies as st

from cpow.chain import (
    Block,
    BlockHeader,
    Ledger,
    Transaction,
    ZERO_DIGEST,
    address_from,
    check_golden_vectors,
    genesis_block,
    hash_header,
    meets_difficulty,
    tx_root,
    EMPTY_TX_ROOT,
)
from cpow.errors import BadParent, BadSignature, DifficultyNotMet, InsufficientFunds
from cpow.threshold import derive_etherbase, dkg, reconstruct, sign_withdrawal

from conftest import DATA, make_header

digests = st.binary(min_size=32, max_size=32)
addresses = st.binary(min_size=20, max_size=20)
headers = st.builds(
    BlockHeader, digests, digests, st.integers(0, 2**64 - 1), addresses, st.integers(0, 256)
)
nonces = st.integers(0, 2**64 - 1)


def oracle_digest(h: BlockHeader, nonce: int) -> bytes:
    # independent packing: big-endian fixed widths in declaration order, nonce last
    raw = (h.parent + h.tx_root + h.timestamp.to_bytes(8, "big") + h.beneficiary
           + h.difficulty.to_bytes(2, "big") + nonce.to_bytes(8, "big"))
    return hashlib.sha256(raw).digest()


def leading_zero_bits(digest: bytes) -> int:
    bits = "".join(f"{b:08b}" for b in digest)
    return len(bits) - len(bits.lstrip("0"))


def mine(ledger: Ledger, beneficiary: bytes, difficulty: int = 4, txs=(), timestamp=None) -> Block:
    tip = ledger.tip
    ts = tip.header.timestamp + 1 if timestamp is None else timestamp
    h = BlockHeader(tip.digest, tx_root(txs), ts, beneficiary, difficulty)
    nonce = 0
    while not meets_difficulty(hash_header(h, nonce), difficulty):
        nonce += 1
    return Block(h.with_nonce(nonce), tuple(txs))


class TestHashHeader:
    def test_deterministic(self, header):
        assert hash_header(header, 7) == hash_header(header, 7)

    def test_nonce_changes_digest(self, header):
        assert hash_header(header, 7) != hash_header(header, 8)
        assert hash_header(header, 8) == oracle_digest(header, 8)

    @given(headers, nonces)
    def test_matches_independent_packing(self, h, n):
        assert hash_header(h, n) == oracle_digest(h, n)

    def test_golden_vectors(self):
        assert check_golden_vectors(DATA / "golden_vectors.txt") == []

    def test_golden_vector_mismatch_reported(self, tmp_path):
        lines = (DATA / "golden_vectors.txt").read_text().splitlines()
        head, nonce, digest = lines[0].split()
        bad = "0" + digest[1:] if digest[0] != "0" else "1" + digest[1:]
        (tmp_path / "v.txt").write_text(f"{head} {nonce} {bad}\n")
        assert len(check_golden_vectors(tmp_path / "v.txt")) == 1

    def test_encode_decode_roundtrip(self, header):
        assert BlockHeader.decode(header.encode()) == header

    @given(headers)
    def test_any_field_change_changes_digest(self, h):
        changed = BlockHeader(h.parent, h.tx_root, (h.timestamp + 1) % 2**64, h.beneficiary, h.difficulty)
        assert hash_header(h, 0) != hash_header(changed, 0)


class TestMeetsDifficulty:
    def test_zero_bits_always(self):
        assert meets_difficulty(b"\xff" * 32, 0)

    def test_all_zero_digest_256(self):
        assert meets_difficulty(bytes(32), 256)

    def test_first_byte_one_fails_eight(self):
        assert not meets_difficulty(b"\x01" + b"\xff" * 31, 8)
        assert meets_difficulty(b"\x01" + b"\xff" * 31, 7)

    @given(digests, st.integers(0, 256))
    def test_matches_bit_count(self, d, bits):
        assert meets_difficulty(d, bits) == (leading_zero_bits(d) >= bits)

    @given(digests, st.integers(0, 256), st.integers(0, 256))
    def test_monotone(self, d, a, b):
        hi, lo = max(a, b), min(a, b)
        if meets_difficulty(d, hi):
            assert meets_difficulty(d, lo)


class TestLedger:
    def test_empty_block_credits(self):
        ledger = Ledger.create()
        addr = address_from("miner")
        ledger.apply_block(mine(ledger, addr), 2)
        assert ledger.balance(addr) == 2 and ledger.height == 1

    def test_wrong_parent(self):
        ledger = Ledger.create()
        h = BlockHeader(b"\x01" * 32, EMPTY_TX_ROOT, 1, address_from("m"), 0)
        with pytest.raises(BadParent):
            ledger.apply_block(Block(h), 2)

    def test_difficulty_not_met(self):
        ledger = Ledger.create()
        h = BlockHeader(ledger.tip.digest, EMPTY_TX_ROOT, 1, address_from("m"), 30)
        nonce = next(n for n in range(100) if not meets_difficulty(hash_header(h, n), 30))
        with pytest.raises(DifficultyNotMet):
            ledger.apply_block(Block(h.with_nonce(nonce)), 2)

    def test_fifty_blocks(self):
        ledger = Ledger.create()
        addr = address_from("one")
        for _ in range(50):
            ledger.apply_block(mine(ledger, addr, difficulty=2), 2)
        assert ledger.balance(addr) == 100
        assert ledger.verify_chain() and ledger.conserved()

    def test_transfers_and_bad_tx_leaves_no_trace(self):
        a, b = address_from("a"), address_from("b")
        ledger = Ledger.create(endowments={a: 10})
        tx = Transaction(a, b, 4, 0)
        ledger.apply_block(mine(ledger, b, txs=[tx]), 2)
        assert (ledger.balance(a), ledger.balance(b)) == (6, 6)
        before = dict(ledger.balances)
        with pytest.raises(InsufficientFunds):
            ledger.apply_block(mine(ledger, b, txs=[Transaction(a, b, 100, 1)]), 2)
        assert ledger.balances == before and ledger.height == 1
        assert ledger.conserved()

    def _funded(self):
        rng = random.Random(3)
        pub, shares = dkg(3, 2, rng)
        eb = derive_etherbase(pub)
        ledger = Ledger.create(endowments={eb: 10})
        return ledger, pub, reconstruct(shares, 2), eb, rng

    def test_withdrawal_transfer(self):
        ledger, pub, k, eb, rng = self._funded()
        to = address_from("member")
        tx = Transaction(eb, to, 5, 0)
        ledger.apply_withdrawal(tx, sign_withdrawal(k, tx, rng), pub)
        assert (ledger.balance(eb), ledger.balance(to)) == (5, 5)

    def test_tampered_amount(self):
        ledger, pub, k, eb, rng = self._funded()
        tx = Transaction(eb, address_from("member"), 5, 0)
        sig = sign_withdrawal(k, tx, rng)
        with pytest.raises(BadSignature):
            ledger.apply_withdrawal(tx.replace(amount=6), sig, pub)

    def test_withdrawal_exceeding_balance(self):
        ledger, pub, k, eb, rng = self._funded()
        tx = Transaction(eb, address_from("member"), 11, 0)
        with pytest.raises(InsufficientFunds):
            ledger.apply_withdrawal(tx, sign_withdrawal(k, tx, rng), pub)

    def test_key_must_control_sender(self):
        ledger, pub, k, eb, rng = self._funded()
        other = address_from("not-the-etherbase")
        ledger.balances[other] = 10
        tx = Transaction(other, address_from("m"), 1, 0)
        with pytest.raises(BadSignature):
            ledger.apply_withdrawal(tx, sign_withdrawal(k, tx, rng), pub)

    def test_genesis_tags_differ(self):
        assert genesis_block(b"a").digest != genesis_block(b"b").digest

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=12))
    def test_conservation_property(self, picks):
        miners = [address_from(f"m{i}") for i in range(4)]
        ledger = Ledger.create(endowments={miners[0]: 5})
        for i in picks:
            ledger.apply_block(mine(ledger, miners[i], difficulty=1), 3)
        assert sum(ledger.balances.values()) - 5 == 3 * len(picks)
        assert ledger.conserved() and ledger.verify_chain()
