import hashlib
import itertools
import random

import pytest
import sympy
from hypothesis import given, settings, strategies as st

from cpow.chain import Transaction, address_from
from cpow.errors import BadThreshold, DuplicateIndex, InsufficientShares
from cpow.threshold import (
    G,
    P,
    Q,
    SecretShare,
    SignedWithdrawal,
    default_threshold,
    derive_etherbase,
    dkg,
    interpolate_at_zero,
    public_key,
    reconstruct,
    sign_withdrawal,
    verify_withdrawal,
)

# first-run pin of the address derived from public_key(123456789)
GOLDEN_PUBLIC = 0x2732E84D25C62F490686393025B96B55
GOLDEN_ADDRESS = "b1794ced72709d35ec60168adc05e38050ea2672"


def sample_tx(amount=5, seq=0):
    return Transaction(address_from("etherbase"), address_from("member"), amount, seq)


class TestGroupParameters:
    def test_safe_prime_group(self):
        assert sympy.isprime(P) and sympy.isprime(Q) and P == 2 * Q + 1
        # generator lies in the order-Q subgroup and is not the identity
        assert pow(G, Q, P) == 1 and G % P != 1


class TestDkg:
    def test_three_two(self):
        pub, shares = dkg(3, 2, random.Random(1))
        assert len(shares) == 3
        keys = {reconstruct(list(c), 2) for c in itertools.combinations(shares, 2)}
        assert len(keys) == 1
        # independent route: the dealt public key is g^K
        assert public_key(keys.pop()) == pub.public

    def test_t_one_rejected(self):
        with pytest.raises(BadThreshold):
            dkg(3, 1, random.Random(1))
        with pytest.raises(BadThreshold):
            dkg(3, 4, random.Random(1))

    def test_different_seeds(self):
        assert dkg(3, 2, random.Random(1))[0] != dkg(3, 2, random.Random(2))[0]

    def test_default_threshold(self):
        assert [default_threshold(n) for n in (2, 3, 4, 6)] == [2, 2, 3, 4]


class TestReconstruct:
    def test_subsets_agree(self):
        _, (s1, s2, s3) = dkg(3, 2, random.Random(5))
        assert reconstruct([s1, s2], 2) == reconstruct([s2, s3], 2)

    def test_insufficient(self):
        _, shares = dkg(3, 2, random.Random(5))
        with pytest.raises(InsufficientShares):
            reconstruct(shares[:1], 2)

    def test_duplicate_index(self):
        _, shares = dkg(3, 2, random.Random(5))
        with pytest.raises(DuplicateIndex):
            reconstruct([shares[0], SecretShare(shares[0].index, 1)], 2)

    def test_below_threshold_never_matches(self):
        rng = random.Random(99)
        for _ in range(100):
            pub, shares = dkg(4, 3, rng)
            for combo in itertools.combinations(shares, 2):
                assert public_key(interpolate_at_zero(combo)) != pub.public

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 7), st.data())
    def test_any_t_subset_matches_public(self, n, data):
        t = data.draw(st.integers(2, n))
        pub, shares = dkg(n, t, random.Random(data.draw(st.integers(0, 2**32))))
        subset = data.draw(st.permutations(shares))[:t]
        assert public_key(reconstruct(subset, t)) == pub.public


class TestEtherbase:
    def test_deterministic(self):
        pub, _ = dkg(3, 2, random.Random(3))
        assert derive_etherbase(pub) == derive_etherbase(pub) == derive_etherbase(pub.public)

    def test_no_collisions(self):
        rng = random.Random(11)
        addrs = {derive_etherbase(public_key(rng.randrange(1, Q))) for _ in range(10_000)}
        assert len(addrs) == 10_000

    def test_golden(self):
        assert public_key(123456789) == GOLDEN_PUBLIC
        assert derive_etherbase(GOLDEN_PUBLIC).hex() == GOLDEN_ADDRESS
        manual = hashlib.sha256(b"cpow-etherbase:" + GOLDEN_PUBLIC.to_bytes(16, "big")).digest()[:20]
        assert manual.hex() == GOLDEN_ADDRESS


class TestSignatures:
    def setup_key(self, seed=4):
        pub, shares = dkg(4, 3, random.Random(seed))
        return pub, reconstruct(shares, 3)

    def test_roundtrip(self):
        pub, k = self.setup_key()
        tx = sample_tx()
        assert verify_withdrawal(pub, tx, sign_withdrawal(k, tx, random.Random(0)))

    def test_other_tx(self):
        pub, k = self.setup_key()
        sig = sign_withdrawal(k, sample_tx(), random.Random(0))
        assert not verify_withdrawal(pub, sample_tx(amount=6), sig)
        assert not verify_withdrawal(pub, sample_tx(seq=1), sig)

    def test_other_key(self):
        pub, k = self.setup_key()
        other, _ = self.setup_key(seed=5)
        tx = sample_tx()
        assert not verify_withdrawal(other, tx, sign_withdrawal(k, tx, random.Random(0)))

    def test_missing_signature(self):
        pub, _ = self.setup_key()
        assert not verify_withdrawal(pub, sample_tx(), None)

    def test_encode_roundtrip(self):
        pub, k = self.setup_key()
        sig = sign_withdrawal(k, sample_tx(), random.Random(0))
        assert SignedWithdrawal.decode(sig.encode()) == sig

    def test_every_bit_flip_fails(self):
        pub, k = self.setup_key()
        tx = sample_tx()
        raw = bytearray(sign_withdrawal(k, tx, random.Random(0)).encode())
        for bit in range(len(raw) * 8):
            mutated = bytearray(raw)
            mutated[bit // 8] ^= 1 << (bit % 8)
            assert not verify_withdrawal(pub, tx, SignedWithdrawal.decode(bytes(mutated)))
