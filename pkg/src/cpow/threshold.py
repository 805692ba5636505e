"""Shamir sharing of a group key, Schnorr withdrawal signatures, derived etherbase.

WARNING: the group below is a 128-bit safe-prime Schnorr group chosen for
fast, deterministic simulation. It is toy-sized and must not protect
anything of value.

Shares live in Z_q (the exponent field); public keys are g^K mod p.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import BadThreshold, DuplicateIndex, InsufficientShares

# p = 2q + 1, both prime; g = 4 generates the order-q subgroup of squares.
P = 0xE905DB6BB965DF0FC968BF49CA1AA207
Q = 0x7482EDB5DCB2EF87E4B45FA4E50D5103
G = 4
ELEMENT_BYTES = 16


def encode_int(value: int) -> bytes:
    return value.to_bytes(ELEMENT_BYTES, "big")


@dataclass(frozen=True)
class SecretShare:
    index: int
    value: int

    def __post_init__(self):
        if self.index <= 0:
            raise ValueError("share index must be >= 1")
        if not 0 <= self.value < Q:
            raise ValueError("share value outside the field")


@dataclass(frozen=True)
class GroupKeyPair:
    public: int
    threshold: int
    share_count: int

    def encode(self) -> bytes:
        return encode_int(self.public)


@dataclass(frozen=True)
class SignedWithdrawal:
    tx_digest: bytes
    commitment: int
    response: int

    def encode(self) -> bytes:
        return self.tx_digest + encode_int(self.commitment) + encode_int(self.response)

    @classmethod
    def decode(cls, data: bytes) -> "SignedWithdrawal":
        return cls(
            data[:32],
            int.from_bytes(data[32 : 32 + ELEMENT_BYTES], "big"),
            int.from_bytes(data[32 + ELEMENT_BYTES :], "big"),
        )


def default_threshold(n: int) -> int:
    """Majority threshold, never below 2."""
    return max(2, math.ceil((n + 1) / 2))


def _eval_poly(coeffs: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % Q
    return acc


def dkg(n: int, t: int, rng: random.Random) -> tuple[GroupKeyPair, list[SecretShare]]:
    """Deal t-of-n shares of a fresh group key.

    The secret only exists inside this call; afterwards it can be
    recovered solely by combining at least ``t`` shares.
    """
    if not 2 <= t <= n:
        raise BadThreshold(f"need 2 <= t <= n, got t={t}, n={n}")
    coeffs = [rng.randrange(1, Q)] + [rng.randrange(0, Q) for _ in range(t - 1)]
    public = pow(G, coeffs[0], P)
    shares = [SecretShare(i, _eval_poly(coeffs, i)) for i in range(1, n + 1)]
    del coeffs
    return GroupKeyPair(public, t, n), shares


def interpolate_at_zero(shares: Iterable[SecretShare]) -> int:
    """Lagrange interpolation at x=0 with no threshold check."""
    shares = list(shares)
    xs = [s.index for s in shares]
    if len(set(xs)) != len(xs):
        raise DuplicateIndex("shares must have distinct indices")
    total = 0
    for s in shares:
        num, den = 1, 1
        for x in xs:
            if x != s.index:
                num = num * (-x) % Q
                den = den * (s.index - x) % Q
        total = (total + s.value * num * pow(den, -1, Q)) % Q
    return total


def reconstruct(shares: Sequence[SecretShare], t: int) -> int:
    if len({s.index for s in shares}) != len(shares):
        raise DuplicateIndex("shares must have distinct indices")
    if len(shares) < t:
        raise InsufficientShares(f"{len(shares)} shares < threshold {t}")
    return interpolate_at_zero(shares[:t])


def public_key(secret: int) -> int:
    return pow(G, secret % Q, P)


def derive_etherbase(key: GroupKeyPair | int) -> bytes:
    public = key.public if isinstance(key, GroupKeyPair) else key
    return hashlib.sha256(b"cpow-etherbase:" + encode_int(public)).digest()[:20]


def _challenge(commitment: int, public: int, tx_digest: bytes) -> int:
    h = hashlib.sha256(encode_int(commitment) + encode_int(public) + tx_digest)
    return int.from_bytes(h.digest(), "big") % Q


def sign_withdrawal(k: int, tx, rng: random.Random) -> SignedWithdrawal:
    """Schnorr signature over the transaction digest under group secret ``k``."""
    digest = tx.digest()
    nonce = rng.randrange(1, Q)
    commitment = pow(G, nonce, P)
    e = _challenge(commitment, public_key(k), digest)
    return SignedWithdrawal(digest, commitment, (nonce + e * k) % Q)


def verify_withdrawal(public: GroupKeyPair | int, tx, sig: Optional[SignedWithdrawal]) -> bool:
    if sig is None:
        return False
    pub = public.public if isinstance(public, GroupKeyPair) else public
    digest = tx.digest()
    if sig.tx_digest != digest:
        return False
    if not (1 <= sig.commitment < P and 0 <= sig.response < Q):
        return False
    # commitment must sit in the prime-order subgroup
    if pow(sig.commitment, Q, P) != 1:
        return False
    e = _challenge(sig.commitment, pub, digest)
    return pow(G, sig.response, P) == sig.commitment * pow(pub, e, P) % P
