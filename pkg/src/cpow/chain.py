"""Minimal chain primitives: headers, blocks, the difficulty test and a balance ledger.

Every digest in the package is SHA-256 over a fixed-width big-endian
serialization, so golden vectors are stable across platforms.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import (
    BadParent,
    BadSequence,
    BadSignature,
    CPoWError,
    DifficultyNotMet,
    InsufficientFunds,
)

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
NONCE_MAX = 2**64 - 1
ZERO_DIGEST = bytes(DIGEST_SIZE)
ZERO_ADDRESS = bytes(ADDRESS_SIZE)

# parent, tx_root, timestamp, beneficiary, difficulty
_HEADER_LAYOUT = struct.Struct(">32s32sQ20sH")
HEADER_BYTES = _HEADER_LAYOUT.size


class BadTimestamp(CPoWError):
    pass


def _check_digest(value: bytes, name: str) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be a {DIGEST_SIZE}-byte digest")


def _check_address(value: bytes, name: str) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != ADDRESS_SIZE:
        raise ValueError(f"{name} must be a {ADDRESS_SIZE}-byte address")


def check_difficulty(bits: int) -> int:
    if not 0 <= bits <= 256:
        raise ValueError(f"difficulty must be in [0, 256] leading zero bits, got {bits}")
    return bits


def address_from(label: str | bytes) -> bytes:
    """Deterministic 20-byte address for a label (wallets, test fixtures)."""
    if isinstance(label, str):
        label = label.encode()
    return hashlib.sha256(b"cpow-address:" + label).digest()[:ADDRESS_SIZE]


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    to: bytes
    amount: int
    seq: int
    payload_digest: bytes = ZERO_DIGEST

    def __post_init__(self):
        _check_address(self.sender, "sender")
        _check_address(self.to, "to")
        _check_digest(self.payload_digest, "payload_digest")
        if self.amount < 0:
            raise ValueError("amount must be >= 0")
        if self.seq < 0:
            raise ValueError("seq must be >= 0")

    def encode(self) -> bytes:
        return (
            self.sender
            + self.to
            + self.amount.to_bytes(16, "big")
            + self.seq.to_bytes(8, "big")
            + self.payload_digest
        )

    def digest(self) -> bytes:
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = hashlib.sha256(b"cpow-tx:" + self.encode()).digest()
            object.__setattr__(self, "_digest", cached)
        return cached

    def replace(self, **changes) -> "Transaction":
        values = dict(
            sender=self.sender,
            to=self.to,
            amount=self.amount,
            seq=self.seq,
            payload_digest=self.payload_digest,
        )
        values.update(changes)
        return Transaction(**values)


def tx_root(txs: Iterable[Transaction]) -> bytes:
    h = hashlib.sha256(b"cpow-txroot:")
    for tx in txs:
        h.update(tx.digest())
    return h.digest()


EMPTY_TX_ROOT = tx_root(())


@dataclass(frozen=True)
class BlockHeader:
    parent: bytes
    tx_root: bytes
    timestamp: int
    beneficiary: bytes
    difficulty: int
    nonce: int = 0

    def __post_init__(self):
        _check_digest(self.parent, "parent")
        _check_digest(self.tx_root, "tx_root")
        _check_address(self.beneficiary, "beneficiary")
        check_difficulty(self.difficulty)
        if not 0 <= self.timestamp <= NONCE_MAX:
            raise ValueError("timestamp must fit an unsigned 64-bit integer")
        if not 0 <= self.nonce <= NONCE_MAX:
            raise ValueError("nonce must fit an unsigned 64-bit integer")

    def encode(self) -> bytes:
        """Canonical header bytes, nonce excluded (it is hashed separately)."""
        return _HEADER_LAYOUT.pack(
            self.parent, self.tx_root, self.timestamp, self.beneficiary, self.difficulty
        )

    @classmethod
    def decode(cls, data: bytes, nonce: int = 0) -> "BlockHeader":
        parent, root, ts, beneficiary, difficulty = _HEADER_LAYOUT.unpack(data)
        return cls(parent, root, ts, beneficiary, difficulty, nonce)

    def with_nonce(self, nonce: int) -> "BlockHeader":
        return BlockHeader(
            self.parent, self.tx_root, self.timestamp, self.beneficiary, self.difficulty, nonce
        )

    def digest(self) -> bytes:
        return hash_header(self, self.nonce)


def header_hasher(header: BlockHeader):
    """SHA-256 state primed with the header bytes; ``copy()`` it per nonce."""
    h = hashlib.sha256()
    h.update(header.encode())
    return h


def hash_header(header: BlockHeader, nonce: int) -> bytes:
    h = header_hasher(header)
    h.update(nonce.to_bytes(8, "big"))
    return h.digest()


def difficulty_limit(bits: int) -> int:
    """Digests strictly below this integer have ``bits`` leading zero bits."""
    return 1 << (256 - check_difficulty(bits))


def meets_difficulty(digest: bytes, bits: int) -> bool:
    _check_digest(digest, "digest")
    return int.from_bytes(digest, "big") < difficulty_limit(bits)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: tuple[Transaction, ...] = ()

    @property
    def digest(self) -> bytes:
        return self.header.digest()


def genesis_block(tag: bytes = b"") -> Block:
    root = hashlib.sha256(b"cpow-genesis:" + tag).digest()
    return Block(BlockHeader(ZERO_DIGEST, root, 0, ZERO_ADDRESS, 0, 0))


@dataclass
class Ledger:
    """Balances plus the accepted chain. Mutating methods return ``self``."""

    chain: list[Block] = field(default_factory=lambda: [genesis_block()])
    balances: dict[bytes, int] = field(default_factory=dict)
    initial: dict[bytes, int] = field(default_factory=dict)
    minted: int = 0
    last_seq: dict[bytes, int] = field(default_factory=dict)
    outflow: dict[bytes, int] = field(default_factory=dict)

    @classmethod
    def create(cls, genesis_tag: bytes = b"", endowments: Optional[dict[bytes, int]] = None):
        endowments = dict(endowments or {})
        if any(v < 0 for v in endowments.values()):
            raise ValueError("endowments must be >= 0")
        return cls(
            chain=[genesis_block(genesis_tag)],
            balances=dict(endowments),
            initial=dict(endowments),
        )

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    @property
    def height(self) -> int:
        """Number of mined blocks on top of genesis."""
        return len(self.chain) - 1

    def balance(self, address: bytes) -> int:
        return self.balances.get(address, 0)

    def _transfer(self, tx: Transaction) -> None:
        last = self.last_seq.get(tx.sender, -1)
        if tx.seq <= last:
            raise BadSequence(f"seq {tx.seq} does not advance past {last}")
        if self.balance(tx.sender) < tx.amount:
            raise InsufficientFunds(
                f"balance {self.balance(tx.sender)} < amount {tx.amount}"
            )
        self.balances[tx.sender] = self.balance(tx.sender) - tx.amount
        self.balances[tx.to] = self.balance(tx.to) + tx.amount
        self.outflow[tx.sender] = self.outflow.get(tx.sender, 0) + tx.amount
        self.last_seq[tx.sender] = tx.seq

    def apply_block(self, block: Block, block_reward: int) -> "Ledger":
        header = block.header
        if header.parent != self.tip.digest:
            raise BadParent("block parent is not the current tip")
        if header.timestamp < self.tip.header.timestamp:
            raise BadTimestamp("block timestamp precedes its parent")
        if not meets_difficulty(block.digest, header.difficulty):
            raise DifficultyNotMet("header digest misses the difficulty target")
        if header.tx_root != tx_root(block.txs):
            raise CPoWError("tx_root does not commit to the block transactions")
        # Validate transfers on a scratch copy so a bad block leaves no trace.
        scratch = Ledger(
            chain=self.chain,
            balances=dict(self.balances),
            initial=self.initial,
            minted=self.minted,
            last_seq=dict(self.last_seq),
            outflow=dict(self.outflow),
        )
        for tx in block.txs:
            scratch._transfer(tx)
        self.balances, self.last_seq, self.outflow = (
            scratch.balances,
            scratch.last_seq,
            scratch.outflow,
        )
        self.balances[header.beneficiary] = self.balance(header.beneficiary) + block_reward
        self.minted += block_reward
        self.chain.append(block)
        return self

    def apply_withdrawal(self, tx: Transaction, sig, group_pub) -> "Ledger":
        from .threshold import derive_etherbase, verify_withdrawal

        if derive_etherbase(group_pub) != tx.sender:
            raise BadSignature("signing key does not control the spending address")
        if not verify_withdrawal(group_pub, tx, sig):
            raise BadSignature("withdrawal signature does not verify")
        self._transfer(tx)
        return self

    def next_seq(self, sender: bytes) -> int:
        return self.last_seq.get(sender, -1) + 1

    def verify_chain(self) -> bool:
        """Replay parent links and proof-of-work from genesis."""
        for prev, block in zip(self.chain, self.chain[1:]):
            if block.header.parent != prev.digest:
                raise BadParent("broken parent link during replay")
            if not meets_difficulty(block.digest, block.header.difficulty):
                raise DifficultyNotMet("replayed block misses its difficulty")
        return True

    def conserved(self) -> bool:
        if any(v < 0 for v in self.balances.values()):
            return False
        return sum(self.balances.values()) - sum(self.initial.values()) == self.minted

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.tip.digest)
        for addr in sorted(self.balances):
            h.update(addr + self.balances[addr].to_bytes(32, "big"))
        return h.hexdigest()


# -- golden vectors ---------------------------------------------------------


def format_vector(header: BlockHeader, nonce: int) -> str:
    return f"{header.encode().hex()} {nonce:016x} {hash_header(header, nonce).hex()}"


def write_golden_vectors(path: str | Path, cases: Iterable[tuple[BlockHeader, int]]) -> int:
    lines = [format_vector(h, n) for h, n in cases]
    Path(path).write_text("\n".join(lines) + "\n")
    return len(lines)


def check_golden_vectors(path: str | Path) -> list[tuple[int, str, str]]:
    """Return ``(line_no, expected, actual)`` for every mismatching vector."""
    failures = []
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        header_hex, nonce_hex, digest_hex = line.split()
        header = BlockHeader.decode(bytes.fromhex(header_hex))
        actual = hash_header(header, int(nonce_hex, 16)).hex()
        if actual != digest_hex.lower():
            failures.append((no, digest_hex, actual))
    return failures
