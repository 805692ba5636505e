"""Wire messages exchanged between simulated processes, plus a JSON-safe encoder."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Any, Optional

from ..chain import Block, Transaction
from ..coordination import ClockSample, LamportStamp
from ..cvrm import ContributionProof
from ..group import CollabRequest, DeliveredRange
from ..mining import HashrateEstimate, NonceRange
from ..threshold import GroupKeyPair, SecretShare, SignedWithdrawal

NodeId = str


# -- local timers -------------------------------------------------------------

@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class MineTick:
    epoch: int


@dataclass(frozen=True)
class TxTick:
    pass


@dataclass(frozen=True)
class SeekTimer:
    pass


@dataclass(frozen=True)
class FormationDeadline:
    pass


@dataclass(frozen=True)
class JoinDeadline:
    initiator: NodeId


@dataclass(frozen=True)
class MutexRelease:
    group_id: str


@dataclass(frozen=True)
class LeaveTimer:
    pass


@dataclass(frozen=True)
class SettleDeadline:
    group_id: str
    height: int


# -- chain ----------------------------------------------------------------------

@dataclass(frozen=True)
class SubmitBlock:
    block: Block
    miner: NodeId


@dataclass(frozen=True)
class NewBlock:
    block: Block
    height: int
    final: bool = False


@dataclass(frozen=True)
class SubmitWithdrawal:
    group_id: str
    tx: Transaction
    signature: SignedWithdrawal
    public: GroupKeyPair


# -- formation ------------------------------------------------------------------

@dataclass(frozen=True)
class CollabRequestMsg:
    request: CollabRequest


@dataclass(frozen=True)
class CollabAccept:
    sender: NodeId
    hashrate: HashrateEstimate


@dataclass(frozen=True)
class CollabRedirect:
    target: NodeId


@dataclass(frozen=True)
class CollabDecline:
    sender: NodeId


@dataclass(frozen=True)
class FormGroup:
    members: tuple[NodeId, ...]


@dataclass(frozen=True)
class GroupReady:
    group_id: str
    members: tuple[NodeId, ...]
    etherbase: bytes
    public: GroupKeyPair
    share: SecretShare
    delivered: DeliveredRange
    version: int = 0


@dataclass(frozen=True)
class LeaveNotice:
    group_id: str
    node: NodeId


@dataclass(frozen=True)
class Reassign:
    group_id: str
    version: int
    members: tuple[NodeId, ...]
    delivered: DeliveredRange


@dataclass(frozen=True)
class Dissolved:
    group_id: str


# -- in-group coordination -------------------------------------------------------

@dataclass(frozen=True)
class SyncSample:
    group_id: str
    height: int
    round: int
    sample: ClockSample
    pool_len: int
    leaving: bool = False


@dataclass(frozen=True)
class MutexRequestMsg:
    group_id: str
    stamp: LamportStamp


@dataclass(frozen=True)
class MutexReplyMsg:
    group_id: str
    sender: NodeId


@dataclass(frozen=True)
class PoolInsert:
    group_id: str
    index: int
    tx: Transaction


# -- settlement -----------------------------------------------------------------

@dataclass(frozen=True)
class ProofSubmission:
    group_id: str
    version: int
    proof: ContributionProof


@dataclass(frozen=True)
class RewardNotice:
    group_id: str
    height: int
    amount: int


@dataclass(frozen=True)
class WithdrawRequest:
    group_id: str
    miner: NodeId
    amount: int
    to: bytes


@dataclass(frozen=True)
class WithdrawSigned:
    group_id: str
    tx: Transaction
    signature: SignedWithdrawal
    public: GroupKeyPair


@dataclass(frozen=True)
class WithdrawDenied:
    group_id: str
    reason: str


def to_wire(msg: Any) -> Any:
    """JSON-safe rendering of a message as it would travel on the network.

    Delivered ranges are rendered with :meth:`DeliveredRange.to_payload`, which
    carries no information about which partner an extra segment belongs to.
    """
    if isinstance(msg, DeliveredRange):
        return msg.to_payload()
    if isinstance(msg, NonceRange):
        return msg.as_list()
    if isinstance(msg, (bytes, bytearray)):
        return msg.hex()
    if isinstance(msg, enum.Enum):
        return msg.value
    if dataclasses.is_dataclass(msg) and not isinstance(msg, type):
        out = {"type": type(msg).__name__}
        for f in dataclasses.fields(msg):
            out[f.name] = to_wire(getattr(msg, f.name))
        return out
    if isinstance(msg, dict):
        return {str(k): to_wire(v) for k, v in msg.items()}
    if isinstance(msg, (list, tuple)):
        return [to_wire(v) for v in msg]
    return msg


def kind(msg: Any) -> Optional[str]:
    return type(msg).__name__ if msg is not None else None
