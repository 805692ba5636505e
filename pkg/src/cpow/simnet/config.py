"""Scenario and node configuration, loaded from JSON and validated up front."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigInvalid

ROLES = ("solo", "seeking")
RESERVED_IDS = ("chain", "cvrm")
DEFAULT_BLOCK_REWARD = 2 * 10**18  # wei


@dataclass(frozen=True)
class NodeConfig:
    id: str
    nonce_delay: int = 0  # ticks paid before each nonce check
    clock_skew: int = 0
    initial_role: str = "solo"
    node_class: str = "default"
    fabricate: int = 0  # overlap digests to forge in each contribution proof
    leave_at: Optional[int] = None  # tick after which the node quits its group

    def validate(self) -> None:
        if not self.id or self.id in RESERVED_IDS:
            raise ConfigInvalid(f"bad node id {self.id!r}")
        if self.nonce_delay < 0:
            raise ConfigInvalid(f"{self.id}: nonce_delay must be >= 0")
        if self.initial_role not in ROLES:
            raise ConfigInvalid(f"{self.id}: role must be one of {ROLES}")
        if self.fabricate < 0:
            raise ConfigInvalid(f"{self.id}: fabricate must be >= 0")
        if self.leave_at is not None and self.leave_at < 0:
            raise ConfigInvalid(f"{self.id}: leave_at must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: tuple[NodeConfig, ...]
    name: str = "scenario"
    difficulty: int = 12
    blocks_target: int = 50
    block_reward: int = DEFAULT_BLOCK_REWARD
    group_target_size: int = 6
    overlap_fraction: float = 0.01
    threshold: Optional[int] = None
    latency_base: int = 1000
    latency_jitter: int = 500
    n_total: int = 2**24
    tolerance: float = 1.5
    sample_stride: int = 1
    progress_interval: Optional[int] = None  # nonces per mining slice; stride x 16 if unset
    base_hash_cost: int = 25
    formation_timeout: int = 200_000
    formation_jitter: int = 50_000
    tx_interval: int = 250_000
    max_block_txs: int = 16
    audit_rate: float = 0.05
    settle_timeout: int = 100_000
    cs_hold: int = 100
    outlier_bound: Optional[float] = None
    max_ticks: int = 3600 * 10**6

    @property
    def slice_size(self) -> int:
        return self.progress_interval or self.sample_stride * 16

    def node(self, node_id: str) -> NodeConfig:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def validate(self) -> "ScenarioConfig":
        if not self.nodes:
            raise ConfigInvalid("scenario needs at least one node")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("node ids must be unique")
        for n in self.nodes:
            n.validate()
            if n.nonce_delay + self.base_hash_cost <= 0:
                raise ConfigInvalid(f"{n.id}: per-nonce cost must be positive")
        if self.blocks_target < 1:
            raise ConfigInvalid("blocks_target must be >= 1")
        if not 0 <= self.difficulty <= 256:
            raise ConfigInvalid("difficulty must lie in [0, 256]")
        if self.block_reward < 0:
            raise ConfigInvalid("block_reward must be >= 0")
        if self.group_target_size < 2:
            raise ConfigInvalid("group_target_size must be >= 2")
        if not 0 <= self.overlap_fraction < 1:
            raise ConfigInvalid("overlap_fraction must lie in [0, 1)")
        if self.threshold is not None and self.threshold < 2:
            raise ConfigInvalid("threshold must be >= 2")
        if self.latency_base < 0 or self.latency_jitter < 0:
            raise ConfigInvalid("latency parameters must be >= 0")
        if self.n_total < self.group_target_size:
            raise ConfigInvalid("n_total must cover every group member")
        if self.tolerance < 1:
            raise ConfigInvalid("tolerance is a ratio >= 1")
        if self.sample_stride < 1 or self.slice_size < 1:
            raise ConfigInvalid("sample_stride and progress_interval must be >= 1")
        if self.base_hash_cost < 0:
            raise ConfigInvalid("base_hash_cost must be >= 0")
        if not 0 <= self.audit_rate <= 1:
            raise ConfigInvalid("audit_rate must lie in [0, 1]")
        for name in ("formation_timeout", "formation_jitter", "tx_interval", "settle_timeout", "cs_hold", "max_ticks"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        if self.tx_interval == 0:
            raise ConfigInvalid("tx_interval must be positive")
        if self.max_block_txs < 0:
            raise ConfigInvalid("max_block_txs must be >= 0")
        return self

    def with_roles(self, role: str) -> "ScenarioConfig":
        return replace(self, nodes=tuple(replace(n, initial_role=role) for n in self.nodes))

    # -- JSON ----------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nodes"] = [asdict(n) for n in self.nodes]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("scenario must be a JSON object")
        data = dict(data)
        latency = data.pop("latency", None)
        if isinstance(latency, dict):
            data.setdefault("latency_base", latency.get("base", 1000))
            data.setdefault("latency_jitter", latency.get("jitter", 500))
        data.pop("seed", None)  # seeds are supplied per run
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown scenario keys: {sorted(unknown)}")
        node_keys = {f.name for f in fields(NodeConfig)}
        try:
            nodes = []
            for raw in data.pop("nodes", []):
                extra = set(raw) - node_keys
                if extra:
                    raise ConfigInvalid(f"unknown node keys: {sorted(extra)}")
                nodes.append(NodeConfig(**raw))
            cfg = cls(nodes=tuple(nodes), **data)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
