"""Solo-versus-collaborative experiments: metrics, CSV/JSON reports and ordering checks."""
from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigInvalid
from .mining import TICKS_PER_SECOND
from .simnet import ScenarioConfig, SimulationResult, run
from .simnet.config import NodeConfig

WEI_PER_ETH = 10**18
MODES = ("solo", "collaborative")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


class IoError(OSError):
    """Report files could not be written."""


def normalize_mode(mode: str) -> str:
    if mode in ("collab", "collaborative"):
        return "collaborative"
    if mode == "solo":
        return "solo"
    raise ConfigInvalid(f"unknown mode {mode!r}")


def wei_to_eth(wei: int) -> str:
    """Exact decimal rendering, so reports never depend on float formatting."""
    sign = "-" if wei < 0 else ""
    whole, frac = divmod(abs(wei), WEI_PER_ETH)
    return f"{sign}{whole}.{frac:018d}"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    nodes: tuple[NodeConfig, ...]
    blocks_target: int
    mode: str = "solo"
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    base: Optional[ScenarioConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if self.blocks_target < 1:
            raise ConfigInvalid("blocks_target must be >= 1")
        if not self.seeds:
            raise ConfigInvalid("at least one seed is required")
        if self.mode == "collaborative":
            seeking = [n for n in self.nodes if n.initial_role == "seeking"]
            if len(seeking) < 2:
                raise ConfigInvalid("collaborative mode needs at least two collaborator-seeking nodes")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, mode: str, seeds: Sequence[int] = DEFAULT_SEEDS,
                    blocks_target: Optional[int] = None) -> "ScenarioSpec":
        blocks = cfg.blocks_target if blocks_target is None else blocks_target
        return cls(cfg.name, cfg.nodes, blocks, mode, tuple(seeds), cfg)

    def scenario(self) -> ScenarioConfig:
        base = self.base or ScenarioConfig(nodes=self.nodes)
        cfg = replace(base, name=self.name, nodes=self.nodes, blocks_target=self.blocks_target)
        if self.mode == "solo":
            cfg = cfg.with_roles("solo")
        return cfg.validate()


@dataclass
class ExperimentMetrics:
    scenario: str
    mode: str
    seed: int
    node_class: dict[str, str]
    per_miner_reward: dict[str, int]  # wei
    rate: dict[str, float]  # calibrated nonces per second
    reward_mean: dict[str, float] = field(default_factory=dict)  # ETH, per class
    reward_std: dict[str, float] = field(default_factory=dict)
    eth_per_ghz: dict[str, float] = field(default_factory=dict)
    hashrate_share: dict[str, float] = field(default_factory=dict)  # analytic
    empirical_share: dict[str, float] = field(default_factory=dict)
    blocks_won: dict[str, int] = field(default_factory=dict)
    group_blocks: int = 0
    nonces: dict[str, int] = field(default_factory=dict)
    elapsed_virtual_time: int = 0
    weak_blocks: int = 0
    frozen: int = 0
    fingerprint: str = ""

    @property
    def total_nonces(self) -> int:
        return sum(self.nonces.values())

    @property
    def energy_per_weak_block(self) -> Optional[float]:
        """Network-wide hashes spent per block won by the weak class."""
        return self.total_nonces / self.weak_blocks if self.weak_blocks else None

    def class_rewards(self, klass: str) -> list[float]:
        return [self.per_miner_reward[n] / WEI_PER_ETH for n, c in sorted(self.node_class.items()) if c == klass]


def node_rate(node: NodeConfig, cfg: ScenarioConfig) -> float:
    return TICKS_PER_SECOND / (node.nonce_delay + cfg.base_hash_cost)


def hashrate_share(spec: ScenarioSpec | ScenarioConfig) -> dict[str, float]:
    """Analytic share of total hashrate held by each node class."""
    cfg = spec.scenario() if isinstance(spec, ScenarioSpec) else spec
    totals: dict[str, float] = {}
    for n in cfg.nodes:
        totals[n.node_class] = totals.get(n.node_class, 0.0) + node_rate(n, cfg)
    grand = sum(totals.values())
    return {k: v / grand for k, v in sorted(totals.items())}


def _class_stats(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    return statistics.fmean(values), (statistics.pstdev(values) if len(values) > 1 else 0.0)


def run_experiment(spec: ScenarioSpec, seed: int) -> ExperimentMetrics:
    return measure(spec.mode, run(spec.scenario(), seed))


def measure(mode: str, result: SimulationResult) -> ExperimentMetrics:
    """Reduce one finished simulation to its reward, efficiency and hashrate metrics."""
    cfg, seed = result.scenario, result.seed
    classes = {n.id: n.node_class for n in cfg.nodes}
    rates = {n.id: node_rate(n, cfg) for n in cfg.nodes}
    # rewards = wallet balance plus allocations not yet withdrawn (from the audit log)
    pending: dict[str, int] = {}
    for rec in result.audit.events("reward"):
        pending[rec["miner"]] = pending.get(rec["miner"], 0) + rec["details"]["amount"]
    for rec in result.audit.events("withdrawal_signed"):
        pending[rec["miner"]] -= rec["details"]["amount"]
    rewards = {
        n: result.ledger.balance(result.wallets[n]) + pending.get(n, 0) for n in classes
    }
    frozen = sum(result.ledger.balance(e) for e in result.group_etherbases.values())
    won = result.blocks_won()
    group_ebs = set(result.group_etherbases.values())
    nonces = {n: s.nonces for n, s in result.stats.items()}
    total = sum(nonces.values()) or 1
    m = ExperimentMetrics(
        scenario=cfg.name, mode=normalize_mode(mode), seed=seed, node_class=classes,
        per_miner_reward=rewards, rate=rates, blocks_won=won, nonces=nonces,
        elapsed_virtual_time=result.elapsed, frozen=frozen, fingerprint=result.fingerprint(),
        group_blocks=sum(1 for _, _, b in result.block_miners if b in group_ebs),
        weak_blocks=sum(1 for _, miner, _ in result.block_miners if classes[miner] == "weak"),
    )
    unit = min(rates.values())
    for n in classes:
        m.eth_per_ghz[n] = rewards[n] / WEI_PER_ETH / (rates[n] / unit)
    for klass in sorted(set(classes.values())):
        m.reward_mean[klass], m.reward_std[klass] = _class_stats(m.class_rewards(klass))
        m.empirical_share[klass] = sum(v for n, v in nonces.items() if classes[n] == klass) / total
    m.hashrate_share = hashrate_share(cfg)
    return m


def run_many(spec: ScenarioSpec, jobs: int = 1) -> list[ExperimentMetrics]:
    """One independent simulation per seed; results come back in seed order."""
    if jobs > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_experiment, [spec] * len(spec.seeds), spec.seeds))
    return [run_experiment(spec, s) for s in spec.seeds]


# -- reporting -------------------------------------------------------------------


def summarize(metrics: Sequence[ExperimentMetrics]) -> dict:
    """Across-seed statistics per mode and class; the basis of ``summary.json``."""
    out: dict = {"modes": {}}
    for mode in MODES:
        ms = sorted((m for m in metrics if m.mode == mode), key=lambda m: m.seed)
        if not ms:
            continue
        classes = sorted({c for m in ms for c in m.node_class.values()})
        per_class = {}
        for klass in classes:
            pooled = [r for m in ms for r in m.class_rewards(klass)]
            mean, std = _class_stats(pooled)
            seed_means = [m.reward_mean[klass] for m in ms]
            seed_stds = [m.reward_std[klass] for m in ms]
            eff = [
                statistics.fmean(v for n, v in sorted(m.eth_per_ghz.items()) if m.node_class[n] == klass)
                for m in ms
            ]
            per_class[klass] = {
                "reward_mean": mean,
                "reward_std": std,
                "reward_cv": std / mean if mean else None,
                "seed_reward_mean": seed_means,
                "seed_reward_std": seed_stds,
                "eth_per_ghz_mean": statistics.fmean(eff),
                "seed_eth_per_ghz": eff,
                "hashrate_share": ms[0].hashrate_share.get(klass, 0.0),
                "empirical_share": statistics.fmean(m.empirical_share.get(klass, 0.0) for m in ms),
                "blocks_won": sum(v for m in ms for n, v in m.blocks_won.items() if m.node_class[n] == klass),
            }
        weak_blocks = sum(m.weak_blocks for m in ms)
        out["modes"][mode] = {
            "seeds": [m.seed for m in ms],
            "classes": per_class,
            "blocks": [sum(m.blocks_won.values()) for m in ms],
            "group_blocks": [m.group_blocks for m in ms],
            "total_nonces": [m.total_nonces for m in ms],
            "weak_blocks": [m.weak_blocks for m in ms],
            "energy_per_weak_block": (sum(m.total_nonces for m in ms) / weak_blocks) if weak_blocks else None,
            "elapsed_virtual_time": [m.elapsed_virtual_time for m in ms],
            "frozen_wei": [m.frozen for m in ms],
            "fingerprints": [m.fingerprint for m in ms],
        }
    return out


def emit_report(metrics: Sequence[ExperimentMetrics], out_dir: str | Path) -> list[Path]:
    if not metrics:
        raise ValueError("emit_report needs at least one metrics record")
    out = Path(out_dir)
    ordered = sorted(metrics, key=lambda m: (MODES.index(m.mode), m.seed))
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "rewards.csv", out / "efficiency.csv", out / "hashrate.csv", out / "summary.json"]
        with paths[0].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "class", "mode", "seed", "reward"])
            for m in ordered:
                for n in sorted(m.node_class):
                    w.writerow([n, m.node_class[n], m.mode, m.seed, wei_to_eth(m.per_miner_reward[n])])
        with paths[1].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "class", "mode", "seed", "eth_per_ghz"])
            for m in ordered:
                for n in sorted(m.node_class):
                    w.writerow([n, m.node_class[n], m.mode, m.seed, repr(m.eth_per_ghz[n])])
        with paths[2].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "seed", "class", "analytic_share", "empirical_share"])
            for m in ordered:
                for klass in sorted(m.hashrate_share):
                    w.writerow([m.mode, m.seed, klass, repr(m.hashrate_share[klass]),
                                repr(m.empirical_share.get(klass, 0.0))])
        paths[3].write_text(json.dumps(summarize(ordered), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from None
    return paths


# -- ordering checks -------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def check_orderings(summary: dict, strong: str = "strong", weak: str = "weak") -> list[Check]:
    """Evaluate the solo-vs-collaborative orderings on a combined summary."""
    modes = summary["modes"]
    solo, collab = modes.get("solo"), modes.get("collaborative")
    checks: list[Check] = []
    if solo:
        s, w = solo["classes"][strong], solo["classes"][weak]
        ratio = s["reward_mean"] / w["reward_mean"] if w["reward_mean"] else float("inf")
        checks.append(Check("solo_strong_over_weak", ratio >= 2.0, f"ratio {ratio:.3f} (need >= 2.0)"))
        cv = w["reward_cv"] if w["reward_cv"] is not None else 0.0
        checks.append(Check("solo_weak_cv", cv >= 0.25, f"cv {cv:.3f} (need >= 0.25)"))
    if collab:
        w = collab["classes"][weak]
        rel = [sd / mu if mu else float("inf") for mu, sd in zip(w["seed_reward_mean"], w["seed_reward_std"])]
        checks.append(Check("collab_weak_equalized", all(r <= 0.05 for r in rel),
                            "per-seed std/mean " + ", ".join(f"{r:.4f}" for r in rel)))
    if solo and collab:
        ws, wc = solo["classes"][weak], collab["classes"][weak]
        ss, sc = solo["classes"][strong], collab["classes"][strong]
        up = sum(c > s for s, c in zip(ws["seed_reward_mean"], wc["seed_reward_mean"]))
        down = sum(c < s for s, c in zip(ss["seed_reward_mean"], sc["seed_reward_mean"]))
        n = len(ws["seed_reward_mean"])
        need = max(1, n - 1)
        checks.append(Check("weak_gain", up >= need, f"{up}/{n} seeds (need {need})"))
        checks.append(Check("strong_loss", down >= need, f"{down}/{n} seeds (need {need})"))
        checks.append(Check("weak_efficiency_up", wc["eth_per_ghz_mean"] > ws["eth_per_ghz_mean"],
                            f"{wc['eth_per_ghz_mean']:.4f} vs solo {ws['eth_per_ghz_mean']:.4f}"))
        checks.append(Check("strong_efficiency_down", sc["eth_per_ghz_mean"] < ss["eth_per_ghz_mean"],
                            f"{sc['eth_per_ghz_mean']:.4f} vs solo {ss['eth_per_ghz_mean']:.4f}"))
        es, ec = solo["energy_per_weak_block"], collab["energy_per_weak_block"]
        ok = es is not None and ec is not None and ec < es
        checks.append(Check("energy_proxy_down", ok, f"collab {ec} vs solo {es}"))
    return checks


def load_summary(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    return json.loads(p.read_text())


def merge_summaries(*summaries: dict) -> dict:
    merged: dict = {"modes": {}}
    for s in summaries:
        merged["modes"].update(s["modes"])
    return merged


def compare(baseline: str | Path, candidate: str | Path) -> list[Check]:
    return check_orderings(merge_summaries(load_summary(baseline), load_summary(candidate)))


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1..5"`` or ``"1,2,7"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigInvalid(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigInvalid("empty seed list")
    return seeds


def iter_checks(checks: Iterable[Check]) -> Iterable[str]:
    for c in checks:
        yield f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}"
