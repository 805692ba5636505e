"""Deterministic discrete-event network simulation hosting the protocol."""
from .config import NodeConfig, ScenarioConfig
from .kernel import LatencyModel, Process, SimEvent, Simulator
from .processes import CHAIN_ID, CVRM_ID, ChainService, CVRMService, MinerNode
from .runner import SimulationResult, build, run

__all__ = [
    "CHAIN_ID",
    "CVRM_ID",
    "ChainService",
    "CVRMService",
    "LatencyModel",
    "MinerNode",
    "NodeConfig",
    "Process",
    "ScenarioConfig",
    "SimEvent",
    "SimulationResult",
    "Simulator",
    "build",
    "run",
]
