"""Deterministic offline CBDC simulator with an adversary harness."""

from .adversary import (
    AttackKind,
    AttackOutcome,
    classify,
    emit_matrix,
    run_attack,
    run_batch,
    run_linkage_experiment,
    trace_attempt,
)
from .funds import Coin, TransactionStatement, TransferChain, TransferRecord, verify_chain
from .netsim import Network
from .scenario import audit_trace, load_config, run_scenario
from .trust_anchor import TrustAnchor
from .wallet import TeeMode, Wallet
from .world import World, WorldConfig

__version__ = "0.1.0"

__all__ = [
    "AttackKind",
    "AttackOutcome",
    "Coin",
    "Network",
    "TeeMode",
    "TransactionStatement",
    "TransferChain",
    "TransferRecord",
    "TrustAnchor",
    "Wallet",
    "World",
    "WorldConfig",
    "audit_trace",
    "classify",
    "emit_matrix",
    "load_config",
    "run_attack",
    "run_batch",
    "run_linkage_experiment",
    "run_scenario",
    "trace_attempt",
    "verify_chain",
]
