"""freshsim: trace-driven simulation of memory-freshness protection.

The package models a trusted version-store device holding per-block write
counters in a tri-level compressed page format, the host engine that caches
and verifies that metadata, conventional baselines (integrity-only and a
counter hash tree), synthetic trace generation, and the probabilistic
analysis of version exhaustion and replay success.
"""

from .core import (
    AddressRangeError,
    ConfigError,
    EncodingError,
    Geometry,
    RandomSource,
    SecurityParams,
    SimError,
    addr_decompose,
    pack_full,
    stealth_add,
    unpack_full,
)
from .version_store import (
    FLAT,
    FULL,
    UNEVEN,
    CapacityError,
    UpdateResult,
    VersionStore,
    compression_ratio,
    entry_cost_bytes,
    flat_array_bytes,
)
from .engine import (
    AccessOutcome,
    EngineConfig,
    FreshnessViolation,
    FunctionalBlockStore,
    HostEngine,
    LayoutError,
    MemoryLayout,
    Record,
    SimulationHalted,
    UvOverflowError,
    mac_block_addr,
)
from .baselines import (
    CiEngine,
    CounterTreeConfig,
    CounterTreeState,
    MerkleEngine,
    NoneEngine,
    merkle_access,
    tree_depth,
)
from .traces import (
    PATTERN_KINDS,
    PatternSpec,
    TraceEvent,
    TraceParseError,
    generate,
    load_trace,
    parse_trace,
    save_trace,
)
from .analysis import (
    ExhaustionQuery,
    McEstimate,
    analytic_exhaustion_prob,
    exhaustion_bound,
    mc_exhaustion,
    mc_replay,
    no_reset_prob,
    replay_success_prob,
)

__all__ = [
    "AddressRangeError",
    "ConfigError",
    "EncodingError",
    "Geometry",
    "RandomSource",
    "SecurityParams",
    "SimError",
    "addr_decompose",
    "pack_full",
    "stealth_add",
    "unpack_full",
    "FLAT",
    "FULL",
    "UNEVEN",
    "CapacityError",
    "UpdateResult",
    "VersionStore",
    "compression_ratio",
    "entry_cost_bytes",
    "flat_array_bytes",
    "AccessOutcome",
    "EngineConfig",
    "FreshnessViolation",
    "FunctionalBlockStore",
    "HostEngine",
    "LayoutError",
    "MemoryLayout",
    "Record",
    "SimulationHalted",
    "UvOverflowError",
    "mac_block_addr",
    "CiEngine",
    "CounterTreeConfig",
    "CounterTreeState",
    "MerkleEngine",
    "NoneEngine",
    "merkle_access",
    "tree_depth",
    "PATTERN_KINDS",
    "PatternSpec",
    "TraceEvent",
    "TraceParseError",
    "generate",
    "load_trace",
    "parse_trace",
    "save_trace",
    "ExhaustionQuery",
    "McEstimate",
    "analytic_exhaustion_prob",
    "exhaustion_bound",
    "mc_exhaustion",
    "mc_replay",
    "no_reset_prob",
    "replay_success_prob",
]

__version__ = "0.1.0"
