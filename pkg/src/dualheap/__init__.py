"""Dual-heap managed runtime.

A garbage-collected primary heap (H1) for ordinary objects next to a
file-backed, region-based second heap (H2) for cached objects that is
exempt from collection traversal and from serialization, plus a
trace-driven workload harness for desk-scale sensitivity experiments.
"""

from .config import (
    H1Config,
    H2Config,
    MigrationConfig,
    RuntimeConfig,
    SdConfig,
    load_config,
    parse_size,
)
from .errors import (
    ConfigError,
    HeapCorruptionError,
    HeapError,
    HeapExhaustedError,
    InvalidFieldError,
    InvalidHandleError,
    InvalidSlotError,
    LayoutError,
    RegionExhaustedError,
    TraceError,
)
from .metrics import MajorStats, MetricsReport, MinorStats
from .migration import PersistHint
from .objmodel import (
    ClassDescriptor,
    FieldKind,
    FieldSpec,
    HeapLayout,
    SpaceKind,
)
from .runtime import Runtime
from .workload import (
    TraceDriver,
    TraceEvent,
    generate_trace,
    parse_trace,
    run_trace,
)

__all__ = [
    "ClassDescriptor",
    "ConfigError",
    "FieldKind",
    "FieldSpec",
    "H1Config",
    "H2Config",
    "HeapCorruptionError",
    "HeapError",
    "HeapExhaustedError",
    "HeapLayout",
    "InvalidFieldError",
    "InvalidHandleError",
    "InvalidSlotError",
    "LayoutError",
    "MajorStats",
    "MetricsReport",
    "MigrationConfig",
    "MinorStats",
    "PersistHint",
    "RegionExhaustedError",
    "Runtime",
    "RuntimeConfig",
    "SdConfig",
    "SpaceKind",
    "TraceDriver",
    "TraceError",
    "TraceEvent",
    "generate_trace",
    "load_config",
    "parse_size",
    "parse_trace",
    "run_trace",
]

__version__ = "0.1.0"
