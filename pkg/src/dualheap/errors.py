"""Exception types shared across the runtime."""


class HeapError(Exception):
    """Base class for all runtime errors."""


class LayoutError(HeapError):
    """Class layout is malformed (overlapping, misaligned or out-of-range fields)."""


class InvalidHandleError(HeapError):
    """Address does not fall inside any heap space."""


class InvalidFieldError(HeapError):
    """Field index out of range or of the wrong kind for the requested access."""


class InvalidSlotError(HeapError):
    """Unknown or already-dropped root slot id."""


class HeapExhaustedError(HeapError):
    """H1 cannot satisfy an allocation even after a full collection."""


class RegionExhaustedError(HeapError):
    """H2 has no free region for the requested allocation."""


class HeapCorruptionError(HeapError):
    """An object walk hit bytes that do not parse as a valid object."""


class ConfigError(HeapError):
    """Configuration violates a structural constraint."""


class TraceError(HeapError):
    """Workload trace is malformed or references undefined entities."""
