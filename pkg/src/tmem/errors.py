"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class TmemError(Exception):
    """Base class for all engine errors."""


# --- validation ---------------------------------------------------------------


class ValidationError(TmemError):
    """Input failed a structural invariant."""


class EmptySteps(ValidationError):
    pass


class NonContiguousIndices(ValidationError):
    pass


class StepCapExceeded(ValidationError):
    def __init__(self, count: int, cap: int) -> None:
        super().__init__(f"trajectory has {count} steps, cap is {cap}")
        self.count = count
        self.cap = cap


class DuplicateId(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# --- store --------------------------------------------------------------------


class StoreError(TmemError):
    pass


class DanglingProvenance(StoreError):
    pass


class DimensionMismatch(StoreError):
    pass


class ProvenanceLoss(StoreError):
    pass


class UnknownId(StoreError):
    pass


class StoreIoError(StoreError):
    """Filesystem failure while reading or writing the store."""


class StoreLocked(StoreIoError):
    pass


# --- gateway ------------------------------------------------------------------


class GatewayError(TmemError):
    pass


class ProviderUnavailable(GatewayError):
    pass


class SchemaViolation(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class ScriptedMiss(GatewayError):
    """The scripted provider has no canned payload for a request."""


class EmptyText(ValidationError):
    pass


# --- pipeline -----------------------------------------------------------------


class ConsolidationError(TmemError):
    pass


class EmptyQuery(ValidationError):
    pass


class Busy(TmemError):
    """An exclusive operation (such as consolidation) is already running."""
