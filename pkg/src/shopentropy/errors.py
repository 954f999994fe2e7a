"""Exception hierarchy shared by every module."""

from __future__ import annotations


class ShopEntropyError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ShopEntropyError, ValueError):
    """A raw record failed validation.

    Carries the offending field name and, when known, the 1-based data row
    number of the source file.
    """

    def __init__(self, field: str, message: str, row: int | None = None):
        self.field = field
        self.message = message
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}{field}: {message}")

    def with_row(self, row: int) -> "ValidationError":
        return type(self)(self.field, self.message, row=row)

    def to_record(self) -> dict:
        return {"row": self.row, "field": self.field, "message": self.message}


class TimestampMalformed(ValidationError):
    pass


class AmountMalformed(ValidationError):
    pass


class MccMalformed(ValidationError):
    pass


class DirectionUnknown(ValidationError):
    pass


class MissingField(ValidationError):
    pass


class SchemaMismatch(ShopEntropyError):
    """Input file columns/keys do not match the transaction schema."""


class MixedAccounts(ShopEntropyError, ValueError):
    pass


class EmptySequence(ShopEntropyError, ValueError):
    pass


class SequenceTooShort(ShopEntropyError, ValueError):
    pass


class WindowTooShort(ShopEntropyError, ValueError):
    pass


class OverlappingCohorts(ShopEntropyError, ValueError):
    pass


class EmptyGroup(ShopEntropyError, ValueError):
    pass


class NoSharedAccounts(ShopEntropyError, ValueError):
    pass


class InfeasibleEntropy(ShopEntropyError, ValueError):
    pass


class FitError(ShopEntropyError, ValueError):
    pass


class ConfigError(ShopEntropyError, ValueError):
    """Invalid simulation, generator or CLI configuration."""
