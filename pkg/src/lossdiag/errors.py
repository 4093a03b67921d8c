"""Exception hierarchy shared across the package.

Every error raised on purpose derives from LossDiagError so the CLI can map
failures onto its exit codes: UsageError -> 1, ValidationError (and OSError)
-> 2, anything else -> 3.
"""

from __future__ import annotations


class LossDiagError(Exception):
    """Base class for all errors raised by lossdiag."""


class UsageError(LossDiagError):
    """The caller asked for something the interface does not offer."""


class ValidationError(LossDiagError):
    """Input data violates a documented contract."""


class StoreFormatError(ValidationError):
    """A loss dump or manifest is structurally malformed."""


class BadMagicError(StoreFormatError):
    """File begins with a CELOSS magic of the wrong version."""


class TruncatedDumpError(StoreFormatError):
    """Binary payload is shorter than the header count promises."""


class CountMismatchError(StoreFormatError):
    """Binary payload is longer than the header count promises."""


class ManifestError(ValidationError):
    """Checkpoint manifest fails validation."""


class DegenerateInputError(ValidationError):
    """A statistic is undefined on this input (zero spread, empty group...)."""


class DivergenceError(LossDiagError):
    """Student training produced a non-finite update."""

    def __init__(self, step: int, row: int):
        super().__init__(f"non-finite update at step {step}, context row {row}")
        self.step = step
        self.row = row
