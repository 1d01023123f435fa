"""Exception hierarchy shared by all patchmine stages.

The CLI maps these onto process exit codes: ConfigError -> 2,
MissingArtifactError -> 3, NumericalError -> 4.
"""

from __future__ import annotations


class PatchMineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PatchMineError):
    """A configuration value is out of range or inconsistent."""


class MissingArtifactError(PatchMineError):
    """A pipeline stage input is absent; the message names the stage to run."""


class NumericalError(PatchMineError):
    """A numerical routine failed (singular matrix, non-finite result)."""


class FormatError(PatchMineError):
    """A feature file violates the on-disk format contract."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes / version."""


class DimensionMismatchError(FormatError):
    """Feature dimension disagrees between header, manifest or record.

    ``record_index`` is the offending record, or -1 for a header-level
    mismatch.
    """

    def __init__(self, message: str, record_index: int = -1):
        super().__init__(message)
        self.record_index = record_index


class TruncatedPayloadError(FormatError):
    """File ended before the declared payload was read.

    ``record_index`` is the first record that could not be read completely.
    """

    def __init__(self, message: str, record_index: int):
        super().__init__(message)
        self.record_index = record_index


class EmptyElementError(PatchMineError):
    """Pattern retrieval produced no member patches.

    A pattern that passed the mining thresholds always has positive-class
    members, so this signals an index/database mismatch.
    """


class ZeroSupportError(PatchMineError):
    """Confidence was requested for an antecedent with zero support."""


class FactorizationError(NumericalError):
    """Covariance factorization failed; ``suggested_lambda`` would succeed."""

    def __init__(self, message: str, suggested_lambda: float):
        super().__init__(message)
        self.suggested_lambda = suggested_lambda
