"""Exception hierarchy shared across the package.

Everything raised on purpose derives from CmcrdError so callers (and the CLI)
can tell deliberate failures from genuine bugs.
"""

from __future__ import annotations


class CmcrdError(Exception):
    """Base class for all deliberate errors raised by this package."""


class DataError(CmcrdError):
    """Problems with dataset content or layout."""


class LoadError(DataError):
    """A dataset file is missing or unreadable."""


class SchemaError(DataError):
    """A dataset file exists but its content violates the documented schema."""


class PairingError(DataError):
    """Modalities disagree on sample counts for some (subject, session, trial)."""


class ProtocolError(CmcrdError):
    """A split request cannot be satisfied by the dataset geometry."""


class ConfigError(CmcrdError):
    """Invalid experiment configuration (unknown key, bad value, bad combination)."""


class TrainingError(CmcrdError):
    """Training aborted (non-finite loss or gradient); message carries provenance."""


class SamplingError(CmcrdError):
    """Negative sampling cannot satisfy the requested draw."""
