"""Exception hierarchy shared by all modules.

Every library error derives from :class:`WelfarecastError` and carries a
distinct process exit code so the CLI can map failures one-to-one onto
shell-visible statuses (documented in ``welfarecast --help``).
"""

from __future__ import annotations


class WelfarecastError(Exception):
    """Base class for all package errors."""

    exit_code = 64


# -- ingest ---------------------------------------------------------------

class SchemaError(WelfarecastError):
    """A CSV header is missing columns or has them renamed."""

    exit_code = 10


class ReferentialError(WelfarecastError):
    """A row references a key that does not exist in its parent table."""

    exit_code = 11


class DuplicateDateError(WelfarecastError):
    """More than one weather record for the same (cell, date)."""

    exit_code = 12


class DimensionError(WelfarecastError):
    """An image feature row does not carry the expected number of columns."""

    exit_code = 13


class NonFiniteError(WelfarecastError):
    """A feature value is NaN or infinite."""

    exit_code = 14


# -- welfare --------------------------------------------------------------

class NoCommonAssetsError(WelfarecastError):
    """No asset appears in both survey sources."""

    exit_code = 20


class DegenerateMatrixError(WelfarecastError):
    """All asset columns are constant; no principal component exists."""

    exit_code = 21


class MissingAssetError(WelfarecastError):
    """An inventory does not cover every asset the index model requires."""

    exit_code = 22


class EmptyGroupError(WelfarecastError):
    """No household records for the requested enumeration-area visit."""

    exit_code = 23


class NonpositiveConsumptionError(WelfarecastError):
    """A per-capita consumption value is zero or negative."""

    exit_code = 24


# -- weather --------------------------------------------------------------

class EmptySeriesError(WelfarecastError):
    """Quantiles requested for an empty series."""

    exit_code = 30


class InsufficientCoverageError(WelfarecastError):
    """A weather window has fewer daily records than required."""

    exit_code = 31

    def __init__(self, message: str, *, window: int | None = None,
                 variable: str | None = None):
        super().__init__(message)
        self.window = window
        self.variable = variable


# -- composite ------------------------------------------------------------

class ShapeMismatchError(WelfarecastError):
    """Tile observations disagree on width, height or band set."""

    exit_code = 35


class SizeError(WelfarecastError):
    """A tile has the wrong pixel dimensions for the requested crop."""

    exit_code = 36


# -- regress --------------------------------------------------------------

class MissingBlockError(WelfarecastError):
    """A feature block enabled in the configuration is not available."""

    exit_code = 40


class SingularSystemError(WelfarecastError):
    """The ridge normal equations are singular (collinear features, lambda 0)."""

    exit_code = 41


class TooFewGroupsError(WelfarecastError):
    """Fewer distinct enumeration areas than cross-validation folds."""

    exit_code = 42


class MissingFeatureError(WelfarecastError):
    """Prediction rows do not carry every feature the model was trained on."""

    exit_code = 43


# -- diagnose -------------------------------------------------------------

class DegenerateTargetError(WelfarecastError):
    """The target has zero variance, so R-squared is undefined."""

    exit_code = 50


class EmptyError(WelfarecastError):
    """An ECDF was requested for an empty sample."""

    exit_code = 51


# -- gridmap --------------------------------------------------------------

class InvalidSpecError(WelfarecastError):
    """A grid bounding box or cell size is malformed."""

    exit_code = 55


class ConfigMismatchError(WelfarecastError):
    """Model feature configuration disagrees with the supplied cell features."""

    exit_code = 56


class IoError(WelfarecastError):
    """A file could not be read or written."""

    exit_code = 57


# -- synth / cli ----------------------------------------------------------

class ConfigError(WelfarecastError):
    """A run or scenario configuration value is invalid."""

    exit_code = 60


def exit_code_table() -> list[tuple[int, str]]:
    """All (exit_code, error name) pairs, sorted by code, for CLI help."""
    rows = []
    for obj in globals().values():
        if (isinstance(obj, type) and issubclass(obj, WelfarecastError)
                and obj is not WelfarecastError):
            rows.append((obj.exit_code, obj.__name__))
    rows.sort()
    return rows
