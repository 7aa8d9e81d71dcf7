"""Exception hierarchy shared across the package.

Exit-code contract for the CLI: UsageError -> 1, DataError -> 2,
TrainingError -> 3.
"""


class PianodiffError(Exception):
    """Base class for all package errors."""


class UsageError(PianodiffError):
    """Bad invocation: unknown engine, incompatible model/mode, etc."""


class DataError(PianodiffError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """MusicXML (or other input text) could not be parsed."""


class ManifestError(DataError):
    """Label manifest is inconsistent (duplicates, bad indices, ...)."""


class LabelError(ManifestError):
    """A difficulty label is outside its valid range."""


class ConstraintError(DataError):
    """A playability constraint was violated (e.g. >5 notes per hand)."""


class EmptyScoreError(DataError):
    """Operation requires a score with at least one note."""


class TrainingError(PianodiffError):
    """Model training failed (divergence, degenerate folds, ...)."""
