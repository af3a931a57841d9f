"""Typed errors shared across the package.

Two broad families matter for the CLI exit codes: DataError (malformed or
inconsistent inputs, exit 3) and NumericError (computation went off the
rails, exit 4).
"""


class BoundsegError(Exception):
    """Base class for all package errors."""


class DataError(BoundsegError):
    """Bad or inconsistent input data."""


class NumericError(BoundsegError):
    """Numerical failure during computation."""


# --- tensor engine ---

class ShapeMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class MissingGradient(NumericError):
    pass


class DivergedTraining(NumericError):
    pass


# --- distance maps ---

class EmptyMask(DataError):
    pass


class EmptySiteSet(DataError):
    pass


# --- contour post-processing ---

class EmptyResult(DataError):
    pass


class DegenerateContour(DataError):
    pass


class OpenRegion(DataError):
    pass


# --- phantom generation ---

class InvalidParams(DataError):
    pass


# --- metrics ---

class TooFewSamples(DataError):
    pass


class ManifestMismatch(DataError):
    pass


# --- file I/O ---

class IoFailure(DataError):
    pass


class MalformedHeader(DataError):
    pass


class TruncatedData(DataError):
    pass


class BadMagic(DataError):
    pass
