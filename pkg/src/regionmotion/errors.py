"""Exception hierarchy.

Errors fall into two families that the command-line front end maps to
distinct exit codes: :class:`DataError` for malformed or mismatched inputs
and :class:`NumericalError` for degenerate geometry.
"""


class RegionMotionError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RegionMotionError):
    pass


class NumericalError(RegionMotionError):
    pass


# file formats
class MalformedHeader(DataError):
    pass


class UnsupportedMaxval(DataError):
    pass


class TruncatedData(DataError):
    pass


class BadMagic(DataError):
    pass


class DimOverflow(DataError):
    pass


class IoFailure(DataError):
    pass


# shape / contract mismatches
class GridMismatch(DataError):
    pass


class RegionCountMismatch(DataError):
    pass


class ChannelMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class GridTooSmall(DataError):
    pass


class NotNormalized(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ModelMissing(DataError):
    pass


class SizeTooSmall(DataError):
    pass


class PartsCollide(DataError):
    pass


class OutOfBounds(DataError):
    pass


class NonPositiveScale(DataError):
    pass


# numerical degeneracies
class ZeroMass(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class DegenerateHeatmap(NumericalError):
    pass


class IsotropicCovariance(NumericalError):
    pass


class DegenerateAngle(NumericalError):
    pass


class NotPcaStructured(NumericalError):
    pass


class SingularDriving(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class DegenerateSample(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class MalformedDocument(DataError):
    """A JSON document does not follow the expected schema."""
