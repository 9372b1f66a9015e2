"""Exception types shared across the package."""


class SepcostError(Exception):
    """Base class for all library errors."""


class UnsupportedFormat(SepcostError):
    """Audio container or codec the reader does not handle."""


class CorruptFile(SepcostError):
    """File ends early or fails structural validation."""


class IoError(SepcostError):
    """Filesystem write failure."""


class SilentSignal(SepcostError):
    """Operation needs a non-silent signal (RMS above threshold)."""


class SignalTooShort(SepcostError):
    """Signal shorter than the minimum the operation can process."""


class ShapeError(SepcostError):
    """Operand dimensions are inconsistent."""


class NotScalar(SepcostError):
    """Gradient evaluation requires a scalar-valued output."""


class UnsupportedOp(SepcostError):
    """Requested op is outside the engine's op set."""


class DegenerateScale(SepcostError):
    """Cost normalization received a zero or negative initial loss."""


class NoData(SepcostError):
    """Dataset directory contains no usable files."""


class NumericalDivergence(SepcostError):
    """Training produced a non-finite loss."""


class IncompatibleCheckpoint(SepcostError):
    """Checkpoint format version does not match this build."""
