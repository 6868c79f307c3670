"""Exception types shared across the package."""


class ThresholdRepError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(ThresholdRepError, ValueError):
    """Operand shapes or tensor-factor labels do not line up."""


class InstanceTooLarge(DimensionError):
    """A requested operator would exceed the total-dimension cap."""


class ValidationError(ThresholdRepError, ValueError):
    """A quantum object failed its numerical invariants."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BoundVacuousError(ThresholdRepError, ValueError):
    """The hedging bound needs k/n strictly above the single-instance value."""


class SolverError(ThresholdRepError, RuntimeError):
    """The SDP solver could not produce a usable answer."""


class ProtocolFormatError(ThresholdRepError, ValueError):
    """A protocol file does not follow the documented JSON schema."""
