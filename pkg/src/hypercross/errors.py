"""Exception types shared across the package."""


class HypercrossError(Exception):
    """Base class for all package-specific errors."""


class NumericalDomainError(HypercrossError, ArithmeticError):
    """An arcosh/arccos argument fell outside its guard band.

    Signals an invariant violation upstream, not ordinary roundoff (which
    is absorbed silently by clamping within the guard band).
    """


class DegeneratePairError(NumericalDomainError):
    """Exterior angle requested for a coincident or origin-anchored pair."""


class FormatError(HypercrossError, ValueError):
    """A dataset or checkpoint container is malformed (magic, version, size)."""


class ValidationError(HypercrossError, ValueError):
    """A container parsed cleanly but its payload violates the schema."""


class TrainingDivergedError(HypercrossError, ArithmeticError):
    """A non-finite loss was produced during training."""

    def __init__(self, epoch, batch_index, breakdown):
        self.epoch = epoch
        self.batch_index = batch_index
        self.breakdown = breakdown
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch_index}: {breakdown}"
        )


class UndefinedCorrelationError(HypercrossError, ValueError):
    """Rank correlation is undefined (one variable is constant)."""
