"""Exception and warning types shared across the package."""


class GenssmError(Exception):
    """Base class for package errors."""


class SimulationFailure(GenssmError):
    """A simulated draw came out non-finite.

    Carries the time index where the failure occurred.
    """

    def __init__(self, t, message=None):
        self.t = t
        super().__init__(message or f"non-finite draw at time index {t}")


class FilterInfeasible(GenssmError):
    """Rare-event regeneration exceeded its rejection budget."""


class DegenerateWeights(GenssmError):
    """Every particle weight underflowed or was zero."""

    def __init__(self, t=None, message=None):
        self.t = t
        if message is None:
            message = "all particle weights degenerate"
            if t is not None:
                message += f" at time index {t}"
        super().__init__(message)


class NumericalConsistencyError(GenssmError):
    """An internally derived quantity (variance, gain) left its valid range."""


class TrainingDiverged(GenssmError):
    """Network training produced a non-finite loss.

    Carries the epoch index, and the time step for per-step filters.
    """

    def __init__(self, epoch, t=None, message=None):
        self.epoch = epoch
        self.t = t
        if message is None:
            message = f"training loss became non-finite at epoch {epoch}"
            if t is not None:
                message += f" (filter step {t})"
        super().__init__(message)


class DegenerateSummaryError(GenssmError):
    """Summary statistics are undefined for the given input (constant data)."""


class ConfigError(GenssmError):
    """Configuration failed schema validation."""


class IngestionError(GenssmError):
    """A data file could not be parsed; carries the offending row index."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class CheckpointError(GenssmError):
    """Base class for persistence failures."""


class ChecksumError(CheckpointError):
    """Stored payload does not match its recorded checksum."""


class IncompatibleCheckpoint(CheckpointError):
    """Checkpoint format version is not supported by this code."""


class ExtrapolationWarning(UserWarning):
    """A recursion left the region covered by its training data."""
