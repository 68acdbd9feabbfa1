"""Exception hierarchy shared across the package."""


class HanoError(Exception):
    """Base class for all package errors."""


class NumericDomainError(HanoError, ValueError):
    """Non-finite or otherwise out-of-domain numeric input."""


class ModelDefinitionError(HanoError, ValueError):
    """Material or network definition that cannot be assembled."""


class ConfigurationError(HanoError, ValueError):
    """Invalid configuration (run config, path config, damage setup)."""


class SimulationError(HanoError, RuntimeError):
    """A stress update failed while simulating a sequence."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class IngestionError(HanoError, ValueError):
    """Base class for dataset / CSV / checkpoint read errors."""


class FormatVersionError(IngestionError):
    """Wrong magic bytes or unsupported format version."""


class TruncatedPayloadError(IngestionError):
    """File ended before the declared payload was read."""


class ShapeMismatchError(IngestionError):
    """Array shapes disagree with the manifest or with each other."""


class CSVFormatError(IngestionError):
    """Malformed CSV input; carries row/column location when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class EmptyWindowError(HanoError, ValueError):
    """Sequence too short to yield any history window."""


class GradientError(HanoError, FloatingPointError):
    """Loss or gradient is non-finite."""


class DegenerateReferenceError(HanoError, ValueError):
    """Reference sequence with zero RMS cannot normalize an error."""


class RolloutError(HanoError, RuntimeError):
    """Autoregressive rollout aborted."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
