"""Exception hierarchy shared across the package."""


class AirwayGanError(Exception):
    """Base class for all package errors."""


class InputError(AirwayGanError):
    """Malformed or inconsistent input data (shapes, files, ranges)."""


class ParameterError(AirwayGanError):
    """Invalid parameter combination (scene geometry, fractions, ...)."""


class ConfigurationError(AirwayGanError):
    """Configuration that cannot be realized (resolution vs. architecture, ...)."""


class BackendError(AirwayGanError):
    """External command backend failed; carries the command diagnostics."""

    def __init__(self, message: str, *, command: str | None = None,
                 returncode: int | None = None, stderr: str | None = None):
        super().__init__(message)
        self.command = command
        self.returncode = returncode
        self.stderr = stderr

    def __str__(self) -> str:  # diagnostics belong in the message users see
        base = super().__str__()
        parts = [base]
        if self.command is not None:
            parts.append(f"command: {self.command}")
        if self.returncode is not None:
            parts.append(f"exit code: {self.returncode}")
        if self.stderr:
            parts.append(f"stderr: {self.stderr.strip()}")
        return " | ".join(parts)


class BuildError(AirwayGanError):
    """Dataset build produced no usable records."""


class NumericalError(AirwayGanError):
    """A loss or metric went non-finite; names the offending term."""


class TrainingError(AirwayGanError):
    """Training aborted; references the last good checkpoint if any."""

    def __init__(self, message: str, *, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
