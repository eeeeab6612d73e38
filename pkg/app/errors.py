"""Exception hierarchy shared by the physics, search and training layers."""

from typing import Optional


class CoolingError(Exception):
    """Base class for every error raised by the cooling library."""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.step = step

    def with_step(self, step: int) -> "CoolingError":
        """Attach the 1-based round index at which the error surfaced."""
        self.step = step
        return self

    def __str__(self) -> str:
        if self.step is None:
            return self.message
        return f"step {self.step}: {self.message}"


class InvalidParameterError(CoolingError):
    """Physical or numerical input outside its allowed range."""

    exit_code = 2


class CutoffCapError(InvalidParameterError):
    """The Fock cutoff required by tail_tol exceeds the configured cap."""

    exit_code = 3

    def __init__(self, required: int, cap: int, key: str = "cutoff_cap"):
        super().__init__(
            f"thermal tail needs a Fock cutoff of at least {required} but the cap is {cap}; "
            f"raise '{key}' in the config (or pass a larger value) to run this temperature"
        )
        self.required = required
        self.cap = cap


class SequenceParseError(InvalidParameterError):
    """Malformed 0/1 measurement string."""

    def __init__(self, text: str, position: int):
        super().__init__(
            f"invalid character {text[position]!r} at position {position} in sequence {text!r} "
            "(only 0 = UM and 1 = CM are allowed)"
        )
        self.position = position


class DegenerateStateError(CoolingError):
    """An optimal interval was requested on a state with zero average population."""


class MeasurementAnnihilationError(CoolingError):
    """Conditional measurement with (numerically) zero survival probability."""

    def __init__(self, survival: float, threshold: float, step: Optional[int] = None):
        super().__init__(
            f"conditional measurement survival {survival:.3e} is below {threshold:.1e}; "
            "the postselected state is undefined",
            step=step,
        )
        self.survival = survival


class InvalidUseError(CoolingError):
    """A validation-only formula was called outside its domain of validity."""

    exit_code = 2


class SearchGuardError(CoolingError):
    """Exhaustive enumeration requested above the size guard without override."""

    exit_code = 4


class ConfigError(CoolingError):
    """Unreadable, ambiguous or invalid run configuration."""

    exit_code = 2


class CheckpointError(CoolingError):
    """Missing or incompatible policy checkpoint."""

    exit_code = 5
