"""Jaynes-Cummings model parameters, thermal resonator states and scalar observables.

Internal units: frequencies in units of omega_a, times in units of 1/omega_a. Temperature only
enters through the dimensionless inverse temperature x = hbar*omega_a / (k_B*T).
"""

import logging
import math
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator, model_validator

from app.errors import CutoffCapError, DegenerateStateError, InvalidParameterError

logger = logging.getLogger(__name__)

# CODATA 2018, 12 significant digits
HBAR = 1.05457181700e-34  # J s
K_B = 1.38064900000e-23  # J / K

DEFAULT_TAIL_TOL = 1e-12
DEFAULT_CUTOFF_CAP = 4096
NORMALIZATION_TOL = 1e-12


def inverse_temperature(temperature_kelvin: float, omega_a: float) -> float:
    """Convert an SI temperature into x = hbar*omega_a / (k_B*T)."""
    if temperature_kelvin <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {temperature_kelvin} K")
    if omega_a <= 0:
        raise InvalidParameterError(f"omega_a must be positive, got {omega_a}")
    return HBAR * omega_a / (K_B * temperature_kelvin)


class ModelParams(BaseModel):
    """Coupling g and detuning delta in units of omega_a, plus omega_a itself (rad/s)."""

    model_config = ConfigDict(frozen=True)

    g: float
    delta: float = 0.0
    omega_a: float = 1.4e9

    @model_validator(mode="after")
    def _check_ranges(self) -> "ModelParams":
        if not self.g > 0:
            raise InvalidParameterError(f"coupling g must be positive, got {self.g}")
        if not self.omega_a > 0:
            raise InvalidParameterError(f"omega_a must be positive, got {self.omega_a}")
        if not math.isfinite(self.delta):
            raise InvalidParameterError(f"detuning must be finite, got {self.delta}")
        return self


class ThermalSpec(BaseModel):
    """Thermal initial state, given by x directly or derived from a temperature in kelvin."""

    model_config = ConfigDict(frozen=True)

    x: float
    temperature_kelvin: Optional[float] = None

    @model_validator(mode="after")
    def _check_x(self) -> "ThermalSpec":
        if not (self.x > 0 and math.isfinite(self.x)):
            raise InvalidParameterError(f"inverse temperature x must be positive, got {self.x}")
        return self

    @classmethod
    def from_temperature(cls, temperature_kelvin: float, omega_a: float) -> "ThermalSpec":
        return cls(
            x=inverse_temperature(temperature_kelvin, omega_a),
            temperature_kelvin=temperature_kelvin,
        )

    @property
    def mean_occupation(self) -> float:
        """Untruncated Bose-Einstein mean 1/(e^x - 1)."""
        return 1.0 / math.expm1(self.x)


class PopulationState(BaseModel):
    """
    Diagonal Fock-basis resonator state.

    Attributes:
        populations: p_0 .. p_{n_c}, read-only float64 array summing to one
        survival: cumulative conditional-measurement success probability P_g
        thermal_x: x of the thermal state this was built from; None once a map has acted
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    populations: np.ndarray
    survival: float = 1.0
    thermal_x: Optional[float] = None

    @field_validator("populations", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64).reshape(-1)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _check_distribution(self) -> "PopulationState":
        p = self.populations
        if p.size == 0:
            raise InvalidParameterError("population vector is empty")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidParameterError("populations must be finite and non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidParameterError(f"populations sum to {total!r}, expected 1 within 1e-12")
        if not 0.0 < self.survival <= 1.0:
            raise InvalidParameterError(f"survival probability must lie in (0, 1], got {self.survival}")
        return self

    @field_serializer("populations")
    def _serialize_populations(self, populations: np.ndarray) -> list:
        return populations.tolist()

    @classmethod
    def from_populations(cls, values, survival: float = 1.0) -> "PopulationState":
        return cls(populations=values, survival=survival)

    @classmethod
    def pure(cls, n: int, n_cutoff: Optional[int] = None) -> "PopulationState":
        """Fock state |n> on levels 0..n_cutoff (default n_cutoff = n)."""
        if n < 0:
            raise InvalidParameterError(f"Fock index must be non-negative, got {n}")
        n_cutoff = n if n_cutoff is None else n_cutoff
        if n_cutoff < n:
            raise InvalidParameterError(f"cutoff {n_cutoff} is below the occupied level {n}")
        p = np.zeros(n_cutoff + 1)
        p[n] = 1.0
        return cls(populations=p)

    @classmethod
    def _trusted(cls, populations: np.ndarray, survival: float) -> "PopulationState":
        # Map outputs are normalized by construction; skip re-validation.
        populations.flags.writeable = False
        return cls.model_construct(populations=populations, survival=survival, thermal_x=None)

    @property
    def n_cutoff(self) -> int:
        return self.populations.size - 1

    def extended(self, n_cutoff: int) -> "PopulationState":
        """Same state padded with empty Fock levels up to n_cutoff."""
        if n_cutoff < self.n_cutoff:
            raise InvalidParameterError(f"cannot shrink cutoff from {self.n_cutoff} to {n_cutoff}")
        p = np.zeros(n_cutoff + 1)
        p[: self.populations.size] = self.populations
        return PopulationState(populations=p, survival=self.survival, thermal_x=self.thermal_x)


def required_cutoff(x: float, tail_tol: float) -> int:
    """Smallest n_c whose truncated geometric tail e^{-x(n_c+1)} is below tail_tol."""
    n_c = max(int(math.ceil(-math.log(tail_tol) / x)) - 1, 0)
    while math.exp(-x * (n_c + 1)) >= tail_tol:
        n_c += 1
    while n_c > 0 and math.exp(-x * n_c) < tail_tol:
        n_c -= 1
    return n_c


def thermal_populations(
    spec: ThermalSpec,
    tail_tol: float = DEFAULT_TAIL_TOL,
    cutoff_cap: int = DEFAULT_CUTOFF_CAP,
) -> PopulationState:
    """
    Build the truncated, renormalized thermal distribution p_n ~ exp(-n x).

    Args:
        spec: Thermal specification (x > 0)
        tail_tol: Maximum discarded tail mass before renormalization
        cutoff_cap: Largest admissible Fock cutoff

    Returns:
        PopulationState with survival 1 and thermal_x = spec.x
    """
    if not 0.0 < tail_tol < 1.0:
        raise InvalidParameterError(f"tail_tol must lie in (0, 1), got {tail_tol}")

    n_c = required_cutoff(spec.x, tail_tol)
    if n_c > cutoff_cap:
        raise CutoffCapError(required=n_c, cap=cutoff_cap)
    if n_c > 0.8 * cutoff_cap:
        logger.warning("Fock cutoff %d is close to the cap %d", n_c, cutoff_cap)

    weights = np.exp(-spec.x * np.arange(n_c + 1, dtype=np.float64))
    populations = weights / weights.sum()
    logger.debug("thermal state x=%.6g cutoff=%d nbar=%.6g", spec.x, n_c, float(np.arange(n_c + 1) @ populations))
    return PopulationState(populations=populations, survival=1.0, thermal_x=spec.x)


def rabi_frequency(n: Union[float, np.ndarray], params: ModelParams) -> Union[float, np.ndarray]:
    """Omega_n = sqrt(g^2 n + delta^2/4); n may be a real dominant index or an array of levels."""
    n_arr = np.asarray(n, dtype=np.float64)
    if np.any(n_arr < 0):
        raise InvalidParameterError(f"photon number must be non-negative, got {n}")
    omega = np.sqrt(params.g**2 * n_arr + params.delta**2 / 4.0)
    return float(omega) if omega.ndim == 0 else omega


def avg_population(state: PopulationState) -> float:
    p = state.populations
    return float(np.arange(p.size, dtype=np.float64) @ p)


def ground_fidelity(state: PopulationState) -> float:
    return float(state.populations[0])


def dominant_index(state: PopulationState) -> float:
    """
    Continuous dominant Fock number n_d = 1/ln(1 + 1/nbar) of the matched thermal state.

    Raises:
        DegenerateStateError: when nbar is exactly zero
    """
    nbar = avg_population(state)
    if nbar <= 0.0:
        raise DegenerateStateError("dominant index undefined: resonator is in its ground state (nbar = 0)")
    return float(1.0 / np.log1p(1.0 / nbar))


def effective_temperature(state: PopulationState, omega_a: float) -> float:
    """T_eff in kelvin of the thermal state sharing this state's nbar."""
    return dominant_index(state) * HBAR * omega_a / K_B
