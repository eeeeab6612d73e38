"""Conditional (CM) and unconditional (UM) measurement maps and their optimal intervals."""

import logging
import math
from enum import IntEnum
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.errors import (
    DegenerateStateError,
    InvalidParameterError,
    InvalidUseError,
    MeasurementAnnihilationError,
)
from app.physics import ModelParams, PopulationState, avg_population, dominant_index, rabi_frequency

logger = logging.getLogger(__name__)

ANNIHILATION_EPS = 1e-15
DEFAULT_TAU_MAX = 40.0
DEFAULT_GRID_POINTS = 2000
# float64 elements held per (tau x level) block while scanning
SCAN_BLOCK_ELEMENTS = 1 << 22

ArrayLike = Union[float, np.ndarray]


class Strategy(IntEnum):
    """Measurement choice for one round; serialized as 0 (UM) and 1 (CM)."""

    UM = 0
    CM = 1


class IntervalResult(BaseModel):
    """Free-evolution interval before a measurement, in units of 1/omega_a."""

    model_config = ConfigDict(frozen=True)

    tau: float
    method: Literal["analytic", "numeric-grid"] = "analytic"
    nbar_after: Optional[float] = None

    @model_validator(mode="after")
    def _positive(self) -> "IntervalResult":
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidParameterError(f"measurement interval must be positive, got {self.tau}")
        return self


def _check_inputs(n: ArrayLike, tau: ArrayLike):
    n_arr = np.asarray(n, dtype=np.float64)
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(n_arr < 0):
        raise InvalidParameterError("photon number must be non-negative")
    if np.any(tau_arr < 0):
        raise InvalidParameterError("measurement interval must be non-negative")
    return n_arr, tau_arr


def _coefficients(n: ArrayLike, tau: ArrayLike, params: ModelParams):
    """Return (|alpha_n|^2, |beta_n|^2), broadcasting n against tau."""
    n_arr, tau_arr = _check_inputs(n, tau)
    omega = np.sqrt(params.g**2 * n_arr + params.delta**2 / 4.0)
    phase = omega * tau_arr
    sin2 = np.sin(phase) ** 2
    cos2 = np.cos(phase) ** 2
    omega2 = np.broadcast_to(omega**2, sin2.shape)
    nonzero = omega2 > 0

    detuned = np.divide(params.delta**2 / 4.0 * sin2, omega2, out=np.zeros_like(sin2), where=nonzero)
    transfer = np.divide(params.g**2 * n_arr * sin2, omega2, out=np.zeros_like(sin2), where=nonzero)
    alpha = cos2 + detuned

    # |alpha_0|^2 = 1 exactly: the ground level is never depleted
    ground = np.broadcast_to(n_arr == 0, alpha.shape)
    alpha = np.where(ground, 1.0, alpha)
    transfer = np.where(ground, 0.0, transfer)
    return alpha, transfer


def _as_output(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def alpha_sq(n: ArrayLike, tau: ArrayLike, params: ModelParams) -> ArrayLike:
    """Survival coefficient |alpha_n(tau)|^2 = cos^2(Omega_n tau) + (delta^2/4) sin^2(Omega_n tau)/Omega_n^2."""
    return _as_output(_coefficients(n, tau, params)[0])


def beta_sq(n: ArrayLike, tau: ArrayLike, params: ModelParams) -> ArrayLike:
    """Downward-transfer coefficient |beta_n(tau)|^2 = g^2 n sin^2(Omega_n tau)/Omega_n^2."""
    return _as_output(_coefficients(n, tau, params)[1])


def _levels(state: PopulationState) -> np.ndarray:
    return np.arange(state.populations.size, dtype=np.float64)


def _check_tau(tau: float) -> None:
    if not (tau > 0 and math.isfinite(tau)):
        raise InvalidParameterError(f"measurement interval must be positive, got {tau}")


def apply_cm(
    state: PopulationState,
    tau: float,
    params: ModelParams,
    epsilon: float = ANNIHILATION_EPS,
) -> PopulationState:
    """
    Conditional measurement: postselect the detector in |g> after free evolution tau.

    Args:
        state: Current resonator populations
        tau: Free-evolution interval (1/omega_a)
        params: Model parameters
        epsilon: Survival below which the postselected state is undefined

    Returns:
        Renormalized state; survival multiplied by this round's success probability
    """
    _check_tau(tau)
    alpha, _ = _coefficients(_levels(state), tau, params)
    weighted = alpha * state.populations
    round_survival = float(weighted.sum())
    if round_survival <= epsilon:
        raise MeasurementAnnihilationError(round_survival, epsilon)
    return PopulationState._trusted(weighted / round_survival, state.survival * round_survival)


def apply_um(state: PopulationState, tau: float, params: ModelParams) -> PopulationState:
    """
    Unconditional measurement: p_n -> |alpha_n|^2 p_n + |beta_{n+1}|^2 p_{n+1}.

    Inbound transfer from beyond the cutoff is zero since those levels are not tracked, so
    total population is conserved within the truncated space.
    """
    _check_tau(tau)
    alpha, transfer = _coefficients(_levels(state), tau, params)
    p = state.populations
    updated = alpha * p
    updated[:-1] += (transfer * p)[1:]
    return PopulationState._trusted(updated, state.survival)


def tau_opt_cm(state: PopulationState, params: ModelParams) -> IntervalResult:
    """Inverse thermal Rabi frequency 1/(g sqrt(nbar)) of the current state."""
    nbar = avg_population(state)
    if nbar <= 0.0:
        raise DegenerateStateError("CM interval undefined: resonator is in its ground state (nbar = 0)")
    return IntervalResult(tau=1.0 / (params.g * math.sqrt(nbar)))


def tau_opt_um(state: PopulationState, params: ModelParams) -> IntervalResult:
    """pi / (Omega_d + Omega_{d+1}) at the continuous dominant index of the current state."""
    n_d = dominant_index(state)
    omega_d = rabi_frequency(n_d, params)
    omega_d1 = rabi_frequency(n_d + 1.0, params)
    return IntervalResult(tau=math.pi / (omega_d + omega_d1))


def optimal_interval(strategy: Strategy, state: PopulationState, params: ModelParams) -> IntervalResult:
    if Strategy(strategy) is Strategy.UM:
        return tau_opt_um(state, params)
    return tau_opt_cm(state, params)


def apply_measurement(
    strategy: Strategy, state: PopulationState, tau: float, params: ModelParams
) -> PopulationState:
    if Strategy(strategy) is Strategy.UM:
        return apply_um(state, tau, params)
    return apply_cm(state, tau, params)


def default_tau_grid(tau_max: float = DEFAULT_TAU_MAX, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Uniform grid over (0, tau_max] excluding zero."""
    if points < 1:
        raise InvalidParameterError(f"tau grid needs at least one point, got {points}")
    if not tau_max > 0:
        raise InvalidParameterError(f"tau_max must be positive, got {tau_max}")
    return np.linspace(tau_max / points, tau_max, points)


def _check_grid(tau_grid) -> np.ndarray:
    grid = np.asarray(tau_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise InvalidParameterError("tau grid is empty")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise InvalidParameterError("tau grid must contain finite positive intervals only")
    return grid


def scan_um_tau(state: PopulationState, params: ModelParams, tau_grid) -> np.ndarray:
    """
    Average population after a single UM for every interval in tau_grid (exact map).

    Evaluated in blocks of intervals so memory stays bounded at large cutoffs.
    """
    grid = _check_grid(tau_grid)
    levels = _levels(state)
    p = state.populations
    block = max(1, SCAN_BLOCK_ELEMENTS // levels.size)

    nbar = np.empty(grid.size)
    for start in range(0, grid.size, block):
        taus = grid[start : start + block, None]
        alpha, transfer = _coefficients(levels[None, :], taus, params)
        updated = alpha * p
        updated[:, :-1] += (transfer * p)[:, 1:]
        nbar[start : start + block] = updated @ levels
    return nbar


def numeric_tau_opt_um(state: PopulationState, params: ModelParams, tau_grid=None) -> IntervalResult:
    """
    Brute-force UM interval: grid argmin of the exact single-round average population.

    Ties go to the smallest interval.
    """
    grid = default_tau_grid() if tau_grid is None else _check_grid(tau_grid)
    if grid.size < 1000:
        logger.warning("tau grid has only %d points; the minimum may be poorly resolved", grid.size)
    nbar = scan_um_tau(state, params, grid)
    best = int(np.argmin(nbar))
    return IntervalResult(tau=float(grid[best]), method="numeric-grid", nbar_after=float(nbar[best]))


def _require_resonant_thermal(state: PopulationState, params: ModelParams, what: str) -> None:
    if state.thermal_x is None:
        raise InvalidUseError(f"{what} assumes a thermal (geometric) population distribution")
    if params.delta != 0.0:
        raise InvalidUseError(f"{what} is derived for the resonant case (delta = 0), got delta = {params.delta}")


def approx_nbar_um(state: PopulationState, tau: ArrayLike, params: ModelParams) -> ArrayLike:
    """
    First-order expansion of the single-UM average population around the dominant index.

    Validation only: the expansion carries a constant offset (it returns eta, not nbar_th, at
    tau = 0) and is never used to choose intervals.
    """
    _require_resonant_thermal(state, params, "approximate UM population")
    tau_arr = np.asarray(tau, dtype=np.float64)
    nbar_th = avg_population(state)
    n_d = dominant_index(state)

    omega_d = params.g * math.sqrt(n_d)
    omega_d1 = params.g * math.sqrt(n_d + 1.0)
    omega_plus = omega_d1 + omega_d
    omega_minus = omega_d1 - omega_d
    eta = (nbar_th + 2.0 * nbar_th**2) / (2.0 + 2.0 * nbar_th)
    eta_prime = nbar_th * (1.0 + 2.0 * nbar_th - n_d) / n_d

    value = eta + np.sin(omega_minus * tau_arr) * (
        nbar_th * np.sin(omega_plus * tau_arr) + eta_prime * omega_d * tau_arr * np.cos(omega_plus * tau_arr)
    )
    return _as_output(value)


def resonant_nbar_um_series(state: PopulationState, tau: ArrayLike, params: ModelParams) -> ArrayLike:
    """Exact resonant single-UM population written as eta plus an oscillating series."""
    _require_resonant_thermal(state, params, "resonant UM series")
    x = state.thermal_x
    tau_arr = np.asarray(tau, dtype=np.float64)
    levels = _levels(state)
    nbar_th = avg_population(state)
    eta = (nbar_th + 2.0 * nbar_th**2) / (2.0 + 2.0 * nbar_th)

    omega_n = params.g * np.sqrt(levels)
    omega_n1 = params.g * np.sqrt(levels + 1.0)
    taus = tau_arr.reshape(-1, 1)
    terms = levels * np.exp(-levels * x) * (np.cos(2.0 * omega_n * taus) - math.exp(-x) * np.cos(2.0 * omega_n1 * taus))
    value = eta + 0.5 * (-math.expm1(-x)) * terms.sum(axis=1)
    return float(value[0]) if tau_arr.ndim == 0 else value.reshape(tau_arr.shape)
