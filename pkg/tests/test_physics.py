import math

import numpy as np
import pytest

from app.errors import CutoffCapError, DegenerateStateError, InvalidParameterError
from app.physics import (
    ModelParams,
    PopulationState,
    ThermalSpec,
    avg_population,
    dominant_index,
    effective_temperature,
    ground_fidelity,
    inverse_temperature,
    rabi_frequency,
    required_cutoff,
    thermal_populations,
)


def test_inverse_temperature_reference_point():
    assert inverse_temperature(0.1, 1.4e9) == pytest.approx(0.106935, rel=1e-4)


@pytest.mark.parametrize("temperature", [0.0, -1.0])
def test_inverse_temperature_rejects_non_positive(temperature):
    with pytest.raises(InvalidParameterError):
        inverse_temperature(temperature, 1.4e9)


def test_thermal_baseline_population(thermal):
    # truncated geometric mean; the untruncated 1/(e^x - 1) gives the same to 1e-9
    # 1/(e^x - 1) = 8.8605 here, so the band is centred on 8.86 rather than the rounded 8.85
    assert avg_population(thermal) == pytest.approx(8.86, abs=0.01)
    assert avg_population(thermal) == pytest.approx(ThermalSpec.from_temperature(0.1, 1.4e9).mean_occupation, rel=1e-9)


def test_thermal_state_is_normalized_and_tagged(thermal):
    assert thermal.populations.sum() == pytest.approx(1.0, abs=1e-12)
    assert thermal.survival == 1.0
    assert thermal.thermal_x == pytest.approx(inverse_temperature(0.1, 1.4e9))
    assert np.all(np.diff(thermal.populations) < 0)


@pytest.mark.parametrize("x", [0.01, 0.106935, 1.0, 5.0])
@pytest.mark.parametrize("tol", [1e-6, 1e-12])
def test_required_cutoff_is_minimal(x, tol):
    n_c = required_cutoff(x, tol)
    assert math.exp(-x * (n_c + 1)) < tol
    if n_c > 0:
        assert math.exp(-x * n_c) >= tol


def test_cutoff_cap_error_names_the_config_key():
    with pytest.raises(CutoffCapError) as info:
        thermal_populations(ThermalSpec.from_temperature(10.0, 1.4e9))
    assert "cutoff_cap" in str(info.value)
    assert info.value.required > info.value.cap == 4096


def test_high_temperature_fits_under_scan_cap():
    state = thermal_populations(ThermalSpec.from_temperature(10.0, 1.4e9), cutoff_cap=65536)
    assert state.n_cutoff > 4096
    assert avg_population(state) == pytest.approx(1.0 / math.expm1(state.thermal_x), rel=1e-8)


def test_invalid_model_params():
    with pytest.raises(InvalidParameterError):
        ModelParams(g=0.0)
    with pytest.raises(InvalidParameterError):
        ThermalSpec(x=-1.0)


def test_rabi_frequency_scalar_and_array(params):
    assert isinstance(rabi_frequency(4, params), float)
    assert rabi_frequency(4, params) == pytest.approx(math.sqrt(0.04**2 * 4 + 0.01**2 / 4))
    out = rabi_frequency(np.arange(3), params)
    assert out.shape == (3,)
    assert out[0] == pytest.approx(0.005)
    with pytest.raises(InvalidParameterError):
        rabi_frequency(-1, params)


class TestPopulationState:
    def test_rejects_negative_entries(self):
        with pytest.raises(InvalidParameterError):
            PopulationState.from_populations([1.2, -0.2])

    def test_rejects_unnormalized(self):
        with pytest.raises(InvalidParameterError):
            PopulationState.from_populations([0.5, 0.4])

    def test_rejects_zero_survival(self):
        with pytest.raises(InvalidParameterError):
            PopulationState.from_populations([1.0], survival=0.0)

    def test_populations_are_read_only(self, thermal):
        with pytest.raises(ValueError):
            thermal.populations[0] = 0.5

    def test_pure_state(self):
        state = PopulationState.pure(3, 5)
        assert state.n_cutoff == 5
        assert avg_population(state) == 3.0
        assert ground_fidelity(state) == 0.0
        assert state.thermal_x is None

    def test_extended_pads_with_empty_levels(self):
        state = PopulationState.from_populations([0.25, 0.75]).extended(4)
        assert state.populations.tolist() == [0.25, 0.75, 0.0, 0.0, 0.0]
        with pytest.raises(InvalidParameterError):
            state.extended(2)

    def test_serializes_populations_as_list(self):
        dumped = PopulationState.from_populations([0.5, 0.5]).model_dump()
        assert dumped["populations"] == [0.5, 0.5]


def test_dominant_index_matches_inverse_x(thermal):
    assert dominant_index(thermal) == pytest.approx(1.0 / thermal.thermal_x, rel=1e-9)


def test_dominant_index_undefined_on_ground_state():
    with pytest.raises(DegenerateStateError):
        dominant_index(PopulationState.pure(0, 4))


def test_effective_temperature_of_thermal_state(thermal):
    assert effective_temperature(thermal, 1.4e9) == pytest.approx(0.1, rel=1e-8)
