"""Shared fixtures: the reference parameter set and its thermal state."""

import pytest

from app.physics import ModelParams, ThermalSpec, thermal_populations

OMEGA_A = 1.4e9
T_REF = 0.1


@pytest.fixture
def params() -> ModelParams:
    return ModelParams(g=0.04, delta=0.01, omega_a=OMEGA_A)


@pytest.fixture
def resonant_params() -> ModelParams:
    return ModelParams(g=0.04, delta=0.0, omega_a=OMEGA_A)


@pytest.fixture
def thermal():
    return thermal_populations(ThermalSpec.from_temperature(T_REF, OMEGA_A))
