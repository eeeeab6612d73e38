"""Run configuration: YAML file, COOLOPT_* environment variables and command-line overrides."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.environment import EnvConfig
from app.errors import ConfigError, CutoffCapError
from app.physics import ModelParams, PopulationState, ThermalSpec, thermal_populations
from app.ppo import PPOConfig

logger = logging.getLogger(__name__)


class RunConfig(BaseSettings):
    """
    Every input of a run, defaulting to the reference parameter set.

    Physical inputs are SI (omega_a in rad/s, temperatures in kelvin) or dimensionless (x, g and
    delta in units of omega_a). Conversion to internal units happens only in the helpers below.
    """

    model_config = SettingsConfigDict(
        env_prefix="COOLOPT_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    # physics
    omega_a: float = 1.4e9
    temperature: Optional[float] = 0.1
    x: Optional[float] = None
    g: float = 0.04
    delta: float = 0.01
    n_rounds: int = 16
    tail_tol: float = 1e-12
    cutoff_cap: int = 4096

    # sequence selection
    pattern: Optional[str] = None
    sequence: Optional[str] = None
    k: Optional[int] = None

    # tau scan
    temperatures: List[float] = [0.01, 0.1, 1.0, 10.0]
    grid_points: int = 2000
    tau_max: float = 40.0
    scan_cutoff_cap: int = 65536

    # search
    top_k: int = 20
    metric: Literal["final", "summed"] = "final"
    search_guard: int = 24
    override_guard: bool = False

    # training
    fig4_temperatures: List[float] = [0.05, 0.1, 0.2, 0.3]
    ppo: PPOConfig = PPOConfig()
    policy_path: Optional[str] = None

    # run
    seed: int = 0
    threads: int = 1
    out_dir: str = "results"
    show_progress: bool = True
    log_level: str = "INFO"

    @model_validator(mode="after")
    def _check_temperature_source(self) -> "RunConfig":
        explicit = self.model_fields_set
        if self.x is not None and self.temperature is not None and {"x", "temperature"} <= explicit:
            raise ConfigError("both 'temperature' and 'x' are set; give only one of them")
        if self.x is not None:
            # x given alone replaces the default temperature, so the resolved dump reloads cleanly
            self.temperature = None
        if self.x is None and self.temperature is None:
            raise ConfigError("one of 'temperature' or 'x' must be set")
        if not self.temperatures:
            raise ConfigError("'temperatures' must not be empty")
        return self

    def model_params(self) -> ModelParams:
        return ModelParams(g=self.g, delta=self.delta, omega_a=self.omega_a)

    def thermal_spec(self, temperature: Optional[float] = None) -> ThermalSpec:
        """Thermal spec for an explicit temperature, else x if it was given, else `temperature`."""
        if temperature is not None:
            return ThermalSpec.from_temperature(temperature, self.omega_a)
        if self.x is not None:
            return ThermalSpec(x=self.x)
        return ThermalSpec.from_temperature(self.temperature, self.omega_a)

    def initial_state(self, temperature: Optional[float] = None, scan: bool = False) -> PopulationState:
        """Truncated thermal state; `scan` applies the larger cap used for high-temperature scans."""
        cap, key = (self.scan_cutoff_cap, "scan_cutoff_cap") if scan else (self.cutoff_cap, "cutoff_cap")
        try:
            return thermal_populations(self.thermal_spec(temperature), self.tail_tol, cap)
        except CutoffCapError as exc:
            raise CutoffCapError(exc.required, exc.cap, key=key) from exc

    def env_config(self, initial: PopulationState) -> EnvConfig:
        return EnvConfig(
            initial=initial,
            params=self.model_params(),
            n_rounds=self.n_rounds,
            obs_size=self.ppo.obs_size,
            reward_scale=self.ppo.reward_scale,
            annihilation_reward=self.ppo.annihilation_reward,
            reward_mode=self.ppo.reward_mode,
        )

    def resolved(self) -> Dict[str, Any]:
        """JSON-ready dump embedded in every output file."""
        return self.model_dump(mode="json")


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level")
    return data


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """
    Resolve a RunConfig.

    Priority, highest first: keyword overrides, the YAML file, COOLOPT_* environment variables,
    built-in defaults. Overrides whose value is None are ignored.

    Raises:
        ConfigError: unreadable file, unknown keys, invalid values, or ambiguous temperature input
    """
    data = _read_yaml(Path(path)) if path is not None else {}
    data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    try:
        config = RunConfig(**data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from exc
    logger.debug("resolved config: %s", config.resolved())
    return config
