"""Cooling-by-measurement environment for the policy-gradient agent."""

import logging
from typing import Any, Dict, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.errors import InvalidParameterError, MeasurementAnnihilationError
from app.measurement import Strategy, apply_measurement, optimal_interval
from app.physics import ModelParams, PopulationState, avg_population
from app.sequence import observe

logger = logging.getLogger(__name__)

RewardMode = Literal["per_step", "final"]


class EnvConfig(BaseModel):
    """Everything needed to rebuild an identical environment."""

    model_config = ConfigDict(frozen=True)

    initial: PopulationState
    params: ModelParams
    n_rounds: int = 16
    obs_size: int = 64
    reward_scale: float = 100.0
    annihilation_reward: float = -100.0
    reward_mode: RewardMode = "per_step"

    def make(self) -> "CoolingEnv":
        return CoolingEnv(self)


def observation(state: PopulationState, obs_size: int) -> np.ndarray:
    """Populations p_0..p_{obs_size-1}, zero-padded above the cutoff."""
    obs = np.zeros(obs_size)
    take = min(obs_size, state.populations.size)
    obs[:take] = state.populations[:take]
    return obs


class CoolingEnv:
    """One episode applies N measurements, each at its strategy's analytic optimal interval."""

    def __init__(self, config: EnvConfig):
        if config.n_rounds < 1:
            raise InvalidParameterError(f"episode length must be at least 1, got {config.n_rounds}")
        self.config = config
        self.nbar_th = avg_population(config.initial)
        self.reset()

    def reset(self) -> np.ndarray:
        self.state = self.config.initial
        self.step_index = 0
        self.last_C = 0.0
        self.done = False
        return observation(self.state, self.config.obs_size)

    def step(self, action: int) -> Tuple[np.ndarray, float, bool, Dict[str, Any]]:
        """
        Apply one measurement round.

        Args:
            action: 0 (UM) or 1 (CM)

        Returns:
            (next observation, reward, done, info) with info keys step, strategy, tau, C,
            annihilated, degenerate
        """
        if self.done:
            raise InvalidParameterError("episode already finished; call reset() first")
        cfg = self.config
        strategy = Strategy(int(action))
        self.step_index += 1
        info: Dict[str, Any] = {
            "step": self.step_index,
            "strategy": strategy,
            "tau": None,
            "C": self.last_C,
            "annihilated": False,
            "degenerate": False,
        }

        if avg_population(self.state) <= 0.0:
            # pure ground state: both actions are no-ops and C stays at its last value
            info["degenerate"] = True
        else:
            tau = optimal_interval(strategy, self.state, cfg.params).tau
            try:
                self.state = apply_measurement(strategy, self.state, tau, cfg.params)
            except MeasurementAnnihilationError:
                logger.debug("CM annihilation at round %d", self.step_index)
                self.done = True
                info["annihilated"] = True
                info["tau"] = tau
                return observation(self.state, cfg.obs_size), cfg.annihilation_reward, True, info
            info["tau"] = tau
            self.last_C = observe(self.state, self.nbar_th)[3]
            info["C"] = self.last_C

        self.done = self.step_index >= cfg.n_rounds
        if cfg.reward_mode == "per_step" or self.done:
            reward = cfg.reward_scale * self.last_C
        else:
            reward = 0.0
        return observation(self.state, cfg.obs_size), reward, self.done, info
