"""
BoilerSim: a six-variable stand-in for a thermal power unit's combustion loop.

State is (fuel valve, air valve, water valve, furnace temperature, steam pressure, demand load);
actions nudge the three valves. Reward mixes combustion efficiency and emissions, costs are hinge
penalties outside the pressure/temperature safety band plus load-tracking mismatch.
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from more_offline_rl.errors import DimensionMismatchError, NonFiniteError, PreconditionError

logger = logging.getLogger("more_offline_rl")

STATE_DIM = 6
ACTION_DIM = 3
NOISE_STD = 0.01
VALVE_RATE = 0.1
AIR_OPTIMUM = 0.6


@dataclass(frozen=True)
class CmdpSpec:
    state_dim: int = STATE_DIM
    action_dim: int = ACTION_DIM
    gamma: float = 0.99
    cost_limit: float = 5.0
    reward_weight_alpha_r: float = 0.8
    cost_weights: Tuple[float, ...] = (1.0, 1.0, 0.5)
    episode_length: int = 200

    def __post_init__(self):
        object.__setattr__(self, "cost_weights", tuple(float(w) for w in self.cost_weights))
        if self.state_dim != STATE_DIM or self.action_dim != ACTION_DIM:
            raise DimensionMismatchError(
                f"BoilerSim has state_dim={STATE_DIM} and action_dim={ACTION_DIM}, "
                f"got {self.state_dim}/{self.action_dim}"
            )
        if not 0.0 < self.gamma < 1.0:
            raise PreconditionError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.cost_limit < 0:
            raise PreconditionError(f"cost_limit must be >= 0, got {self.cost_limit}")
        if not 0.0 <= self.reward_weight_alpha_r <= 1.0:
            raise PreconditionError(f"reward_weight_alpha_r must lie in [0, 1], got {self.reward_weight_alpha_r}")
        if len(self.cost_weights) not in (3, 4):
            raise PreconditionError(
                f"cost_weights needs 3 entries (or 4 with the action-magnitude cost), got {len(self.cost_weights)}"
            )
        if any(w < 0 for w in self.cost_weights) or sum(self.cost_weights) <= 0:
            raise PreconditionError(f"cost_weights must be nonnegative with a positive sum, got {self.cost_weights}")
        if self.episode_length < 1:
            raise PreconditionError(f"episode_length must be positive, got {self.episode_length}")

    @property
    def num_costs(self) -> int:
        return len(self.cost_weights)


def spec_hash(spec: CmdpSpec) -> str:
    payload = json.dumps(asdict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class BoilerState:
    fuel_valve: float
    air_valve: float
    water_valve: float
    furnace_temperature: float
    steam_pressure: float
    demand_load: float
    step_index: int = 0

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                self.fuel_valve,
                self.air_valve,
                self.water_valve,
                self.furnace_temperature,
                self.steam_pressure,
                self.demand_load,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_vector(cls, vector, step_index: int = 0) -> "BoilerState":
        values = [float(v) for v in np.asarray(vector, dtype=np.float64).reshape(-1)]
        if len(values) != STATE_DIM:
            raise DimensionMismatchError(f"BoilerState needs {STATE_DIM} values, got {len(values)}")
        return cls(*values, step_index=step_index)


@dataclass(frozen=True)
class StepResult:
    next_state: BoilerState
    reward: float
    cost_vector: np.ndarray = field(repr=False)
    combined_cost: float
    done: bool
    action_clipped: bool = False
    applied_action: np.ndarray = field(default=None, repr=False)


def env_reset(spec: CmdpSpec, seed: int) -> BoilerState:
    rng = np.random.default_rng(seed)
    fuel, air, water = rng.uniform(0.3, 0.7, size=3)
    return BoilerState(float(fuel), float(air), float(water), 0.5, 0.5, 0.5, 0)


def combustion_completeness(air_valve: float) -> float:
    return 1.0 - 4.0 * (air_valve - AIR_OPTIMUM) ** 2


def _clip01(value: float) -> float:
    return min(max(value, 0.0), 1.0)


def env_step(
    state: BoilerState,
    action,
    spec: CmdpSpec,
    noise_seed: Optional[int] = None,
) -> StepResult:
    """Advance BoilerSim one step. ``noise_seed=None`` forces the temperature noise to zero."""
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape[0] != spec.action_dim:
        raise DimensionMismatchError(f"action must have length {spec.action_dim}, got {action.shape[0]}")
    bad = np.flatnonzero(~np.isfinite(action))
    if bad.size:
        raise NonFiniteError("action is not finite", int(bad[0]))
    clipped = np.clip(action, -1.0, 1.0)
    action_clipped = bool(np.any(clipped != action))
    if action_clipped:
        logger.debug(f"action {action.tolist()} clipped to [-1, 1]")

    noise = 0.0 if noise_seed is None else float(np.random.default_rng(noise_seed).normal(0.0, NOISE_STD))

    fuel = _clip01(state.fuel_valve + VALVE_RATE * clipped[0])
    air = _clip01(state.air_valve + VALVE_RATE * clipped[1])
    water = _clip01(state.water_valve + VALVE_RATE * clipped[2])
    completeness = combustion_completeness(air)
    temperature = 0.88 * state.furnace_temperature + 0.5 * fuel * completeness + noise
    pressure = 0.90 * state.steam_pressure + 0.30 * temperature - 0.25 * water
    step_index = state.step_index + 1
    demand = 0.5 + 0.3 * math.sin(2.0 * math.pi * step_index / spec.episode_length)

    efficiency = 0.90 + 0.04 * completeness - 0.02 * abs(water - 0.5)
    emissions = 1.0 - 0.4 * air - 0.3 * max(0.0, temperature - 0.8)
    alpha_r = spec.reward_weight_alpha_r
    reward = alpha_r * efficiency + (1.0 - alpha_r) * emissions

    costs = [
        max(0.0, pressure - 0.9) + max(0.0, 0.1 - pressure),
        max(0.0, temperature - 1.0),
        abs(fuel * water - demand),
    ]
    if spec.num_costs == 4:
        costs.append(float(np.linalg.norm(clipped)))
    cost_vector = np.array(costs, dtype=np.float64)
    combined_cost = float(np.dot(spec.cost_weights, cost_vector))

    next_state = BoilerState(fuel, air, water, temperature, pressure, demand, step_index)
    return StepResult(
        next_state=next_state,
        reward=float(reward),
        cost_vector=cost_vector,
        combined_cost=combined_cost,
        done=step_index >= spec.episode_length,
        action_clipped=action_clipped,
        applied_action=clipped,
    )
