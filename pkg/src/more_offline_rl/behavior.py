import logging
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Tuple, Union

import numpy as np

from more_offline_rl.boiler_env import AIR_OPTIMUM, BoilerState, CmdpSpec, env_reset, env_step, spec_hash
from more_offline_rl.dataset import OfflineDataset
from more_offline_rl.errors import PreconditionError

logger = logging.getLogger("more_offline_rl")

CONTROLLER_GAIN = 5.0
WATER_SETPOINT = 0.5
SEED_HIGH = np.iinfo(np.int64).max

BEHAVIOR_KINDS = ("medium", "mixed")
MEDIUM_NOISE_STD = 0.3
MIXED_NOISE_TIERS = (1.0, 0.6, 0.3, 0.1)


@dataclass(frozen=True)
class BehaviorPolicyConfig:
    kind: str = "medium"
    exploration_std: Union[float, Tuple[float, ...]] = MEDIUM_NOISE_STD
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BEHAVIOR_KINDS:
            raise PreconditionError(f"behavior kind must be one of {BEHAVIOR_KINDS}, got {self.kind!r}")
        if self.kind == "medium":
            if isinstance(self.exploration_std, (list, tuple)):
                raise PreconditionError("a medium behavior policy takes a single exploration_std")
            if self.exploration_std < 0:
                raise PreconditionError(f"exploration_std must be >= 0, got {self.exploration_std}")
        else:
            stds = tuple(float(s) for s in np.atleast_1d(self.exploration_std))
            if not stds or any(s <= 0 for s in stds):
                raise PreconditionError("a mixed behavior policy needs a nonempty list of positive stds")
            if any(later >= earlier for earlier, later in zip(stds, stds[1:])):
                raise PreconditionError(f"mixed exploration stds must be strictly decreasing, got {stds}")
            object.__setattr__(self, "exploration_std", stds)

    @property
    def noise_tiers(self) -> Tuple[float, ...]:
        if self.kind == "medium":
            return (float(self.exploration_std),)
        return tuple(self.exploration_std)

    def std_at(self, progress: float) -> float:
        """Noise std for the share ``progress`` in [0, 1) of the dataset already generated."""
        tiers = self.noise_tiers
        tier = min(int(progress * len(tiers)), len(tiers) - 1)
        return tiers[max(tier, 0)]


def controller_action(state: BoilerState) -> np.ndarray:
    """Noiseless proportional controller toward x=0.6, w=0.5 and f*w=d."""
    action = CONTROLLER_GAIN * np.array(
        [
            state.demand_load - state.fuel_valve * state.water_valve,
            AIR_OPTIMUM - state.air_valve,
            WATER_SETPOINT - state.water_valve,
        ],
        dtype=np.float64,
    )
    return np.clip(action, -1.0, 1.0)


def behavior_action(
    state: BoilerState, config: BehaviorPolicyConfig, step_seed: int, progress: float = 0.0
) -> np.ndarray:
    action = controller_action(state)
    std = config.std_at(progress)
    if std > 0:
        action = action + np.random.default_rng([config.seed, step_seed]).normal(0.0, std, size=action.shape)
    return np.clip(action, -1.0, 1.0)


def _created_at() -> Optional[str]:
    epoch = os.getenv("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()


def generate_dataset(
    spec: CmdpSpec, config: BehaviorPolicyConfig, num_transitions: int, seed: int
) -> OfflineDataset:
    if num_transitions < spec.episode_length:
        raise PreconditionError(
            f"num_transitions ({num_transitions}) is below one episode ({spec.episode_length})"
        )

    rng = np.random.default_rng(seed)
    states, actions, rewards, costs, combined, next_states, dones = [], [], [], [], [], [], []
    episodes = 0
    while len(states) < num_transitions:
        state = env_reset(spec, int(rng.integers(0, SEED_HIGH)))
        episodes += 1
        for _ in range(spec.episode_length):
            if len(states) >= num_transitions:
                break
            progress = len(states) / num_transitions
            action = behavior_action(state, config, int(rng.integers(0, SEED_HIGH)), progress)
            result = env_step(state, action, spec, noise_seed=int(rng.integers(0, SEED_HIGH)))
            states.append(state.as_vector())
            actions.append(result.applied_action)
            rewards.append(result.reward)
            costs.append(result.cost_vector)
            combined.append(result.combined_cost)
            next_states.append(result.next_state.as_vector())
            dones.append(result.done)
            state = result.next_state

    metadata = {
        "generator": config.kind,
        "noise_tiers": list(config.noise_tiers),
        "behavior_seed": config.seed,
        "seed": seed,
        "spec_hash": spec_hash(spec),
        "episode_length": spec.episode_length,
        "num_episodes": episodes,
        "created_at": _created_at(),
    }
    dataset = OfflineDataset(states, actions, rewards, costs, combined, next_states, dones, metadata)
    logger.info(
        f"Generated {len(dataset)} {config.kind} transitions over {episodes} episodes "
        f"(mean reward {float(np.mean(rewards)):.4f}, mean cost {float(np.mean(combined)):.4f})"
    )
    return dataset
