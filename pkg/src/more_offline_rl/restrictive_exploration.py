"""
Model rollouts branched from real states, filtered by model sensitivity and split by data density.

Every (rollout i, step h) draws its randomness from ``default_rng([seed, i, h])`` in a fixed
order: actor exploration noise, sensitivity perturbations, latent samples. Any single step can
therefore be replayed in isolation.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List

import numpy as np

from more_offline_rl.agent import ActorPolicy
from more_offline_rl.dataset import TransitionBatch
from more_offline_rl.density_vae import DensityModel, elbo_density_batch
from more_offline_rl.dynamics_model import DynamicsModel, SensitivityConfig, predict, sensitivity_batch
from more_offline_rl.errors import PreconditionError

logger = logging.getLogger("more_offline_rl")

ORIGIN_REAL = "real"
ORIGIN_POSITIVE = "positive"
ORIGIN_NEGATIVE = "negative"
ORIGINS = (ORIGIN_REAL, ORIGIN_POSITIVE, ORIGIN_NEGATIVE)

STATUS_DISCARDED = "discarded"


@dataclass(frozen=True)
class FilterConfig:
    beta_u: float = 70.0
    beta_p: float = 40.0
    sensitivity_threshold: float = math.inf
    density_threshold: float = -math.inf
    kappa: float = 5.0
    rollout_length: int = 5
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    density_z_samples: int = 1
    rollout_noise_std: float = 0.1

    def __post_init__(self):
        for name in ("beta_u", "beta_p"):
            if not 0.0 < getattr(self, name) <= 100.0:
                raise PreconditionError(f"{name} must lie in (0, 100], got {getattr(self, name)}")
        if self.kappa < 0:
            raise PreconditionError(f"kappa must be >= 0, got {self.kappa}")
        if self.rollout_length < 1:
            raise PreconditionError(f"rollout_length must be >= 1, got {self.rollout_length}")
        if self.density_z_samples < 1:
            raise PreconditionError(f"density_z_samples must be >= 1, got {self.density_z_samples}")
        if self.rollout_noise_std < 0:
            raise PreconditionError(f"rollout_noise_std must be >= 0, got {self.rollout_noise_std}")

    def with_thresholds(self, thresholds) -> "FilterConfig":
        return replace(
            self,
            sensitivity_threshold=thresholds.sensitivity_threshold,
            density_threshold=thresholds.density_threshold,
            beta_u=thresholds.beta_u,
            beta_p=thresholds.beta_p,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SimulatedTransitions:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    model_rewards: np.ndarray
    combined_costs: np.ndarray
    next_states: np.ndarray
    sensitivities: np.ndarray
    densities: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_rows(cls, rows: List[Dict[str, Any]], state_dim: int, action_dim: int) -> "SimulatedTransitions":
        if not rows:
            return cls(
                np.empty((0, state_dim)),
                np.empty((0, action_dim)),
                np.empty(0),
                np.empty(0),
                np.empty(0),
                np.empty((0, state_dim)),
                np.empty(0),
                np.empty(0),
            )
        return cls(
            np.array([row["state"] for row in rows]),
            np.array([row["action"] for row in rows]),
            np.array([row["reward"] for row in rows]),
            np.array([row["model_reward"] for row in rows]),
            np.array([row["cost"] for row in rows]),
            np.array([row["next_state"] for row in rows]),
            np.array([row["sensitivity"] for row in rows]),
            np.array([row["density"] for row in rows]),
        )


@dataclass(frozen=True)
class RolloutStep:
    """One simulated step and the filter's verdict on it; ``density`` and rewards are NaN when discarded."""

    rollout: int
    step: int
    sensitivity: float
    density: float
    model_reward: float
    reward: float
    status: str


@dataclass
class ExplorationResult:
    positive: SimulatedTransitions
    negative: SimulatedTransitions
    discarded: int
    trace: List[RolloutStep] = field(default_factory=list, repr=False)


@dataclass
class LocalBuffer:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    combined_costs: np.ndarray
    next_states: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def counts(self) -> Dict[str, int]:
        return {origin: int(np.sum(self.origins == origin)) for origin in ORIGINS}

    @property
    def positive_ratio(self) -> float:
        counts = self.counts()
        simulated = counts[ORIGIN_POSITIVE] + counts[ORIGIN_NEGATIVE]
        return counts[ORIGIN_POSITIVE] / simulated if simulated else math.nan


def penalize_reward(r_hat: float, p_m: float, config: FilterConfig) -> float:
    """r_hat / (1 + max(0, kappa * (l_p - p_m)))."""
    if not r_hat > 0:
        raise PreconditionError(f"penalized rewards must be positive, got {r_hat}")
    hinge = config.kappa * (config.density_threshold - p_m) if config.kappa else 0.0
    return r_hat / (1.0 + max(0.0, hinge))


def step_generator(seed: int, rollout: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, rollout, step])


def restrictive_exploration(
    batch: TransitionBatch,
    actor: ActorPolicy,
    dynamics: DynamicsModel,
    density: DensityModel,
    config: FilterConfig,
    seed: int,
) -> ExplorationResult:
    """Roll out ``config.rollout_length`` model steps from every state in ``batch``.

    A step whose sensitivity reaches ``sensitivity_threshold`` is discarded and ends its rollout.
    Kept steps go to the positive set when their ELBO exceeds ``density_threshold``, else to the
    negative set with a penalized reward. Outputs are ordered by (rollout, step).
    """
    if len(batch) == 0:
        raise PreconditionError("restrictive exploration needs a nonempty batch")
    state_dim = dynamics.state_dim
    action_dim = dynamics.action_dim
    input_dim = state_dim + action_dim
    sens = config.sensitivity

    states = np.array(batch.states, dtype=np.float64)
    active = np.arange(len(batch))
    records: List[Dict[str, Any]] = []
    trace: List[RolloutStep] = []
    for step in range(config.rollout_length):
        if active.size == 0:
            break
        action_noise = np.empty((active.size, action_dim))
        sens_noise = np.empty((active.size, sens.num_perturbations, input_dim))
        z_noise = np.empty((active.size, config.density_z_samples, density.latent_dim))
        for row, rollout in enumerate(active):
            rng = step_generator(seed, int(rollout), step)
            action_noise[row] = rng.standard_normal(action_dim)
            sens_noise[row] = rng.standard_normal((sens.num_perturbations, input_dim))
            z_noise[row] = rng.standard_normal((config.density_z_samples, density.latent_dim))

        current = states[active]
        actions = actor.explore(current, action_noise)
        u = sensitivity_batch(dynamics, current, actions, sens, sens_noise)
        trusted = u < config.sensitivity_threshold
        next_states, model_rewards, costs = predict(dynamics, current, actions)
        p_m = elbo_density_batch(density, current, actions, z_noise)

        for row, rollout in enumerate(active):
            if not trusted[row]:
                trace.append(RolloutStep(int(rollout), step, float(u[row]), math.nan, math.nan, math.nan, STATUS_DISCARDED))
                continue
            positive = p_m[row] > config.density_threshold
            model_reward = float(model_rewards[row])
            reward = model_reward if positive else penalize_reward(model_reward, float(p_m[row]), config)
            origin = ORIGIN_POSITIVE if positive else ORIGIN_NEGATIVE
            records.append(
                {
                    "rollout": int(rollout),
                    "step": step,
                    "origin": origin,
                    "state": current[row],
                    "action": actions[row],
                    "reward": reward,
                    "model_reward": model_reward,
                    "cost": float(costs[row]),
                    "next_state": next_states[row],
                    "sensitivity": float(u[row]),
                    "density": float(p_m[row]),
                }
            )
            trace.append(
                RolloutStep(int(rollout), step, float(u[row]), float(p_m[row]), model_reward, reward, origin)
            )

        states[active[trusted]] = next_states[trusted]
        active = active[trusted]

    records.sort(key=lambda record: (record["rollout"], record["step"]))
    trace.sort(key=lambda entry: (entry.rollout, entry.step))
    discarded = sum(1 for entry in trace if entry.status == STATUS_DISCARDED)
    positive = SimulatedTransitions.from_rows(
        [r for r in records if r["origin"] == ORIGIN_POSITIVE], state_dim, action_dim
    )
    negative = SimulatedTransitions.from_rows(
        [r for r in records if r["origin"] == ORIGIN_NEGATIVE], state_dim, action_dim
    )
    logger.debug(
        f"restrictive exploration: {len(positive)} positive, {len(negative)} negative, {discarded} discarded"
    )
    return ExplorationResult(positive, negative, discarded, trace)


def build_local_buffer(
    real: TransitionBatch, positive: SimulatedTransitions, negative: SimulatedTransitions
) -> LocalBuffer:
    """Real records first, then positive, then negative, each tagged by origin."""
    if len(real) == 0:
        raise PreconditionError("the local buffer needs at least one real transition")
    parts = [
        (real.states, real.actions, real.rewards, real.combined_costs, real.next_states, ORIGIN_REAL),
        (positive.states, positive.actions, positive.rewards, positive.combined_costs, positive.next_states, ORIGIN_POSITIVE),
        (negative.states, negative.actions, negative.rewards, negative.combined_costs, negative.next_states, ORIGIN_NEGATIVE),
    ]
    return LocalBuffer(
        states=np.concatenate([p[0] for p in parts]),
        actions=np.concatenate([p[1] for p in parts]),
        rewards=np.concatenate([p[2] for p in parts]),
        combined_costs=np.concatenate([p[3] for p in parts]),
        next_states=np.concatenate([p[4] for p in parts]),
        origins=np.concatenate([np.full(len(p[0]), p[5], dtype=object) for p in parts]),
    )
