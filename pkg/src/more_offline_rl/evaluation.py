import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List

import numpy as np

from more_offline_rl.boiler_env import CmdpSpec, env_reset, env_step
from more_offline_rl.dataset import OfflineDataset
from more_offline_rl.errors import NonFiniteError, PreconditionError

logger = logging.getLogger("more_offline_rl")

SEED_HIGH = np.iinfo(np.int64).max

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class EvaluationReport:
    mean_return: float
    mean_discounted_return: float
    mean_discounted_cost: float
    episode_returns: np.ndarray = field(repr=False)
    episode_discounted_returns: np.ndarray = field(repr=False)
    episode_discounted_costs: np.ndarray = field(repr=False)
    aborted_episodes: List[int] = field(default_factory=list)
    clipped_actions: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_return": self.mean_return,
            "mean_discounted_return": self.mean_discounted_return,
            "mean_discounted_cost": self.mean_discounted_cost,
            "episode_returns": self.episode_returns.tolist(),
            "episode_discounted_returns": self.episode_discounted_returns.tolist(),
            "episode_discounted_costs": self.episode_discounted_costs.tolist(),
            "aborted_episodes": list(self.aborted_episodes),
            "clipped_actions": self.clipped_actions,
        }


def evaluate_policy(
    policy: Policy,
    spec: CmdpSpec,
    num_episodes: int,
    seed: int,
    reset_fn=env_reset,
    step_fn=env_step,
) -> EvaluationReport:
    """Monte-Carlo return and discounted cost of a deterministic policy on fresh episodes.

    Seeds are drawn from ``default_rng(seed)`` in a fixed order: one reset seed per episode,
    then one noise seed per step.
    """
    if num_episodes < 1:
        raise PreconditionError(f"num_episodes must be >= 1, got {num_episodes}")

    rng = np.random.default_rng(seed)
    returns, discounted_returns, discounted_costs = [], [], []
    aborted: List[int] = []
    clipped = 0
    for episode in range(num_episodes):
        state = reset_fn(spec, int(rng.integers(0, SEED_HIGH)))
        total = discounted = cost = 0.0
        discount = 1.0
        for _ in range(spec.episode_length):
            action = np.asarray(policy(state.as_vector()), dtype=np.float64)
            noise_seed = int(rng.integers(0, SEED_HIGH))
            if not np.all(np.isfinite(action)):
                logger.warning(f"Episode {episode} aborted: policy emitted non-finite action {action.tolist()}")
                aborted.append(episode)
                break
            result = step_fn(state, action, spec, noise_seed)
            clipped += int(getattr(result, "action_clipped", False))
            total += result.reward
            discounted += discount * result.reward
            cost += discount * result.combined_cost
            discount *= spec.gamma
            state = result.next_state
            if result.done:
                break
        if episode not in aborted:
            returns.append(total)
            discounted_returns.append(discounted)
            discounted_costs.append(cost)

    if not returns:
        raise NonFiniteError(f"all {num_episodes} evaluation episodes were aborted")
    if clipped:
        logger.warning(f"{clipped} policy actions fell outside [-1, 1] and were clipped")

    report = EvaluationReport(
        mean_return=float(np.mean(returns)),
        mean_discounted_return=float(np.mean(discounted_returns)),
        mean_discounted_cost=float(np.mean(discounted_costs)),
        episode_returns=np.asarray(returns),
        episode_discounted_returns=np.asarray(discounted_returns),
        episode_discounted_costs=np.asarray(discounted_costs),
        aborted_episodes=aborted,
        clipped_actions=clipped,
    )
    logger.info(
        f"Evaluated {len(returns)} episodes: return {report.mean_return:.4f}, "
        f"discounted return {report.mean_discounted_return:.4f}, discounted cost {report.mean_discounted_cost:.4f}"
    )
    return report


def dataset_episode_returns(dataset: OfflineDataset) -> np.ndarray:
    """Undiscounted return of every completed episode in the logged data."""
    ends = np.flatnonzero(dataset.dones)
    if ends.size == 0:
        return np.array([float(np.sum(dataset.rewards))])
    starts = np.concatenate([[0], ends[:-1] + 1])
    return np.array([float(np.sum(dataset.rewards[start : end + 1])) for start, end in zip(starts, ends)])
