"""
Actor, critics and the Lagrangian primal-dual updates.

The actor is deterministic (tanh output in [-1, 1]); reward critics use Clipped Double-Q
targets from their target copies, the cost critic bootstraps from its single target copy.
Bootstrapping never zeroes on ``done``: done flags mark episode truncation only.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

from more_offline_rl.dataset import NormalizationStats, OfflineDataset, sample_indices
from more_offline_rl.errors import DivergenceError, NonFiniteError, PreconditionError
from more_offline_rl.nn_core import (
    MlpSpec,
    Network,
    concat_inputs,
    mlp_backward,
    mlp_forward,
    mlp_forward_with_cache,
    mlp_value_and_gradient,
    mse_closure,
)

logger = logging.getLogger("more_offline_rl")


@dataclass(frozen=True)
class AgentConfig:
    actor_hidden: Tuple[int, ...] = (300, 300)
    critic_hidden: Tuple[int, ...] = (400, 400)
    actor_learning_rate: float = 1e-5
    critic_learning_rate: float = 1e-3
    gamma: float = 0.99
    rho: float = 0.005
    batch_size: int = 256
    dual_step_size: float = 0.01
    initial_lambda: float = 0.0
    constrained: bool = True

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(d) for d in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(d) for d in self.critic_hidden))
        if not 0.0 < self.gamma < 1.0:
            raise PreconditionError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.rho <= 1.0:
            raise PreconditionError(f"rho must lie in [0, 1], got {self.rho}")
        if self.actor_learning_rate <= 0 or self.critic_learning_rate <= 0 or self.dual_step_size <= 0:
            raise PreconditionError("learning rates and dual_step_size must be > 0")
        if self.initial_lambda < 0:
            raise PreconditionError(f"initial_lambda must be >= 0, got {self.initial_lambda}")
        if self.batch_size < 1:
            raise PreconditionError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["actor_hidden"] = list(self.actor_hidden)
        data["critic_hidden"] = list(self.critic_hidden)
        return data


@dataclass(frozen=True)
class PretrainConfig:
    bc_steps: int = 20000
    td_steps: int = 20000
    batch_size: int = 256

    def __post_init__(self):
        if self.bc_steps < 0 or self.td_steps < 0:
            raise PreconditionError("pretraining step counts must be >= 0")
        if self.batch_size < 1:
            raise PreconditionError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ActorPolicy:
    def __init__(self, network: Network, normalization: NormalizationStats, exploration_std: float = 0.1):
        if network.spec.output_activation != "tanh":
            raise PreconditionError("the actor network must end in tanh")
        self.network = network
        self.normalization = normalization
        self.exploration_std = exploration_std

    @classmethod
    def initialize(
        cls,
        normalization: NormalizationStats,
        config: AgentConfig,
        rng: np.random.Generator,
        exploration_std: float = 0.1,
    ) -> "ActorPolicy":
        spec = MlpSpec(
            normalization.state_mean.shape[0],
            config.actor_hidden,
            normalization.action_mean.shape[0],
            output_activation="tanh",
        )
        return cls(Network.initialize(spec, rng, config.actor_learning_rate), normalization, exploration_std)

    def act(self, states) -> np.ndarray:
        """Deterministic action for one state or a batch."""
        return self.network(self.normalization.normalize_state(states))

    __call__ = act

    def explore(self, states, noise) -> np.ndarray:
        """Deterministic action plus ``exploration_std``-scaled standard-normal ``noise``, clipped."""
        return np.clip(self.act(states) + self.exploration_std * np.asarray(noise), -1.0, 1.0)

    def copy(self) -> "ActorPolicy":
        return ActorPolicy(self.network.copy(), self.normalization, self.exploration_std)


class CriticSet:
    """Two reward critics, one cost critic and the parameter vectors of their target copies."""

    def __init__(
        self,
        reward_critics: List[Network],
        cost_critic: Network,
        normalization: NormalizationStats,
        rho: float = 0.005,
    ):
        if len(reward_critics) != 2:
            raise PreconditionError("a critic set holds exactly two reward critics")
        self.reward_critics = reward_critics
        self.cost_critic = cost_critic
        self.normalization = normalization
        self.rho = rho
        self.reward_targets = [critic.params.copy() for critic in reward_critics]
        self.cost_target = cost_critic.params.copy()

    @classmethod
    def initialize(cls, normalization: NormalizationStats, config: AgentConfig, rng: np.random.Generator) -> "CriticSet":
        spec = MlpSpec(
            normalization.state_mean.shape[0] + normalization.action_mean.shape[0], config.critic_hidden, 1
        )
        networks = [Network.initialize(spec, rng, config.critic_learning_rate) for _ in range(3)]
        return cls(networks[:2], networks[2], normalization, config.rho)

    @property
    def spec(self) -> MlpSpec:
        return self.cost_critic.spec

    def inputs(self, states, actions) -> np.ndarray:
        return concat_inputs(
            self.normalization.normalize_state(np.atleast_2d(states)),
            self.normalization.normalize_action(np.atleast_2d(actions)),
        )

    def q_reward(self, states, actions, target: bool = False) -> np.ndarray:
        """(rows, 2) reward values, online or target."""
        inputs = self.inputs(states, actions)
        params = self.reward_targets if target else [critic.params for critic in self.reward_critics]
        return np.column_stack([mlp_forward(self.spec, p, inputs)[:, 0] for p in params])

    def q_cost(self, states, actions, target: bool = False) -> np.ndarray:
        params = self.cost_target if target else self.cost_critic.params
        return mlp_forward(self.spec, params, self.inputs(states, actions))[:, 0]

    def sync_targets(self):
        self.reward_targets = [critic.params.copy() for critic in self.reward_critics]
        self.cost_target = self.cost_critic.params.copy()


@dataclass(frozen=True)
class LagrangeState:
    lambda_: float = 0.0
    step_size: float = 0.01
    cost_limit: float = 5.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise PreconditionError(f"lambda must be >= 0, got {self.lambda_}")
        if self.step_size <= 0:
            raise PreconditionError(f"step_size must be > 0, got {self.step_size}")

    def ascend(self, mean_cost_value: float) -> "LagrangeState":
        """Projected dual ascent: lambda <- max(0, lambda + eta * (mean Q_c - l))."""
        updated = max(0.0, self.lambda_ + self.step_size * (mean_cost_value - self.cost_limit))
        return LagrangeState(updated, self.step_size, self.cost_limit)


@dataclass
class CriticLosses:
    reward_losses: Tuple[float, float]
    cost_loss: float

    @property
    def reward_loss(self) -> float:
        return 0.5 * (self.reward_losses[0] + self.reward_losses[1])


def td_targets(buffer, critics: CriticSet, actor: ActorPolicy, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """r + gamma * min_j Q'_rj(s', pi(s')) and c + gamma * Q'_c(s', pi(s'))."""
    next_actions = actor.act(np.atleast_2d(buffer.next_states))
    reward_next = critics.q_reward(buffer.next_states, next_actions, target=True).min(axis=1)
    cost_next = critics.q_cost(buffer.next_states, next_actions, target=True)
    reward_targets = np.asarray(buffer.rewards, dtype=np.float64) + gamma * reward_next
    cost_targets = np.asarray(buffer.combined_costs, dtype=np.float64) + gamma * cost_next
    for name, values in (("reward TD target", reward_targets), ("cost TD target", cost_targets)):
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise NonFiniteError(name + " is not finite", int(bad[0]))
    return reward_targets, cost_targets


def _regress(network: Network, inputs: np.ndarray, targets: np.ndarray) -> float:
    closure = mse_closure(targets.reshape(inputs.shape[0], -1))
    loss, grad = mlp_value_and_gradient(network.spec, network.params, inputs, closure)
    network.apply_gradient(grad)
    return loss


def critic_update(buffer, critics: CriticSet, actor: ActorPolicy, gamma: float) -> CriticLosses:
    """One Adam step per critic on the mean squared TD error over ``buffer``."""
    if len(buffer) == 0:
        raise PreconditionError("critic_update needs a nonempty buffer")
    reward_targets, cost_targets = td_targets(buffer, critics, actor, gamma)
    inputs = critics.inputs(buffer.states, buffer.actions)
    reward_losses = tuple(_regress(critic, inputs, reward_targets) for critic in critics.reward_critics)
    cost_loss = _regress(critics.cost_critic, inputs, cost_targets)
    return CriticLosses(reward_losses, cost_loss)


def _action_gradient(critics: CriticSet, params: np.ndarray, inputs: np.ndarray, weights: np.ndarray):
    outputs, cache = mlp_forward_with_cache(critics.spec, params, inputs)
    _, grad_input = mlp_backward(critics.spec, params, cache, weights[:, None])
    # chain through the action normalization
    return outputs[:, 0], grad_input[:, critics.normalization.state_mean.shape[0] :] / critics.normalization.action_std


def actor_objective_and_gradient(
    states, actor: ActorPolicy, critics: CriticSet, lagrange: LagrangeState, constrained: bool = True
) -> Tuple[float, np.ndarray]:
    """E_s[min_j Q_rj(s, pi(s)) - lambda * (Q_c(s, pi(s)) - l)] and its gradient w.r.t. the actor."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rows = states.shape[0]
    actions, actor_cache = actor.network.forward_with_cache(actor.normalization.normalize_state(states))
    inputs = critics.inputs(states, actions)
    per_row = np.full(rows, 1.0 / rows)

    q_values, grads = [], []
    for critic in critics.reward_critics:
        q, grad = _action_gradient(critics, critic.params, inputs, per_row)
        q_values.append(q)
        grads.append(grad)
    # ties go to the first critic
    pick_first = q_values[0] <= q_values[1]
    q_min = np.where(pick_first, q_values[0], q_values[1])
    grad_actions = np.where(pick_first[:, None], grads[0], grads[1])
    objective = float(np.mean(q_min))

    if constrained:
        q_cost, grad_cost = _action_gradient(critics, critics.cost_critic.params, inputs, per_row)
        objective -= lagrange.lambda_ * float(np.mean(q_cost) - lagrange.cost_limit)
        grad_actions = grad_actions - lagrange.lambda_ * grad_cost

    if not np.isfinite(objective):
        raise NonFiniteError(f"actor objective is {objective!r}")
    grad_params, _ = actor.network.backward(actor_cache, grad_actions)
    return objective, grad_params


def actor_update(
    states, actor: ActorPolicy, critics: CriticSet, lagrange: LagrangeState, constrained: bool = True
) -> float:
    """One Adam ascent step on the Lagrangian with critics and lambda held fixed."""
    if len(states) == 0:
        raise PreconditionError("actor_update needs a nonempty set of states")
    objective, grad = actor_objective_and_gradient(states, actor, critics, lagrange, constrained)
    actor.network.apply_gradient(-grad)
    return objective


def mean_cost_value(states, actor: ActorPolicy, critics: CriticSet) -> float:
    states = np.atleast_2d(states)
    return float(np.mean(critics.q_cost(states, actor.act(states))))


def lambda_update(lagrange: LagrangeState, states, actor: ActorPolicy, critics: CriticSet) -> LagrangeState:
    return lagrange.ascend(mean_cost_value(states, actor, critics))


def soft_update(critics: CriticSet):
    """phi' <- rho * phi + (1 - rho) * phi' for all three target networks."""
    rho = critics.rho
    critics.reward_targets = [
        rho * critic.params + (1.0 - rho) * target
        for critic, target in zip(critics.reward_critics, critics.reward_targets)
    ]
    critics.cost_target = rho * critics.cost_critic.params + (1.0 - rho) * critics.cost_target


def pretrain(
    dataset: OfflineDataset,
    agent_config: AgentConfig,
    pretrain_config: PretrainConfig,
    seed: int,
    exploration_std: float = 0.1,
) -> Tuple[ActorPolicy, CriticSet]:
    """Behavior cloning for the actor, then SARSA-style TD(0) on the logged data for the critics."""
    rng = np.random.default_rng(seed)
    norm = dataset.normalization
    actor = ActorPolicy.initialize(norm, agent_config, rng, exploration_std)
    critics = CriticSet.initialize(norm, agent_config, rng)
    batch_size = pretrain_config.batch_size

    step = 0
    try:
        for step in range(1, pretrain_config.bc_steps + 1):
            idx = sample_indices(dataset, batch_size, rng)
            loss = _regress(actor.network, norm.normalize_state(dataset.states[idx]), dataset.actions[idx])
            if step % 1000 == 0:
                logger.debug(f"behavior cloning step {step}: action MSE {loss:.6g}")
    except NonFiniteError as err:
        raise DivergenceError("behavior cloning", step, str(err)) from err

    successors = dataset.successor_indices
    try:
        for step in range(1, pretrain_config.td_steps + 1):
            idx = sample_indices(dataset, batch_size, rng)
            next_states = dataset.next_states[idx]
            following = successors[idx]
            next_actions = actor.act(next_states)
            logged = following >= 0
            next_actions[logged] = dataset.actions[following[logged]]

            reward_targets = dataset.rewards[idx] + agent_config.gamma * critics.q_reward(
                next_states, next_actions
            ).min(axis=1)
            cost_targets = dataset.combined_costs[idx] + agent_config.gamma * critics.q_cost(next_states, next_actions)
            inputs = critics.inputs(dataset.states[idx], dataset.actions[idx])
            losses = [_regress(critic, inputs, reward_targets) for critic in critics.reward_critics]
            cost_loss = _regress(critics.cost_critic, inputs, cost_targets)
            if step % 1000 == 0:
                logger.debug(f"critic pretraining step {step}: reward TD {np.mean(losses):.6g}, cost TD {cost_loss:.6g}")
    except NonFiniteError as err:
        raise DivergenceError("critic pretraining", step, str(err)) from err

    critics.sync_targets()
    logger.info(
        f"Pretrained actor ({pretrain_config.bc_steps} cloning steps) and critics ({pretrain_config.td_steps} TD steps)"
    )
    return actor, critics

