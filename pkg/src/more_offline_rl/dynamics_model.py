"""
Learned dynamics f(s, a) -> (s', r, c) and the model-sensitivity score used to reject simulated steps.

One network maps the normalized (state, action) pair to
``[state target (state_dim), normalized reward, combined cost]``. The state target is the
state-scaled delta ``(s' - s) / state_std`` when ``predict_delta`` is set, else the normalized
next state.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl.build_events import build_epoch_event
from more_offline_rl.dataset import NormalizationStats, OfflineDataset
from more_offline_rl.errors import DivergenceError, NonFiniteError, PreconditionError
from more_offline_rl.nn_core import MlpSpec, Network, concat_inputs, mlp_value_and_gradient, mse_closure
from more_offline_rl.training_monitoring import record_event

logger = logging.getLogger("more_offline_rl")


@dataclass(frozen=True)
class DynamicsConfig:
    hidden_dims: Tuple[int, ...] = (200, 200, 200, 200)
    learning_rate: float = 1e-4
    predict_delta: bool = True
    training_epochs: int = 50
    batch_size: int = 256
    validation_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if not 0.0 < self.validation_fraction <= 0.5:
            raise PreconditionError(f"validation_fraction must lie in (0, 0.5], got {self.validation_fraction}")
        if self.learning_rate <= 0:
            raise PreconditionError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.training_epochs < 1 or self.batch_size < 1:
            raise PreconditionError("training_epochs and batch_size must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data


@dataclass(frozen=True)
class SensitivityConfig:
    num_perturbations: int = 20
    noise_std: float = 0.01

    def __post_init__(self):
        if self.num_perturbations < 2:
            raise PreconditionError(f"num_perturbations must be >= 2, got {self.num_perturbations}")
        if self.noise_std <= 0:
            raise PreconditionError(f"noise_std must be > 0, got {self.noise_std}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainingReport:
    epochs: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    heldout_state_rmse: Optional[np.ndarray] = None

    def rows(self) -> List[Dict[str, float]]:
        return [dict(row) for row in self.epochs]


class DynamicsModel:
    def __init__(self, network: Network, normalization: NormalizationStats, predict_delta: bool = True):
        state_dim = normalization.state_mean.shape[0]
        action_dim = normalization.action_mean.shape[0]
        if network.spec.input_dim != state_dim + action_dim or network.spec.output_dim != state_dim + 2:
            raise PreconditionError(
                f"dynamics network {network.spec.input_dim}->{network.spec.output_dim} does not fit "
                f"state_dim={state_dim}, action_dim={action_dim}"
            )
        self.network = network
        self.normalization = normalization
        self.predict_delta = predict_delta
        self.state_dim = state_dim
        self.action_dim = action_dim

    @classmethod
    def initialize(
        cls, normalization: NormalizationStats, config: DynamicsConfig, rng: np.random.Generator
    ) -> "DynamicsModel":
        state_dim = normalization.state_mean.shape[0]
        action_dim = normalization.action_mean.shape[0]
        spec = MlpSpec(state_dim + action_dim, config.hidden_dims, state_dim + 2)
        return cls(Network.initialize(spec, rng, config.learning_rate), normalization, config.predict_delta)

    def network_inputs(self, states, actions) -> np.ndarray:
        return concat_inputs(self.normalization.normalize_state(states), self.normalization.normalize_action(actions))

    def targets(self, states, actions, rewards, combined_costs, next_states) -> np.ndarray:
        norm = self.normalization
        states = np.asarray(states, dtype=np.float64)
        next_states = np.asarray(next_states, dtype=np.float64)
        if self.predict_delta:
            state_target = (next_states - states) / norm.state_std
        else:
            state_target = norm.normalize_state(next_states)
        reward_target = (np.asarray(rewards, dtype=np.float64) - norm.reward_mean) / norm.reward_std
        return np.column_stack([state_target, reward_target, np.asarray(combined_costs, dtype=np.float64)])

    def decode(self, states, outputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        norm = self.normalization
        outputs = np.asarray(outputs, dtype=np.float64)
        state_part = outputs[..., : self.state_dim]
        if self.predict_delta:
            next_states = np.asarray(states, dtype=np.float64) + state_part * norm.state_std
        else:
            next_states = norm.denormalize_state(state_part)
        rewards = np.maximum(outputs[..., self.state_dim] * norm.reward_std + norm.reward_mean, consts.REWARD_FLOOR)
        costs = np.maximum(outputs[..., self.state_dim + 1], 0.0)
        return next_states, rewards, costs


def _check_finite(name: str, values: np.ndarray):
    bad = np.flatnonzero(~np.isfinite(np.asarray(values, dtype=np.float64)))
    if bad.size:
        raise NonFiniteError(f"{name} is not finite", int(bad[0]))


def predict(model: DynamicsModel, s, a) -> Tuple[np.ndarray, Any, Any]:
    """Next state, reward (floored at 1e-6) and combined cost (floored at 0) for one pair or a batch."""
    _check_finite("state", s)
    _check_finite("action", a)
    return model.decode(s, model.network(model.network_inputs(s, a)))


def sensitivity_batch(model: DynamicsModel, states, actions, config: SensitivityConfig, noise) -> np.ndarray:
    """Sensitivity of every row given standard-normal draws ``noise`` of shape (rows, K, input_dim).

    Each row is perturbed by ``noise_std * noise`` in normalized input space. The score is the mean
    over output dimensions of the sample variance (ddof=1) of the change in the normalized network
    output (state delta, reward and cost in training units), not of the decoded (s', r, c).
    """
    inputs = np.atleast_2d(model.network_inputs(states, actions))
    noise = np.asarray(noise, dtype=np.float64)
    rows, input_dim = inputs.shape
    if noise.shape != (rows, config.num_perturbations, input_dim):
        raise PreconditionError(
            f"noise must have shape {(rows, config.num_perturbations, input_dim)}, got {noise.shape}"
        )
    base = model.network(inputs)
    perturbed = model.network((inputs[:, None, :] + config.noise_std * noise).reshape(-1, input_dim))
    deltas = perturbed.reshape(rows, config.num_perturbations, -1) - base[:, None, :]
    return np.var(deltas, axis=1, ddof=1).mean(axis=1)


def sensitivity(
    model: DynamicsModel, s, a, config: SensitivityConfig, seed: int, noise: Optional[np.ndarray] = None
) -> float:
    if noise is None:
        input_dim = model.state_dim + model.action_dim
        noise = np.random.default_rng(seed).standard_normal((config.num_perturbations, input_dim))
    return float(sensitivity_batch(model, s, a, config, np.asarray(noise)[None, ...])[0])


def _split(count: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(count)
    if count == 1:
        return order, order
    n_val = min(max(1, int(round(count * fraction))), count - 1)
    return order[n_val:], order[:n_val]


def train_dynamics(
    dataset: OfflineDataset, config: DynamicsConfig, seed: int
) -> Tuple[DynamicsModel, TrainingReport]:
    rng = np.random.default_rng(seed)
    model = DynamicsModel.initialize(dataset.normalization, config, rng)
    spec = model.network.spec
    inputs = model.network_inputs(dataset.states, dataset.actions)
    targets = model.targets(
        dataset.states, dataset.actions, dataset.rewards, dataset.combined_costs, dataset.next_states
    )
    train_idx, val_idx = _split(len(dataset), config.validation_fraction, rng)

    report = TrainingReport()
    best_params = model.network.params.copy()
    for epoch in range(1, config.training_epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        try:
            for start in range(0, order.size, config.batch_size):
                idx = order[start : start + config.batch_size]
                loss, grad = mlp_value_and_gradient(spec, model.network.params, inputs[idx], mse_closure(targets[idx]))
                model.network.apply_gradient(grad)
                total += loss * idx.size
        except NonFiniteError as err:
            raise DivergenceError("dynamics training", epoch, str(err)) from err

        train_loss = total / order.size
        val_loss = float(np.mean((model.network(inputs[val_idx]) - targets[val_idx]) ** 2))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(
                "dynamics training", epoch, f"train_loss={train_loss!r} val_loss={val_loss!r}"
            )
        row = {"epoch": epoch, "train_loss": float(train_loss), "val_loss": val_loss}
        report.epochs.append(row)
        record_event(build_epoch_event("dynamics", row), consts.ModelEpochEventName)
        logger.debug(f"dynamics epoch {epoch}: train_loss={train_loss:.6g} val_loss={val_loss:.6g}")
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = model.network.params.copy()

    model.network.params = best_params
    predicted, _, _ = predict(model, dataset.states[val_idx], dataset.actions[val_idx])
    errors = (predicted - dataset.next_states[val_idx]) / dataset.normalization.state_std
    report.heldout_state_rmse = np.sqrt(np.mean(errors**2, axis=0))
    logger.info(
        f"Dynamics model trained: best epoch {report.best_epoch}, val_loss {report.best_val_loss:.6g}, "
        f"held-out state RMSE {np.round(report.heldout_state_rmse, 4).tolist()}"
    )
    return model, report
