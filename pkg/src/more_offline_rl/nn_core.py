"""
Small float64 multilayer perceptrons with hand-written reverse-mode gradients and Adam.

Parameters of a network live in one flat vector laid out layer by layer: for every layer the
weight matrix (fan_in x fan_out, row-major) followed by its bias vector. Every learned component
(actor, critics, dynamics model, VAE encoder/decoder) is built from these pieces.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from more_offline_rl.errors import DimensionMismatchError, NonFiniteError

logger = logging.getLogger("more_offline_rl")

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

# maps network outputs to (scalar loss, d loss / d outputs)
LossClosure = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise DimensionMismatchError(f"all layer dimensions must be >= 1, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unsupported hidden activation: {self.hidden_activation}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation: {self.output_activation}")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpSpec":
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_dims=tuple(data["hidden_dims"]),
            output_dim=int(data["output_dim"]),
            hidden_activation=data.get("hidden_activation", "relu"),
            output_activation=data.get("output_activation", "identity"),
        )


@dataclass
class ForwardCache:
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    single: bool


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, size: int, learning_rate: float = 1e-3, **hyper) -> "AdamState":
        return cls(
            first_moment=np.zeros(size, dtype=np.float64),
            second_moment=np.zeros(size, dtype=np.float64),
            learning_rate=learning_rate,
            **hyper,
        )


@dataclass
class GradientCheckReport:
    max_relative_error: float
    passed: bool
    worst_index: int = -1
    numeric: np.ndarray = field(default=None, repr=False)
    analytic: np.ndarray = field(default=None, repr=False)


def _first_non_finite(values: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(~np.isfinite(values))
    return int(bad[0]) if bad.size else None


def _check_params(spec: MlpSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise DimensionMismatchError(
            f"parameter vector has shape {params.shape}, spec expects ({spec.param_count},)"
        )
    return params


def _as_batch(spec: MlpSpec, inputs) -> Tuple[np.ndarray, bool]:
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    batch = inputs.reshape(1, -1) if single else inputs
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise DimensionMismatchError(
            f"input has shape {inputs.shape}, spec expects last dimension {spec.input_dim}"
        )
    index = _first_non_finite(batch)
    if index is not None:
        raise NonFiniteError("network input is not finite", index)
    return batch, single


def _layers(spec: MlpSpec, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        weights = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_derivative(z: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        # subgradient 0 at exactly 0
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out, dtype=np.float64))
    return np.concatenate(chunks).astype(np.float64)


def mlp_forward_with_cache(spec: MlpSpec, params: np.ndarray, inputs) -> Tuple[np.ndarray, ForwardCache]:
    params = _check_params(spec, params)
    hidden, single = _as_batch(spec, inputs)
    layers = _layers(spec, params)
    last = len(layers) - 1

    activations = [hidden]
    pre_activations = []
    for index, (weights, bias) in enumerate(layers):
        z = hidden @ weights + bias
        kind = spec.output_activation if index == last else spec.hidden_activation
        hidden = _activate(z, kind)
        pre_activations.append(z)
        activations.append(hidden)

    cache = ForwardCache(activations, pre_activations, single)
    return (hidden[0] if single else hidden), cache


def mlp_forward(spec: MlpSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Evaluate the network on one input vector or on a (batch, input_dim) array."""
    outputs, _ = mlp_forward_with_cache(spec, params, inputs)
    return outputs


def mlp_backward(
    spec: MlpSpec, params: np.ndarray, cache: ForwardCache, grad_output
) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse-mode pass. Returns (d loss / d params, d loss / d inputs)."""
    params = _check_params(spec, params)
    delta = np.asarray(grad_output, dtype=np.float64)
    if cache.single:
        delta = delta.reshape(1, -1)
    if delta.shape != cache.activations[-1].shape:
        raise DimensionMismatchError(
            f"output gradient has shape {delta.shape}, expected {cache.activations[-1].shape}"
        )

    layers = _layers(spec, params)
    grad = np.zeros_like(params)
    grad_layers = _layers(spec, grad)
    last = len(layers) - 1
    for index in range(last, -1, -1):
        kind = spec.output_activation if index == last else spec.hidden_activation
        delta = delta * _activation_derivative(
            cache.pre_activations[index], cache.activations[index + 1], kind
        )
        grad_weights, grad_bias = grad_layers[index]
        grad_weights[...] = cache.activations[index].T @ delta
        grad_bias[...] = delta.sum(axis=0)
        delta = delta @ layers[index][0].T

    return grad, (delta[0] if cache.single else delta)


def mlp_value_and_gradient(
    spec: MlpSpec, params: np.ndarray, inputs, loss_closure: LossClosure
) -> Tuple[float, np.ndarray]:
    outputs, cache = mlp_forward_with_cache(spec, params, inputs)
    loss, grad_output = loss_closure(outputs)
    grad, _ = mlp_backward(spec, params, cache, grad_output)
    return float(loss), grad


def mlp_gradient(spec: MlpSpec, params: np.ndarray, inputs, loss_closure: LossClosure) -> np.ndarray:
    return mlp_value_and_gradient(spec, params, inputs, loss_closure)[1]


def mse_closure(targets) -> LossClosure:
    """Mean over every output entry of the squared error."""
    targets = np.asarray(targets, dtype=np.float64)

    def closure(outputs):
        diff = outputs - targets
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    return closure


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam. Returns new parameters and a new state; inputs are untouched."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == state.first_moment.shape == state.second_moment.shape):
        raise DimensionMismatchError(
            f"adam shapes differ: params {params.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape}/{state.second_moment.shape}"
        )
    if state.learning_rate <= 0:
        raise ValueError(f"learning_rate must be > 0, got {state.learning_rate}")
    index = _first_non_finite(grad)
    if index is not None:
        raise NonFiniteError("adam step rejected: gradient is not finite", index)

    step_count = state.step_count + 1
    first = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    second = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    first_hat = first / (1.0 - state.beta1**step_count)
    second_hat = second / (1.0 - state.beta2**step_count)
    updated = params - state.learning_rate * first_hat / (np.sqrt(second_hat) + state.epsilon)

    index = _first_non_finite(updated)
    if index is not None:
        raise NonFiniteError("adam step produced non-finite parameters", index)

    return updated, replace(state, first_moment=first, second_moment=second, step_count=step_count)


def numeric_gradient(objective: Callable[[np.ndarray], float], params: np.ndarray, step: float) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    shifted = np.array(params, dtype=np.float64, copy=True)
    grad = np.zeros_like(shifted)
    for index in range(shifted.size):
        original = shifted[index]
        shifted[index] = original + step
        upper = objective(shifted)
        shifted[index] = original - step
        lower = objective(shifted)
        shifted[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def check_gradient(
    objective: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradientCheckReport:
    if step <= 0 or tolerance <= 0:
        raise ValueError("step and tolerance must both be > 0")
    numeric = numeric_gradient(objective, params, step)
    analytic = np.asarray(analytic, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    relative = np.abs(analytic - numeric) / denominator
    worst = int(np.argmax(relative)) if relative.size else -1
    max_error = float(relative[worst]) if relative.size else 0.0
    if max_error >= tolerance:
        logger.debug(
            f"gradient check failed at coordinate {worst}: analytic={analytic[worst]!r} numeric={numeric[worst]!r}"
        )
    return GradientCheckReport(max_error, max_error < tolerance, worst, numeric, analytic)


def finite_diff_check(
    spec: MlpSpec,
    params: np.ndarray,
    inputs,
    loss_closure: LossClosure,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradientCheckReport:
    """Compare mlp_gradient against central differences coordinate-wise."""
    params = _check_params(spec, params)
    analytic = mlp_gradient(spec, params, inputs, loss_closure)

    def objective(shifted):
        return loss_closure(mlp_forward(spec, shifted, inputs))[0]

    return check_gradient(objective, params, analytic, step, tolerance)


class Network:
    """An MlpSpec, its parameter vector and the Adam state that trains it."""

    def __init__(self, spec: MlpSpec, params: np.ndarray, learning_rate: float = 1e-3):
        self.spec = spec
        self.params = _check_params(spec, params).copy()
        self.optimizer = AdamState.fresh(spec.param_count, learning_rate)

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator, learning_rate: float = 1e-3) -> "Network":
        return cls(spec, init_params(spec, rng), learning_rate)

    def __call__(self, inputs) -> np.ndarray:
        return mlp_forward(self.spec, self.params, inputs)

    def forward_with_cache(self, inputs) -> Tuple[np.ndarray, ForwardCache]:
        return mlp_forward_with_cache(self.spec, self.params, inputs)

    def backward(self, cache: ForwardCache, grad_output) -> Tuple[np.ndarray, np.ndarray]:
        return mlp_backward(self.spec, self.params, cache, grad_output)

    def apply_gradient(self, grad: np.ndarray):
        self.params, self.optimizer = adam_step(self.params, grad, self.optimizer)

    def copy(self) -> "Network":
        clone = Network(self.spec, self.params, self.optimizer.learning_rate)
        clone.optimizer = replace(
            self.optimizer,
            first_moment=self.optimizer.first_moment.copy(),
            second_moment=self.optimizer.second_moment.copy(),
        )
        return clone


def concat_inputs(*parts: Sequence[np.ndarray]) -> np.ndarray:
    arrays = [np.asarray(part, dtype=np.float64) for part in parts]
    if all(array.ndim == 1 for array in arrays):
        return np.concatenate(arrays)
    arrays = [array.reshape(1, -1) if array.ndim == 1 else array for array in arrays]
    return np.concatenate(arrays, axis=1)
