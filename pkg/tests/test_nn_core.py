import numpy as np
import pytest

from more_offline_rl.errors import DimensionMismatchError, NonFiniteError
from more_offline_rl.nn_core import (
    AdamState,
    MlpSpec,
    Network,
    adam_step,
    concat_inputs,
    finite_diff_check,
    init_params,
    mlp_backward,
    mlp_forward,
    mlp_forward_with_cache,
    mse_closure,
)


@pytest.fixture
def tanh_spec():
    return MlpSpec(input_dim=4, hidden_dims=(5, 3), output_dim=2, hidden_activation="tanh")


def test_param_count_counts_weights_and_biases():
    spec = MlpSpec(input_dim=9, hidden_dims=(200, 200), output_dim=8)
    assert spec.param_count == (9 + 1) * 200 + (200 + 1) * 200 + (200 + 1) * 8


def test_spec_rejects_zero_width_layer():
    with pytest.raises(DimensionMismatchError):
        MlpSpec(input_dim=3, hidden_dims=(0,), output_dim=1)


def test_init_params_zero_biases_and_bounded_weights(rng):
    spec = MlpSpec(input_dim=3, hidden_dims=(4,), output_dim=2)
    params = init_params(spec, rng)
    assert params.shape == (spec.param_count,)
    first_bias = params[12:16]
    assert np.all(first_bias == 0.0)
    assert np.all(np.abs(params[:12]) <= np.sqrt(6.0 / 7.0))


def test_forward_single_and_batch_agree(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    batch = rng.normal(size=(6, 4))
    outputs = mlp_forward(tanh_spec, params, batch)
    assert outputs.shape == (6, 2)
    single = mlp_forward(tanh_spec, params, batch[2])
    assert single.shape == (2,)
    np.testing.assert_allclose(single, outputs[2], rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_input_width(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    with pytest.raises(DimensionMismatchError):
        mlp_forward(tanh_spec, params, np.zeros(3))


def test_forward_rejects_wrong_param_length(tanh_spec):
    with pytest.raises(DimensionMismatchError):
        mlp_forward(tanh_spec, np.zeros(tanh_spec.param_count - 1), np.zeros(4))


def test_forward_rejects_non_finite_input(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    inputs = np.zeros(4)
    inputs[1] = np.nan
    with pytest.raises(NonFiniteError):
        mlp_forward(tanh_spec, params, inputs)


def test_tanh_gradient_matches_finite_differences(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    inputs = rng.normal(size=(7, 4))
    targets = rng.normal(size=(7, 2))
    report = finite_diff_check(tanh_spec, params, inputs, mse_closure(targets), step=1e-5, tolerance=1e-4)
    assert report.passed, report.max_relative_error


def test_input_gradient_matches_finite_differences(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    inputs = rng.normal(size=4)
    weights = np.array([0.7, -1.3])

    def objective(x):
        return float(np.dot(weights, mlp_forward(tanh_spec, params, x)))

    _, cache = mlp_forward_with_cache(tanh_spec, params, inputs)
    _, grad_inputs = mlp_backward(tanh_spec, params, cache, weights)
    step = 1e-6
    numeric = np.array(
        [(objective(inputs + step * e) - objective(inputs - step * e)) / (2 * step) for e in np.eye(4)]
    )
    np.testing.assert_allclose(grad_inputs, numeric, rtol=1e-5, atol=1e-8)


def test_backward_rejects_mismatched_output_gradient(tanh_spec, rng):
    params = init_params(tanh_spec, rng)
    _, cache = mlp_forward_with_cache(tanh_spec, params, np.zeros((3, 4)))
    with pytest.raises(DimensionMismatchError):
        mlp_backward(tanh_spec, params, cache, np.zeros((3, 5)))


def test_adam_first_step_moves_by_learning_rate():
    state = AdamState.fresh(1, learning_rate=1e-3)
    updated, new_state = adam_step(np.array([0.0]), np.array([1.0]), state)
    assert updated[0] == pytest.approx(-1e-3, rel=1e-4)
    assert new_state.step_count == 1
    assert state.step_count == 0


def test_adam_rejects_non_finite_gradient():
    state = AdamState.fresh(2)
    with pytest.raises(NonFiniteError):
        adam_step(np.zeros(2), np.array([1.0, np.inf]), state)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.fresh(2))


def test_network_fits_linear_map(rng):
    spec = MlpSpec(input_dim=2, hidden_dims=(16,), output_dim=1, hidden_activation="tanh")
    network = Network.initialize(spec, rng, learning_rate=1e-2)
    inputs = rng.uniform(-1, 1, size=(64, 2))
    targets = (inputs @ np.array([0.5, -0.25])).reshape(-1, 1)

    def loss():
        return float(np.mean((network(inputs) - targets) ** 2))

    start = loss()
    for _ in range(300):
        outputs, cache = network.forward_with_cache(inputs)
        _, grad_output = mse_closure(targets)(outputs)
        grad, _ = network.backward(cache, grad_output)
        network.apply_gradient(grad)
    assert loss() < 0.1 * start


def test_network_copy_is_independent(rng):
    spec = MlpSpec(input_dim=2, hidden_dims=(3,), output_dim=1)
    network = Network.initialize(spec, rng)
    clone = network.copy()
    network.apply_gradient(np.ones(spec.param_count))
    assert not np.array_equal(clone.params, network.params)
    assert clone.optimizer.step_count == 0


def test_concat_inputs_broadcasts_single_rows():
    joined = concat_inputs(np.zeros((3, 2)), np.ones((3, 1)))
    assert joined.shape == (3, 3)
    assert concat_inputs(np.zeros(2), np.ones(1)).shape == (3,)
