import json

import numpy as np
import pytest

from more_offline_rl.density_vae import elbo_density_batch
from more_offline_rl.dynamics_model import sensitivity_batch
from more_offline_rl.errors import CheckpointError, PreconditionError
from more_offline_rl.thresholds import (
    array_hash,
    compute_thresholds,
    load_preevaluation,
    load_thresholds,
    nearest_rank_percentile,
    pre_evaluate,
    save_preevaluation,
    save_thresholds,
    verify_thresholds,
)


@pytest.mark.parametrize("beta,expected", [(40, 4.0), (70, 7.0), (100, 10.0), (0.1, 1.0), (41, 5.0)])
def test_nearest_rank_on_one_to_ten(beta, expected):
    values = np.arange(10, 0, -1, dtype=np.float64)
    assert nearest_rank_percentile(values, beta) == expected


def test_percentile_is_a_member(rng):
    values = rng.normal(size=37)
    assert nearest_rank_percentile(values, 33.3) in values


@pytest.mark.parametrize("beta", [0.0, -5.0, 100.5])
def test_percentile_rejects_beta_out_of_range(beta):
    with pytest.raises(PreconditionError):
        nearest_rank_percentile(np.arange(3.0), beta)


def test_percentile_rejects_empty():
    with pytest.raises(PreconditionError):
        nearest_rank_percentile(np.array([]), 50)


def test_compute_thresholds_records_provenance():
    sens = np.arange(1.0, 11.0)
    dens = -np.arange(1.0, 11.0)
    thresholds = compute_thresholds(sens, dens, beta_u=70, beta_p=40)
    assert thresholds.sensitivity_threshold == 7.0
    assert thresholds.density_threshold == -7.0
    assert thresholds.count == 10
    assert thresholds.sensitivity_hash == array_hash(sens)
    verify_thresholds(thresholds, sens, dens)


def test_verify_detects_changed_arrays():
    sens = np.arange(1.0, 11.0)
    dens = -np.arange(1.0, 11.0)
    thresholds = compute_thresholds(sens, dens, 70, 40)
    tampered = sens.copy()
    tampered[0] += 1e-12
    with pytest.raises(PreconditionError):
        verify_thresholds(thresholds, tampered, dens)


def test_mismatched_arrays_rejected():
    with pytest.raises(PreconditionError):
        compute_thresholds(np.ones(3), np.ones(4), 50, 50)


def test_thresholds_file_round_trip(tmp_path):
    thresholds = compute_thresholds(np.arange(5.0), np.arange(5.0), 60, 20)
    path = tmp_path / "thresholds.json"
    save_thresholds(thresholds, path)
    assert load_thresholds(path) == thresholds


def test_bad_thresholds_file_rejected(tmp_path):
    path = tmp_path / "thresholds.json"
    path.write_text(json.dumps({"unexpected": 1}))
    with pytest.raises(CheckpointError):
        load_thresholds(path)


def test_preevaluation_file_is_bit_exact(tmp_path, rng):
    sens, dens = rng.random(20), rng.normal(size=20)
    path = tmp_path / "preevaluation.json"
    save_preevaluation(sens, dens, path)
    loaded_sens, loaded_dens = load_preevaluation(path)
    assert array_hash(loaded_sens) == array_hash(sens)
    assert array_hash(loaded_dens) == array_hash(dens)


def test_pre_evaluate_follows_seeded_draw_order(small_dataset, dynamics_model, density_model, tiny_sensitivity_config):
    sens, dens = pre_evaluate(small_dataset, dynamics_model, density_model, tiny_sensitivity_config, seed=8)
    assert sens.shape == dens.shape == (len(small_dataset),)
    assert np.all(sens >= 0)

    rng = np.random.default_rng(8)
    noise = rng.standard_normal((len(small_dataset), tiny_sensitivity_config.num_perturbations, 9))
    z_noise = rng.standard_normal((len(small_dataset), 1, density_model.latent_dim))
    np.testing.assert_array_equal(
        sens, sensitivity_batch(dynamics_model, small_dataset.states, small_dataset.actions, tiny_sensitivity_config, noise)
    )
    np.testing.assert_array_equal(
        dens, elbo_density_batch(density_model, small_dataset.states, small_dataset.actions, z_noise)
    )


def test_pre_evaluate_is_reproducible(small_dataset, dynamics_model, density_model, tiny_sensitivity_config):
    first = pre_evaluate(small_dataset, dynamics_model, density_model, tiny_sensitivity_config, seed=1)
    second = pre_evaluate(small_dataset, dynamics_model, density_model, tiny_sensitivity_config, seed=1)
    assert array_hash(first[0]) == array_hash(second[0])
    assert array_hash(first[1]) == array_hash(second[1])


def test_thresholds_rise_with_beta(rng):
    sensitivities, densities = rng.exponential(size=250), rng.normal(size=250)
    betas = np.linspace(0.5, 100.0, 60)
    levels = [compute_thresholds(sensitivities, densities, beta, beta) for beta in betas]
    assert np.all(np.diff([t.sensitivity_threshold for t in levels]) >= 0)
    assert np.all(np.diff([t.density_threshold for t in levels]) >= 0)
    assert levels[0].sensitivity_threshold < levels[-1].sensitivity_threshold
