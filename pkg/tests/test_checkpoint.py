import json

import numpy as np
import pytest

from more_offline_rl.agent import LagrangeState, pretrain
from more_offline_rl.checkpoint import (
    agent_checkpoint,
    agent_from_checkpoint,
    config_hash,
    dynamics_checkpoint,
    dynamics_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
    vae_checkpoint,
    vae_from_checkpoint,
)
from more_offline_rl.density_vae import elbo_density
from more_offline_rl.dynamics_model import predict
from more_offline_rl.errors import CheckpointError


def test_dynamics_round_trip_predicts_identically(dynamics_model, small_dataset, tmp_path):
    path = tmp_path / "dynamics.json"
    save_checkpoint(dynamics_checkpoint(dynamics_model, "abc"), path)
    restored = dynamics_from_checkpoint(load_checkpoint(path, "dynamics", "abc"))
    s, a = small_dataset.states[:5], small_dataset.actions[:5]
    for original, loaded in zip(predict(dynamics_model, s, a), predict(restored, s, a)):
        np.testing.assert_array_equal(original, loaded)


def test_vae_round_trip_scores_identically(density_model, small_dataset, tmp_path):
    path = tmp_path / "vae.json"
    save_checkpoint(vae_checkpoint(density_model, "h"), path)
    restored = vae_from_checkpoint(load_checkpoint(path, "vae"))
    s, a = small_dataset.states[0], small_dataset.actions[0]
    assert elbo_density(restored, s, a, seed=1) == elbo_density(density_model, s, a, seed=1)


def test_agent_round_trip_keeps_targets_and_lambda(small_dataset, tiny_agent_config, tiny_pretrain_config, tmp_path):
    actor, critics = pretrain(small_dataset, tiny_agent_config, tiny_pretrain_config, seed=0)
    critics.cost_target = critics.cost_target + 1.0
    lagrange = LagrangeState(0.3, 0.01, 5.0)
    path = tmp_path / "agent.json"
    save_checkpoint(agent_checkpoint(actor, critics, lagrange, "h"), path)
    actor2, critics2, lagrange2 = agent_from_checkpoint(load_checkpoint(path, "agent"))
    np.testing.assert_array_equal(actor2.act(small_dataset.states[:3]), actor.act(small_dataset.states[:3]))
    np.testing.assert_array_equal(critics2.cost_target, critics.cost_target)
    np.testing.assert_array_equal(critics2.reward_targets[1], critics.reward_targets[1])
    assert lagrange2 == lagrange
    assert critics2.rho == critics.rho


def test_saving_twice_gives_identical_bytes(dynamics_model, tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(dynamics_checkpoint(dynamics_model, "h"), first)
    save_checkpoint(dynamics_checkpoint(dynamics_model, "h"), second)
    assert first.read_bytes() == second.read_bytes()


def test_wrong_kind_rejected(dynamics_model, tmp_path):
    path = tmp_path / "dynamics.json"
    save_checkpoint(dynamics_checkpoint(dynamics_model, "h"), path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "vae")


def test_config_hash_mismatch_rejected(dynamics_model, tmp_path):
    path = tmp_path / "dynamics.json"
    save_checkpoint(dynamics_checkpoint(dynamics_model, "written"), path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "dynamics", "expected")


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"magic": "OTHER", "kind": "vae"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "vae")


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"magic": "MORECKPT1"')
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "vae")


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
