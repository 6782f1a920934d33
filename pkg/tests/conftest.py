import numpy as np
import pytest

from more_offline_rl.agent import AgentConfig, PretrainConfig
from more_offline_rl.behavior import BehaviorPolicyConfig, generate_dataset
from more_offline_rl.boiler_env import CmdpSpec
from more_offline_rl.density_vae import VaeConfig, train_vae
from more_offline_rl.dynamics_model import DynamicsConfig, SensitivityConfig, train_dynamics
from more_offline_rl.restrictive_exploration import FilterConfig
from more_offline_rl.training_monitoring import monitor


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run slow acceptance recipes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def fresh_monitor():
    monitor.reset()
    yield monitor
    monitor.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return CmdpSpec(episode_length=20)


@pytest.fixture
def small_dataset(tiny_spec):
    return generate_dataset(tiny_spec, BehaviorPolicyConfig("medium", 0.3, seed=1), 200, seed=3)


@pytest.fixture
def tiny_dynamics_config():
    return DynamicsConfig(hidden_dims=(16,), learning_rate=1e-3, training_epochs=3, batch_size=32)


@pytest.fixture
def tiny_sensitivity_config():
    return SensitivityConfig(num_perturbations=4, noise_std=0.01)


@pytest.fixture
def tiny_vae_config():
    return VaeConfig(encoder_hidden=(16,), decoder_hidden=(16,), learning_rate=1e-3, training_epochs=3, batch_size=32)


@pytest.fixture
def tiny_agent_config():
    return AgentConfig(
        actor_hidden=(16,),
        critic_hidden=(16,),
        actor_learning_rate=1e-3,
        critic_learning_rate=1e-3,
        batch_size=16,
    )


@pytest.fixture
def tiny_pretrain_config():
    return PretrainConfig(bc_steps=20, td_steps=20, batch_size=16)


@pytest.fixture
def dynamics_model(small_dataset, tiny_dynamics_config):
    model, _ = train_dynamics(small_dataset, tiny_dynamics_config, seed=5)
    return model


@pytest.fixture
def density_model(small_dataset, tiny_vae_config):
    model, _ = train_vae(small_dataset, tiny_vae_config, seed=6)
    return model


@pytest.fixture
def tiny_filter_config(tiny_sensitivity_config):
    return FilterConfig(rollout_length=3, sensitivity=tiny_sensitivity_config)
