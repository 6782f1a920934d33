import math
from dataclasses import replace

import numpy as np
import pytest

from more_offline_rl.agent import pretrain
from more_offline_rl.boiler_env import CmdpSpec
from more_offline_rl.errors import DivergenceError, NonFiniteError, PreconditionError
from more_offline_rl.restrictive_exploration import FilterConfig
from more_offline_rl.trainer import METRIC_COLUMNS, SEED_HIGH, TrainingConfig, apply_variant, train_more
from more_offline_rl.training_monitoring import monitor


@pytest.fixture
def run_more(small_dataset, dynamics_model, density_model, tiny_agent_config, tiny_pretrain_config, tiny_filter_config):
    def run(spec=None, agent_config=None, filter_config=None, training_config=None, seed=0, **kwargs):
        return train_more(
            small_dataset,
            dynamics_model,
            density_model,
            spec or CmdpSpec(episode_length=20),
            agent_config or tiny_agent_config,
            tiny_pretrain_config,
            filter_config or tiny_filter_config,
            training_config or TrainingConfig(steps=4, eval_interval=2, eval_episodes=1),
            seed,
            **kwargs,
        )

    return run


def test_metrics_cover_every_step(run_more, tiny_agent_config, fresh_monitor):
    fresh_monitor.start("test", remote=False)
    result = run_more()
    assert [m.step for m in result.metrics] == [1, 2, 3, 4]
    assert all(m.n_real == tiny_agent_config.batch_size for m in result.metrics)
    assert [step for step, _ in result.evaluations] == [2, 4]
    assert result.metrics[0].eval_return is None
    assert result.metrics[1].eval_return == result.evaluations[0][1].mean_return
    assert len(monitor.events_named("MoreTrainingStep")) == 4
    assert len(monitor.events_named("MoreEvaluation")) == 2


def test_rows_follow_metric_columns(run_more):
    row = run_more().metrics[0].to_row()
    assert tuple(row) == METRIC_COLUMNS
    assert "lambda" in row


def test_training_is_reproducible(run_more):
    first = [m.to_dict() for m in run_more(seed=3).metrics]
    second = [m.to_dict() for m in run_more(seed=3).metrics]
    assert first == second


def test_lambda_follows_projected_ascent(run_more, tiny_agent_config):
    spec = CmdpSpec(episode_length=20, cost_limit=0.5)
    result = run_more(spec=spec, training_config=TrainingConfig(steps=5, eval_interval=0))
    previous = tiny_agent_config.initial_lambda
    for metrics in result.metrics:
        expected = max(0.0, previous + tiny_agent_config.dual_step_size * (metrics.mean_qc - 0.5))
        assert metrics.lambda_ == pytest.approx(expected, rel=1e-12, abs=1e-15)
        previous = metrics.lambda_
    assert result.lagrange.lambda_ == previous


def test_generous_limit_keeps_lambda_at_zero(run_more):
    result = run_more(spec=CmdpSpec(episode_length=20, cost_limit=1e6), training_config=TrainingConfig(steps=3, eval_interval=0))
    assert all(m.lambda_ == 0.0 for m in result.metrics)


def test_unconstrained_mode_freezes_lambda(run_more, tiny_agent_config):
    config = replace(tiny_agent_config, constrained=False, initial_lambda=0.25)
    result = run_more(agent_config=config, training_config=TrainingConfig(steps=3, eval_interval=0))
    assert all(m.lambda_ == 0.25 for m in result.metrics)


def test_no_filter_variant_keeps_every_simulated_step(run_more, tiny_filter_config, tiny_agent_config):
    strict = FilterConfig(
        sensitivity_threshold=0.0, density_threshold=1e6, rollout_length=2, sensitivity=tiny_filter_config.sensitivity
    )
    result = run_more(filter_config=apply_variant(strict, "no-filter"), training_config=TrainingConfig(steps=2, eval_interval=0))
    for metrics in result.metrics:
        assert metrics.n_discard == 0 and metrics.n_neg == 0
        assert metrics.n_pos == 2 * tiny_agent_config.batch_size
        assert metrics.positive_ratio == 1.0


def test_full_filter_with_zero_threshold_uses_real_data_only(run_more, tiny_filter_config, tiny_agent_config):
    strict = FilterConfig(sensitivity_threshold=0.0, rollout_length=2, sensitivity=tiny_filter_config.sensitivity)
    result = run_more(filter_config=strict, training_config=TrainingConfig(steps=2, eval_interval=0))
    for metrics in result.metrics:
        assert metrics.n_pos == metrics.n_neg == 0
        assert metrics.n_discard == tiny_agent_config.batch_size
        assert math.isnan(metrics.positive_ratio)


def test_variants():
    base = FilterConfig(sensitivity_threshold=0.2, density_threshold=-3.0, kappa=5.0)
    assert apply_variant(base, "full") == base
    no_penalty = apply_variant(base, "no-penalty")
    assert no_penalty.kappa == 0.0 and no_penalty.sensitivity_threshold == 0.2
    no_filter = apply_variant(base, "no-filter")
    assert (no_filter.sensitivity_threshold, no_filter.density_threshold, no_filter.kappa) == (math.inf, -math.inf, 0.0)
    with pytest.raises(PreconditionError):
        apply_variant(base, "bogus")


def test_non_finite_update_becomes_divergence(run_more, monkeypatch):
    def broken(*args, **kwargs):
        raise NonFiniteError("reward TD target is not finite", 0)

    monkeypatch.setattr("more_offline_rl.trainer.critic_update", broken)
    with pytest.raises(DivergenceError) as err:
        run_more()
    assert err.value.step == 1
    assert err.value.phase == "train_more"


def test_step_callback_sees_every_step(run_more):
    seen = []
    run_more(training_config=TrainingConfig(steps=3, eval_interval=0), step_callback=seen.append)
    assert [m.step for m in seen] == [1, 2, 3]
    assert all(np.isfinite(m.qr_loss) for m in seen)


def test_zero_steps_returns_the_pretrained_agent(run_more, small_dataset, tiny_agent_config, tiny_pretrain_config, tiny_filter_config):
    result = run_more(training_config=TrainingConfig(steps=0, eval_interval=0), seed=5)
    pretrain_seed, _ = (int(s) for s in np.random.default_rng(5).integers(0, SEED_HIGH, size=2))
    actor, critics = pretrain(
        small_dataset, tiny_agent_config, tiny_pretrain_config, pretrain_seed, tiny_filter_config.rollout_noise_std
    )
    assert result.metrics == [] and result.evaluations == []
    assert result.lagrange.lambda_ == tiny_agent_config.initial_lambda
    assert np.array_equal(result.actor.network.params, actor.network.params)
    assert np.array_equal(result.critics.cost_critic.params, critics.cost_critic.params)
