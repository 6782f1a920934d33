import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl.agent import (
    ActorPolicy,
    AgentConfig,
    CriticSet,
    LagrangeState,
    PretrainConfig,
    actor_update,
    critic_update,
    lambda_update,
    mean_cost_value,
    pretrain,
    soft_update,
)
from more_offline_rl.boiler_env import CmdpSpec
from more_offline_rl.build_events import build_evaluation_event, build_training_step_event
from more_offline_rl.dataset import OfflineDataset, sample_indices
from more_offline_rl.density_vae import DensityModel
from more_offline_rl.dynamics_model import DynamicsModel
from more_offline_rl.errors import DivergenceError, MoreError, NonFiniteError, PreconditionError
from more_offline_rl.evaluation import EvaluationReport, evaluate_policy
from more_offline_rl.restrictive_exploration import (
    ORIGIN_NEGATIVE,
    ORIGIN_POSITIVE,
    ORIGIN_REAL,
    FilterConfig,
    build_local_buffer,
    restrictive_exploration,
)
from more_offline_rl.training_monitoring import record_event

logger = logging.getLogger("more_offline_rl")

SEED_HIGH = np.iinfo(np.int64).max

VARIANTS = ("full", "no-filter", "no-penalty")

METRIC_COLUMNS = (
    "step",
    "lambda",
    "mean_qc",
    "qr_loss",
    "qc_loss",
    "actor_obj",
    "n_pos",
    "n_neg",
    "n_discard",
    "eval_return",
    "eval_cost",
)


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 1000
    eval_interval: int = 100
    eval_episodes: int = 5

    def __post_init__(self):
        if self.steps < 0:
            raise PreconditionError(f"steps must be >= 0, got {self.steps}")
        if self.eval_interval < 0 or self.eval_episodes < 1:
            raise PreconditionError("eval_interval must be >= 0 and eval_episodes >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class StepMetrics:
    step: int
    lambda_: float
    mean_qc: float
    qr_loss: float
    qc_loss: float
    actor_obj: float
    n_real: int
    n_pos: int
    n_neg: int
    n_discard: int
    eval_return: Optional[float] = None
    eval_cost: Optional[float] = None

    @property
    def positive_ratio(self) -> float:
        simulated = self.n_pos + self.n_neg
        return self.n_pos / simulated if simulated else math.nan

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data

    def to_row(self) -> Dict[str, Any]:
        data = self.to_dict()
        return {column: data[column] for column in METRIC_COLUMNS}


@dataclass
class MoreResult:
    actor: ActorPolicy
    critics: CriticSet
    lagrange: LagrangeState
    metrics: List[StepMetrics] = field(default_factory=list)
    evaluations: List[Tuple[int, EvaluationReport]] = field(default_factory=list)


def apply_variant(filter_config: FilterConfig, variant: str) -> FilterConfig:
    """``no-filter`` admits every simulated step unpenalized; ``no-penalty`` keeps only the sensitivity filter."""
    if variant not in VARIANTS:
        raise PreconditionError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "no-filter":
        return replace(filter_config, sensitivity_threshold=math.inf, density_threshold=-math.inf, kappa=0.0)
    if variant == "no-penalty":
        return replace(filter_config, kappa=0.0)
    return filter_config


def train_more(
    dataset: OfflineDataset,
    dynamics: DynamicsModel,
    density: DensityModel,
    spec: CmdpSpec,
    agent_config: AgentConfig,
    pretrain_config: PretrainConfig,
    filter_config: FilterConfig,
    training_config: TrainingConfig,
    seed: int,
    step_callback: Optional[Callable[[StepMetrics], None]] = None,
) -> MoreResult:
    rng = np.random.default_rng(seed)
    pretrain_seed, eval_seed = (int(s) for s in rng.integers(0, SEED_HIGH, size=2))

    actor, critics = pretrain(dataset, agent_config, pretrain_config, pretrain_seed, filter_config.rollout_noise_std)
    lagrange = LagrangeState(agent_config.initial_lambda, agent_config.dual_step_size, spec.cost_limit)
    result = MoreResult(actor, critics, lagrange)

    for step in range(1, training_config.steps + 1):
        try:
            real = dataset.take(sample_indices(dataset, agent_config.batch_size, rng))
            exploration = restrictive_exploration(
                real, actor, dynamics, density, filter_config, int(rng.integers(0, SEED_HIGH))
            )
            buffer = build_local_buffer(real, exploration.positive, exploration.negative)
            losses = critic_update(buffer, critics, actor, agent_config.gamma)
            objective = actor_update(buffer.states, actor, critics, lagrange, agent_config.constrained)
            if agent_config.constrained:
                lagrange = lambda_update(lagrange, buffer.states, actor, critics)
            soft_update(critics)
            mean_qc = mean_cost_value(buffer.states, actor, critics)
        except NonFiniteError as err:
            raise DivergenceError("train_more", step, str(err)) from err
        except MoreError as err:
            logger.error(f"train_more aborted at step {step}: {err}")
            raise

        counts = buffer.counts()
        metrics = StepMetrics(
            step=step,
            lambda_=lagrange.lambda_,
            mean_qc=mean_qc,
            qr_loss=losses.reward_loss,
            qc_loss=losses.cost_loss,
            actor_obj=objective,
            n_real=counts[ORIGIN_REAL],
            n_pos=counts[ORIGIN_POSITIVE],
            n_neg=counts[ORIGIN_NEGATIVE],
            n_discard=exploration.discarded,
        )
        if training_config.eval_interval and step % training_config.eval_interval == 0:
            report = evaluate_policy(actor.act, spec, training_config.eval_episodes, eval_seed)
            metrics.eval_return = report.mean_return
            metrics.eval_cost = report.mean_discounted_cost
            result.evaluations.append((step, report))
            record_event(build_evaluation_event(report, spec.cost_limit, label=f"step-{step}"), consts.EvaluationEventName)
            logger.info(
                f"step {step}: return {report.mean_return:.4f}, discounted cost {report.mean_discounted_cost:.4f}, "
                f"lambda {lagrange.lambda_:.4f}"
            )

        result.metrics.append(metrics)
        record_event(build_training_step_event(metrics.to_dict()), consts.TrainingStepEventName)
        if step_callback is not None:
            step_callback(metrics)

    result.lagrange = lagrange
    logger.info(f"MORE training finished after {training_config.steps} steps (lambda {lagrange.lambda_:.4f})")
    return result
