"""
``more-rl`` command line: data generation, model training, threshold pre-evaluation, MORE training,
evaluation and ablation grids.

Exit codes: 0 success, 2 usage/config/precondition error, 3 data/format/checkpoint error,
4 numerical divergence.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl import monitor
from more_offline_rl.behavior import generate_dataset
from more_offline_rl.build_events import build_evaluation_event
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
from more_offline_rl.config import RunConfig, load_config, write_config
from more_offline_rl.dataset import dataset_hash, load_dataset, save_dataset
from more_offline_rl.density_vae import train_vae
from more_offline_rl.dynamics_model import train_dynamics
from more_offline_rl.error_handling_decorator import report_run_errors
from more_offline_rl.errors import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    DimensionMismatchError,
    DivergenceError,
    NonFiniteError,
    PreconditionError,
)
from more_offline_rl.evaluation import dataset_episode_returns, evaluate_policy
from more_offline_rl.metrics_io import (
    ABLATION_COLUMNS,
    DYNAMICS_REPORT_COLUMNS,
    SWEEP_COLUMNS,
    VAE_REPORT_COLUMNS,
    write_csv,
)
from more_offline_rl.thresholds import (
    compute_thresholds,
    load_preevaluation,
    load_thresholds,
    pre_evaluate,
    save_preevaluation,
    save_thresholds,
    verify_thresholds,
)
from more_offline_rl.trainer import METRIC_COLUMNS, VARIANTS, apply_variant, train_more
from more_offline_rl.training_monitoring import record_event

logger = logging.getLogger("more_offline_rl")

DYNAMICS_FILE = "dynamics.json"
VAE_FILE = "vae.json"
AGENT_FILE = "agent.json"
THRESHOLDS_FILE = "thresholds.json"
PREEVALUATION_FILE = "preevaluation.json"


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _resolve_config(args) -> RunConfig:
    """The file config with the command-line overrides folded in; this is what gets written out."""
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _hash(config: RunConfig, *sections: str) -> str:
    return config_hash(config.section_hash_payload(*sections))


def _expected(args, config: RunConfig, *sections: str) -> Optional[str]:
    """Checkpoint hashes are only enforced when a config file was passed explicitly."""
    return _hash(config, *sections) if args.config else None


def _require(path: Optional[str], flag: str) -> Path:
    if not path:
        raise PreconditionError(f"{flag} is required")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{flag}: {path} does not exist")
    return path


def _load_models(args, config: RunConfig):
    dynamics = dynamics_from_checkpoint(
        load_checkpoint(_require(args.dynamics, "--dynamics"), "dynamics", _expected(args, config, "dynamics"))
    )
    density = vae_from_checkpoint(load_checkpoint(_require(args.vae, "--vae"), "vae", _expected(args, config, "vae")))
    return dynamics, density


def _load_filter(args, config: RunConfig):
    thresholds_path = _require(args.thresholds, "--thresholds")
    thresholds = load_thresholds(thresholds_path)
    preevaluation = thresholds_path.parent / PREEVALUATION_FILE
    if preevaluation.exists():
        verify_thresholds(thresholds, *load_preevaluation(preevaluation))
    return config.filter_config().with_thresholds(thresholds)


def _output_dir(args, config: RunConfig) -> Path:
    out = args.out or config.output_dir
    if not out:
        raise PreconditionError("--out (or output_dir in the config) is required")
    directory = Path(out)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


@report_run_errors("gen-data")
def cmd_gen_data(args) -> int:
    config = load_config(args.config)
    dataset_config = config.dataset
    kind = args.kind or dataset_config.kind
    stds = dataset_config.exploration_std if kind == dataset_config.kind else None
    if args.exploration_std:
        single = kind == "medium" and len(args.exploration_std) == 1
        stds = args.exploration_std[0] if single else tuple(args.exploration_std)
    dataset_config = replace(
        dataset_config,
        kind=kind,
        exploration_std=stds,
        num_transitions=args.n if args.n is not None else dataset_config.num_transitions,
        seed=args.seed if args.seed is not None else dataset_config.seed,
    )
    config = replace(config, dataset=dataset_config)

    dataset = generate_dataset(
        config.env, dataset_config.behavior(), dataset_config.num_transitions, dataset_config.seed
    )
    out = Path(args.out)
    write_config(config, out.parent, f"{out.stem}.config.json")
    save_dataset(dataset, out)
    summary = {
        "count": len(dataset),
        "mean_reward": float(np.mean(dataset.rewards)),
        "mean_cost": float(np.mean(dataset.combined_costs)),
        "noise_tiers": dataset.metadata["noise_tiers"],
        "dataset_hash": dataset_hash(dataset),
    }
    print(json.dumps(summary, sort_keys=True))
    return consts.EXIT_OK


@report_run_errors("train-dynamics")
def cmd_train_dynamics(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(args, config)
    write_config(config, out)
    dataset = load_dataset(_require(args.data, "--data"))
    model, report = train_dynamics(dataset, config.dynamics, config.seed)
    save_checkpoint(dynamics_checkpoint(model, _hash(config, "dynamics")), out / DYNAMICS_FILE)
    write_csv(out / "dynamics_report.csv", DYNAMICS_REPORT_COLUMNS, report.rows())
    print(
        json.dumps(
            {
                "best_epoch": report.best_epoch,
                "best_val_loss": report.best_val_loss,
                "heldout_state_rmse": report.heldout_state_rmse.tolist(),
            },
            sort_keys=True,
        )
    )
    return consts.EXIT_OK


@report_run_errors("train-vae")
def cmd_train_vae(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(args, config)
    write_config(config, out)
    dataset = load_dataset(_require(args.data, "--data"))
    model, report = train_vae(dataset, config.vae, config.seed)
    save_checkpoint(vae_checkpoint(model, _hash(config, "vae")), out / VAE_FILE)
    write_csv(out / "vae_report.csv", VAE_REPORT_COLUMNS, report.rows())
    print(json.dumps({"final_elbo": report.epochs[-1]["elbo"], "epochs": len(report.epochs)}, sort_keys=True))
    return consts.EXIT_OK


@report_run_errors("pretrain-thresholds")
def cmd_pretrain_thresholds(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(args, config)
    betas = {"beta_u": args.beta_u, "beta_p": args.beta_p}
    config = replace(config, filter=replace(config.filter, **{k: v for k, v in betas.items() if v is not None}))
    write_config(config, out)
    dataset = load_dataset(_require(args.data, "--data"))
    dynamics, density = _load_models(args, config)
    filter_config = config.filter_config()
    sensitivities, densities = pre_evaluate(
        dataset, dynamics, density, filter_config.sensitivity, config.seed, filter_config.density_z_samples
    )
    thresholds = compute_thresholds(sensitivities, densities, filter_config.beta_u, filter_config.beta_p)
    save_thresholds(thresholds, out / THRESHOLDS_FILE)
    save_preevaluation(sensitivities, densities, out / PREEVALUATION_FILE)
    print(json.dumps(thresholds.to_dict(), sort_keys=True))
    return consts.EXIT_OK


def _train(args, config: RunConfig, dataset, dynamics, density, filter_config, spec=None):
    return train_more(
        dataset,
        dynamics,
        density,
        spec or config.env,
        config.agent,
        config.pretrain,
        filter_config,
        config.training,
        config.seed,
    )


@report_run_errors("train-more")
def cmd_train_more(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(args, config)
    write_config(config, out)
    dataset = load_dataset(_require(args.data, "--data"))
    dynamics, density = _load_models(args, config)
    result = _train(args, config, dataset, dynamics, density, _load_filter(args, config))
    save_checkpoint(
        agent_checkpoint(result.actor, result.critics, result.lagrange, _hash(config, "env", "agent")),
        out / AGENT_FILE,
    )
    write_csv(out / "metrics.csv", METRIC_COLUMNS, (m.to_row() for m in result.metrics))
    return consts.EXIT_OK


@report_run_errors("evaluate")
def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    actor, _, _ = agent_from_checkpoint(
        load_checkpoint(_require(args.agent, "--agent"), "agent", _expected(args, config, "env", "agent"))
    )
    seed = config.seed
    report = evaluate_policy(actor.act, config.env, args.episodes, seed)
    record_event(build_evaluation_event(report, config.env.cost_limit), consts.EvaluationEventName)
    summary = {
        "mean_return": report.mean_return,
        "mean_discounted_return": report.mean_discounted_return,
        "mean_discounted_cost": report.mean_discounted_cost,
        "cost_limit": config.env.cost_limit,
        "constraint_satisfied": report.mean_discounted_cost <= config.env.cost_limit,
        "aborted_episodes": report.aborted_episodes,
    }

    dataset = load_dataset(args.data) if args.data else None
    if dataset is not None:
        baseline = float(np.mean(dataset_episode_returns(dataset)))
        summary["behavior_mean_return"] = baseline
        summary["relative_improvement"] = (report.mean_return - baseline) / abs(baseline) if baseline else None

    if args.cost_limit_sweep:
        rows = []
        for limit in args.cost_limit_sweep:
            swept = report
            if args.retrain:
                if dataset is None:
                    raise PreconditionError("--retrain needs --data")
                spec = replace(config.env, cost_limit=limit)
                dynamics, density = _load_models(args, config)
                result = _train(args, config, dataset, dynamics, density, _load_filter(args, config), spec)
                swept = evaluate_policy(result.actor.act, spec, args.episodes, seed)
            record_event(build_evaluation_event(swept, limit, label="sweep"), consts.EvaluationEventName)
            rows.append(
                {
                    "cost_limit": limit,
                    "mean_return": swept.mean_return,
                    "mean_discounted_return": swept.mean_discounted_return,
                    "mean_discounted_cost": swept.mean_discounted_cost,
                    "satisfied": swept.mean_discounted_cost <= limit,
                }
            )
        summary["sweep"] = rows
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_config(config, out)
            write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)

    print(json.dumps(summary, sort_keys=True))
    return consts.EXIT_OK


@report_run_errors("ablate")
def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(args, config)
    write_config(config, out)
    dataset = load_dataset(_require(args.data, "--data"))
    dynamics, density = _load_models(args, config)
    seed = config.seed
    base_filter = config.filter_config()
    for variant in args.variants:
        if variant not in VARIANTS:
            raise PreconditionError(f"unknown variant {variant!r}; choose from {VARIANTS}")

    sensitivities, densities = pre_evaluate(
        dataset, dynamics, density, base_filter.sensitivity, seed, base_filter.density_z_samples
    )
    data_hash = dataset_hash(dataset)
    rollout_lengths = args.rollout_lengths or [base_filter.rollout_length]
    rows = []
    for variant in args.variants:
        for rollout_length in rollout_lengths:
            for beta_u in args.beta_u:
                for beta_p in args.beta_p:
                    thresholds = compute_thresholds(sensitivities, densities, beta_u, beta_p)
                    cell_filter = replace(base_filter, rollout_length=rollout_length).with_thresholds(thresholds)
                    cell_filter = apply_variant(cell_filter, variant)
                    logger.info(f"ablation cell {variant} beta_u={beta_u} beta_p={beta_p} H={rollout_length}")
                    result = _train(args, config, dataset, dynamics, density, cell_filter)
                    report = evaluate_policy(result.actor.act, config.env, config.training.eval_episodes, seed)
                    rows.append(
                        {
                            "variant": variant,
                            "beta_u": float(beta_u),
                            "beta_p": float(beta_p),
                            "rollout_length": rollout_length,
                            "l_u": cell_filter.sensitivity_threshold,
                            "l_p": cell_filter.density_threshold,
                            "dataset_hash": data_hash,
                            "eval_return": report.mean_return,
                            "eval_cost": report.mean_discounted_cost,
                        }
                    )
    write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    return consts.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="more-rl", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--telemetry", action="store_true", help="ship events to New Relic (needs a license key)")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="run configuration JSON")
        sub.add_argument("--seed", type=int)
        sub.set_defaults(handler=handler)
        return sub

    gen = command("gen-data", cmd_gen_data, "generate a behavior dataset")
    gen.add_argument("--kind", choices=("medium", "mixed"))
    gen.add_argument("--n", type=int)
    gen.add_argument("--exploration-std", type=_float_list)
    gen.add_argument("--out", required=True)

    for name, handler in (("train-dynamics", cmd_train_dynamics), ("train-vae", cmd_train_vae)):
        sub = command(name, handler, f"{name.split('-', 1)[1]} model training")
        sub.add_argument("--data", required=True)
        sub.add_argument("--out")

    thresholds = command("pretrain-thresholds", cmd_pretrain_thresholds, "pre-evaluate filter thresholds")
    thresholds.add_argument("--data", required=True)
    thresholds.add_argument("--dynamics", required=True)
    thresholds.add_argument("--vae", required=True)
    thresholds.add_argument("--beta-u", type=float)
    thresholds.add_argument("--beta-p", type=float)
    thresholds.add_argument("--out")

    more = command("train-more", cmd_train_more, "run MORE training")
    more.add_argument("--data", required=True)
    more.add_argument("--dynamics", required=True)
    more.add_argument("--vae", required=True)
    more.add_argument("--thresholds", required=True)
    more.add_argument("--out")

    evaluate = command("evaluate", cmd_evaluate, "evaluate a trained agent")
    evaluate.add_argument("--agent", required=True)
    evaluate.add_argument("--episodes", type=int, default=10)
    evaluate.add_argument("--data", help="dataset for the behavior-policy baseline and --retrain")
    evaluate.add_argument("--cost-limit-sweep", type=_float_list)
    evaluate.add_argument("--retrain", action="store_true")
    evaluate.add_argument("--dynamics")
    evaluate.add_argument("--vae")
    evaluate.add_argument("--thresholds")
    evaluate.add_argument("--out")

    ablate = command("ablate", cmd_ablate, "run an ablation grid")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--dynamics", required=True)
    ablate.add_argument("--vae", required=True)
    ablate.add_argument("--beta-u", type=_float_list, default=[40.0, 70.0])
    ablate.add_argument("--beta-p", type=_float_list, default=[10.0, 40.0, 70.0])
    ablate.add_argument("--variants", type=_str_list, default=list(VARIANTS))
    ablate.add_argument("--rollout-lengths", type=_int_list)
    ablate.add_argument("--out")
    return parser


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else os.getenv("MORE_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        monitor.initialization("more-offline-rl", metadata={"command": args.command}, remote=args.telemetry)
    except TypeError as err:
        logger.error(f"telemetry: {err}")
        return consts.EXIT_USAGE
    try:
        return args.handler(args)
    except (ConfigError, PreconditionError, DimensionMismatchError) as err:
        logger.error(f"{args.command}: {err}")
        return consts.EXIT_USAGE
    except (DatasetFormatError, CheckpointError, OSError) as err:
        logger.error(f"{args.command}: {err}")
        return consts.EXIT_DATA
    except (DivergenceError, NonFiniteError) as err:
        logger.error(f"{args.command}: {err}")
        return consts.EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
