import logging
import math
import uuid
from datetime import datetime
from typing import Any, Dict, Mapping, Optional

logger = logging.getLogger("more_offline_rl")


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def build_training_step_event(metrics: Mapping[str, Any]) -> Dict[str, Any]:
    event = {
        "id": str(uuid.uuid4()),
        "step": int(metrics["step"]),
        "lambda": _finite_or_none(metrics.get("lambda")),
        "mean_qc": _finite_or_none(metrics.get("mean_qc")),
        "qr_loss": _finite_or_none(metrics.get("qr_loss")),
        "qc_loss": _finite_or_none(metrics.get("qc_loss")),
        "actor_obj": _finite_or_none(metrics.get("actor_obj")),
        "n_real": metrics.get("n_real"),
        "n_pos": metrics.get("n_pos"),
        "n_neg": metrics.get("n_neg"),
        "n_discard": metrics.get("n_discard"),
        "vendor": "more-offline-rl",
    }
    n_sim = (metrics.get("n_pos") or 0) + (metrics.get("n_neg") or 0)
    event["positive_ratio"] = metrics.get("n_pos", 0) / n_sim if n_sim else None
    if metrics.get("eval_return") is not None:
        event["eval_return"] = _finite_or_none(metrics["eval_return"])
        event["eval_cost"] = _finite_or_none(metrics.get("eval_cost"))

    return event


def build_epoch_event(component: str, row: Mapping[str, Any]) -> Dict[str, Any]:
    event = {
        "id": str(uuid.uuid4()),
        "component": component,
        "timestamp": datetime.now(),
        "vendor": "more-offline-rl",
    }
    for key, value in row.items():
        event[key] = int(value) if key == "epoch" else _finite_or_none(value)

    return event


def build_evaluation_event(
    report, cost_limit: Optional[float] = None, label: str = "policy"
) -> Dict[str, Any]:
    event = {
        "id": str(uuid.uuid4()),
        "label": label,
        "episodes": len(report.episode_returns),
        "aborted_episodes": len(report.aborted_episodes),
        "mean_return": _finite_or_none(report.mean_return),
        "mean_discounted_return": _finite_or_none(report.mean_discounted_return),
        "mean_discounted_cost": _finite_or_none(report.mean_discounted_cost),
        "vendor": "more-offline-rl",
    }
    if cost_limit is not None:
        event["cost_limit"] = cost_limit
        event["constraint_satisfied"] = report.mean_discounted_cost <= cost_limit

    return event


def build_run_error_event(phase: str, error: BaseException) -> Dict[str, Any]:
    return {
        "id": str(uuid.uuid4()),
        "timestamp": datetime.now(),
        "phase": phase,
        "error_type": type(error).__name__,
        "error_message": str(error)[:4095],
        "error_step": getattr(error, "step", None),
        "vendor": "more-offline-rl",
    }
