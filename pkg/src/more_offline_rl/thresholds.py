import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from more_offline_rl.dataset import OfflineDataset
from more_offline_rl.density_vae import DensityModel, elbo_density_batch
from more_offline_rl.dynamics_model import DynamicsModel, SensitivityConfig, sensitivity_batch
from more_offline_rl.errors import CheckpointError, PreconditionError

logger = logging.getLogger("more_offline_rl")

PREEVALUATION_CHUNK = 1024


@dataclass(frozen=True)
class PercentileThresholds:
    sensitivity_threshold: float
    density_threshold: float
    beta_u: float
    beta_p: float
    sensitivity_hash: str = ""
    density_hash: str = ""
    count: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def nearest_rank_percentile(values, beta: float) -> float:
    """Element at sorted index ceil(beta/100 * n) - 1; always a member of ``values``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise PreconditionError("nearest_rank_percentile needs a nonempty array")
    if not 0.0 < beta <= 100.0:
        raise PreconditionError(f"beta must lie in (0, 100], got {beta}")
    # exact rational arithmetic so beta * n / 100 lands on integers when it should
    rank = math.ceil(Fraction(beta).limit_denominator(10**6) * values.size / 100)
    return float(np.sort(values)[max(rank, 1) - 1])


def array_hash(values) -> str:
    data = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    return hashlib.sha256(data.tobytes()).hexdigest()


def pre_evaluate(
    dataset: OfflineDataset,
    dynamics: DynamicsModel,
    density: DensityModel,
    sensitivity_config: SensitivityConfig,
    seed: int,
    num_z_samples: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sensitivity and ELBO at every logged state-action pair."""
    rng = np.random.default_rng(seed)
    input_dim = dataset.state_dim + dataset.action_dim
    sensitivities = np.empty(len(dataset))
    densities = np.empty(len(dataset))
    for start in range(0, len(dataset), PREEVALUATION_CHUNK):
        stop = min(start + PREEVALUATION_CHUNK, len(dataset))
        states = dataset.states[start:stop]
        actions = dataset.actions[start:stop]
        noise = rng.standard_normal((stop - start, sensitivity_config.num_perturbations, input_dim))
        sensitivities[start:stop] = sensitivity_batch(dynamics, states, actions, sensitivity_config, noise)
        z_noise = rng.standard_normal((stop - start, num_z_samples, density.latent_dim))
        densities[start:stop] = elbo_density_batch(density, states, actions, z_noise)
    logger.info(
        f"Pre-evaluated {len(dataset)} pairs: sensitivity median {np.median(sensitivities):.6g}, "
        f"ELBO median {np.median(densities):.6g}"
    )
    return sensitivities, densities


def compute_thresholds(sensitivities, densities, beta_u: float, beta_p: float) -> PercentileThresholds:
    sensitivities = np.asarray(sensitivities, dtype=np.float64)
    densities = np.asarray(densities, dtype=np.float64)
    if sensitivities.shape != densities.shape:
        raise PreconditionError("sensitivity and density arrays must be evaluated on the same pairs")
    return PercentileThresholds(
        sensitivity_threshold=nearest_rank_percentile(sensitivities, beta_u),
        density_threshold=nearest_rank_percentile(densities, beta_p),
        beta_u=float(beta_u),
        beta_p=float(beta_p),
        sensitivity_hash=array_hash(sensitivities),
        density_hash=array_hash(densities),
        count=int(sensitivities.size),
    )


def verify_thresholds(thresholds: PercentileThresholds, sensitivities, densities):
    """Raise PreconditionError unless ``thresholds`` were derived from exactly these arrays."""
    if array_hash(sensitivities) != thresholds.sensitivity_hash or array_hash(densities) != thresholds.density_hash:
        raise PreconditionError("pre-evaluation arrays do not match the hashes recorded with the thresholds")
    expected = compute_thresholds(sensitivities, densities, thresholds.beta_u, thresholds.beta_p)
    if expected != thresholds:
        raise PreconditionError(
            f"thresholds disagree with their percentiles: recorded ({thresholds.sensitivity_threshold}, "
            f"{thresholds.density_threshold}), recomputed ({expected.sensitivity_threshold}, {expected.density_threshold})"
        )


def save_thresholds(thresholds: PercentileThresholds, path: Union[str, Path]):
    Path(path).write_text(json.dumps(thresholds.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_thresholds(path: Union[str, Path]) -> PercentileThresholds:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return PercentileThresholds(**data)
    except (json.JSONDecodeError, TypeError) as err:
        raise CheckpointError(f"{path} is not a thresholds file: {err}") from err


def save_preevaluation(sensitivities, densities, path: Union[str, Path]):
    payload = {
        "sensitivities": np.asarray(sensitivities, dtype=np.float64).tolist(),
        "densities": np.asarray(densities, dtype=np.float64).tolist(),
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")) + "\n", encoding="utf-8")


def load_preevaluation(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return np.asarray(data["sensitivities"], dtype=np.float64), np.asarray(data["densities"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError) as err:
        raise CheckpointError(f"{path} is not a pre-evaluation file: {err}") from err
