"""
MORECKPT1 checkpoints: one JSON document per trained component.

``{"magic", "kind", "config_hash", "networks": {name: {"spec", "params"}}, "normalization", "extra"}``.
Floats are written with repr precision, so saving the same parameters twice gives identical bytes.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl.agent import ActorPolicy, CriticSet, LagrangeState
from more_offline_rl.dataset import NormalizationStats
from more_offline_rl.density_vae import DensityModel
from more_offline_rl.dynamics_model import DynamicsModel
from more_offline_rl.errors import CheckpointError
from more_offline_rl.nn_core import MlpSpec, Network

logger = logging.getLogger("more_offline_rl")

KINDS = ("dynamics", "vae", "agent")

PathLike = Union[str, Path]


def config_hash(config: Dict[str, Any]) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class Checkpoint:
    kind: str
    config_hash: str
    networks: Dict[str, Network]
    normalization: NormalizationStats
    extra: Dict[str, Any] = field(default_factory=dict)

    def network(self, name: str) -> Network:
        try:
            return self.networks[name]
        except KeyError:
            raise CheckpointError(f"{self.kind} checkpoint has no network named {name!r}") from None


def save_checkpoint(checkpoint: Checkpoint, path: PathLike):
    if checkpoint.kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {checkpoint.kind!r}")
    document = {
        "magic": consts.CheckpointMagic,
        "kind": checkpoint.kind,
        "config_hash": checkpoint.config_hash,
        "networks": {
            name: {"spec": net.spec.to_dict(), "params": net.params.tolist()}
            for name, net in sorted(checkpoint.networks.items())
        },
        "normalization": checkpoint.normalization.to_dict(),
        "extra": checkpoint.extra,
    }
    Path(path).write_text(json.dumps(document, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    logger.info(f"Saved {checkpoint.kind} checkpoint to {path}")


def load_checkpoint(path: PathLike, kind: str, expected_hash: Optional[str] = None) -> Checkpoint:
    """Load and validate; a wrong magic, kind or config hash raises CheckpointError."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path} is not valid JSON: {err}") from err
    if not isinstance(document, dict) or document.get("magic") != consts.CheckpointMagic:
        raise CheckpointError(f"{path} is not a {consts.CheckpointMagic} checkpoint")
    if document.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {document.get('kind')!r} checkpoint, expected {kind!r}")
    if expected_hash is not None and document.get("config_hash") != expected_hash:
        raise CheckpointError(
            f"{path} was written for config {document.get('config_hash')}, expected {expected_hash}"
        )
    try:
        networks = {
            name: Network(MlpSpec.from_dict(entry["spec"]), np.asarray(entry["params"], dtype=np.float64))
            for name, entry in document["networks"].items()
        }
        normalization = NormalizationStats.from_dict(document["normalization"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"{path} is malformed: {err}") from err
    return Checkpoint(kind, document["config_hash"], networks, normalization, document.get("extra", {}))


def dynamics_checkpoint(model: DynamicsModel, hash_: str) -> Checkpoint:
    return Checkpoint(
        "dynamics", hash_, {"dynamics": model.network}, model.normalization, {"predict_delta": model.predict_delta}
    )


def dynamics_from_checkpoint(checkpoint: Checkpoint) -> DynamicsModel:
    return DynamicsModel(
        checkpoint.network("dynamics"), checkpoint.normalization, bool(checkpoint.extra.get("predict_delta", True))
    )


def vae_checkpoint(model: DensityModel, hash_: str) -> Checkpoint:
    return Checkpoint("vae", hash_, {"decoder": model.decoder, "encoder": model.encoder}, model.normalization)


def vae_from_checkpoint(checkpoint: Checkpoint) -> DensityModel:
    return DensityModel(checkpoint.network("encoder"), checkpoint.network("decoder"), checkpoint.normalization)


def agent_checkpoint(actor: ActorPolicy, critics: CriticSet, lagrange: LagrangeState, hash_: str) -> Checkpoint:
    networks = {
        "actor": actor.network,
        "reward_critic_1": critics.reward_critics[0],
        "reward_critic_2": critics.reward_critics[1],
        "cost_critic": critics.cost_critic,
    }
    for name, params in (
        ("reward_target_1", critics.reward_targets[0]),
        ("reward_target_2", critics.reward_targets[1]),
        ("cost_target", critics.cost_target),
    ):
        networks[name] = Network(critics.spec, params)
    extra = {
        "lambda": lagrange.lambda_,
        "dual_step_size": lagrange.step_size,
        "cost_limit": lagrange.cost_limit,
        "rho": critics.rho,
        "exploration_std": actor.exploration_std,
    }
    return Checkpoint("agent", hash_, networks, actor.normalization, extra)


def agent_from_checkpoint(checkpoint: Checkpoint):
    """Rebuild (actor, critics, lagrange) from an agent checkpoint."""
    extra = checkpoint.extra
    actor = ActorPolicy(checkpoint.network("actor"), checkpoint.normalization, float(extra.get("exploration_std", 0.1)))
    critics = CriticSet(
        [checkpoint.network("reward_critic_1"), checkpoint.network("reward_critic_2")],
        checkpoint.network("cost_critic"),
        checkpoint.normalization,
        float(extra.get("rho", 0.005)),
    )
    critics.reward_targets = [checkpoint.network("reward_target_1").params, checkpoint.network("reward_target_2").params]
    critics.cost_target = checkpoint.network("cost_target").params
    lagrange = LagrangeState(float(extra["lambda"]), float(extra["dual_step_size"]), float(extra["cost_limit"]))
    return actor, critics, lagrange
