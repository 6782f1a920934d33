"""
Run configuration: one JSON document with a section per component.

Every section is optional and missing keys take the dataclass defaults. Unknown keys at any level
raise ConfigError naming the dotted path (``agent.gama``), so typos never pass silently.

    {
      "env":         CmdpSpec fields (gamma, cost_limit, reward_weight_alpha_r, cost_weights, episode_length)
      "dataset":     {"kind", "num_transitions", "exploration_std", "seed"}
      "dynamics":    DynamicsConfig fields
      "sensitivity": SensitivityConfig fields
      "vae":         VaeConfig fields
      "filter":      {"beta_u", "beta_p", "kappa", "rollout_length", "density_z_samples", "rollout_noise_std"}
      "agent":       AgentConfig fields
      "pretrain":    PretrainConfig fields
      "training":    TrainingConfig fields
      "seed":        int
      "output_dir":  str or null
    }
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from more_offline_rl.agent import AgentConfig, PretrainConfig
from more_offline_rl.behavior import MEDIUM_NOISE_STD, MIXED_NOISE_TIERS, BehaviorPolicyConfig
from more_offline_rl.boiler_env import CmdpSpec
from more_offline_rl.density_vae import VaeConfig
from more_offline_rl.dynamics_model import DynamicsConfig, SensitivityConfig
from more_offline_rl.errors import ConfigError
from more_offline_rl.restrictive_exploration import FilterConfig
from more_offline_rl.trainer import TrainingConfig

logger = logging.getLogger("more_offline_rl")

# filter keys that come from the sensitivity section or a thresholds file instead
FILTER_EXCLUDED = ("sensitivity", "sensitivity_threshold", "density_threshold")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "medium"
    num_transitions: int = 100_000
    exploration_std: Optional[Union[float, Tuple[float, ...]]] = None
    seed: int = 0

    def __post_init__(self):
        if self.num_transitions < 1:
            raise ConfigError(f"dataset.num_transitions must be >= 1, got {self.num_transitions}")
        self.behavior()

    def behavior(self) -> BehaviorPolicyConfig:
        std = self.exploration_std
        if std is None:
            std = MIXED_NOISE_TIERS if self.kind == "mixed" else MEDIUM_NOISE_STD
        return BehaviorPolicyConfig(self.kind, std, self.seed)


@dataclass(frozen=True)
class RunConfig:
    env: CmdpSpec = field(default_factory=CmdpSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    def filter_config(self) -> FilterConfig:
        return replace(self.filter, sensitivity=self.sensitivity)

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for section in SECTIONS:
            values = _plain(dataclasses.asdict(getattr(self, section)))
            if section == "filter":
                values = {k: v for k, v in values.items() if k not in FILTER_EXCLUDED}
            data[section] = values
        data["seed"] = self.seed
        data["output_dir"] = self.output_dir
        return data

    def section_hash_payload(self, *sections: str) -> Dict[str, Any]:
        data = self.to_dict()
        return {name: data[name] for name in sections}


SECTIONS = {
    "env": CmdpSpec,
    "dataset": DatasetConfig,
    "dynamics": DynamicsConfig,
    "sensitivity": SensitivityConfig,
    "vae": VaeConfig,
    "filter": FilterConfig,
    "agent": AgentConfig,
    "pretrain": PretrainConfig,
    "training": TrainingConfig,
}


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build_section(name: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    if name == "filter":
        allowed -= set(FILTER_EXCLUDED)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {name}.{key}")
    values = {key: tuple(value) if isinstance(value, list) else value for key, value in data.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value in {name}: {err}") from err


def parse_config(data: Dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("the run configuration must be a JSON object")
    for key in data:
        if key not in SECTIONS and key not in ("seed", "output_dir"):
            raise ConfigError(f"unknown config key: {key}")
    sections = {name: _build_section(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError(f"output_dir must be a string or null, got {output_dir!r}")
    return RunConfig(**sections, seed=seed, output_dir=output_dir)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return parse_config(data)


def write_config(config: RunConfig, directory: Union[str, Path], filename: str = "config.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / filename
    path.write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote effective configuration to {path}")
    return path
