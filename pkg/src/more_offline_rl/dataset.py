"""
Offline transition datasets and the MOREDS1 file format.

A MOREDS1 file is newline-delimited JSON: line 1 is a header object
``{"magic": "MOREDS1", "state_dim", "action_dim", "m", "count", "metadata"}`` and every following
line is one transition ``{"s", "a", "r", "c", "c_comb", "s2", "done"}``. Floats are written with
``repr`` precision so a save/load round trip is bit exact.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

import more_offline_rl.consts as consts
from more_offline_rl.errors import (
    CountMismatchError,
    DimensionInconsistencyError,
    MagicMismatchError,
    MalformedRecordError,
    PreconditionError,
)

logger = logging.getLogger("more_offline_rl")

RECORD_KEYS = ("s", "a", "r", "c", "c_comb", "s2", "done")


@dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    cost_vector: np.ndarray
    combined_cost: float
    s_next: np.ndarray
    done: bool

    def equals(self, other: "Transition") -> bool:
        return (
            np.array_equal(self.s, other.s)
            and np.array_equal(self.a, other.a)
            and self.r == other.r
            and np.array_equal(self.cost_vector, other.cost_vector)
            and self.combined_cost == other.combined_cost
            and np.array_equal(self.s_next, other.s_next)
            and self.done == other.done
        )


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    reward_mean: float
    reward_std: float

    def normalize_state(self, states) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.state_mean) / self.state_std

    def denormalize_state(self, states) -> np.ndarray:
        return np.asarray(states, dtype=np.float64) * self.state_std + self.state_mean

    def normalize_action(self, actions) -> np.ndarray:
        return (np.asarray(actions, dtype=np.float64) - self.action_mean) / self.action_std

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "action_mean": self.action_mean.tolist(),
            "action_std": self.action_std.tolist(),
            "reward_mean": float(self.reward_mean),
            "reward_std": float(self.reward_std),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationStats":
        return cls(
            state_mean=np.asarray(data["state_mean"], dtype=np.float64),
            state_std=np.asarray(data["state_std"], dtype=np.float64),
            action_mean=np.asarray(data["action_mean"], dtype=np.float64),
            action_std=np.asarray(data["action_std"], dtype=np.float64),
            reward_mean=float(data["reward_mean"]),
            reward_std=float(data["reward_std"]),
        )

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "NormalizationStats":
        return cls(
            np.zeros(state_dim), np.ones(state_dim), np.zeros(action_dim), np.ones(action_dim), 0.0, 1.0
        )


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    cost_vectors: np.ndarray
    combined_costs: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


def array_stats(values: np.ndarray):
    """Per-column mean and population std, std floored."""
    values = np.asarray(values, dtype=np.float64)
    return values.mean(axis=0), np.maximum(values.std(axis=0), consts.STD_FLOOR)


def _frozen(array, dtype=np.float64, ndim=2) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    if ndim == 2 and array.ndim == 1:
        array = array.reshape(-1, 1)
    array.flags.writeable = False
    return array


class OfflineDataset:
    """Immutable column store of transitions plus normalization stats and provenance."""

    def __init__(
        self,
        states,
        actions,
        rewards,
        cost_vectors,
        combined_costs,
        next_states,
        dones,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.states = _frozen(states)
        self.actions = _frozen(actions)
        self.rewards = _frozen(rewards, ndim=1)
        self.cost_vectors = _frozen(cost_vectors)
        self.combined_costs = _frozen(combined_costs, ndim=1)
        self.next_states = _frozen(next_states)
        self.dones = _frozen(dones, dtype=bool, ndim=1)
        self.metadata = dict(metadata or {})
        self._validate()
        self.normalization = compute_normalization(self)
        self._successors = None

    def _validate(self):
        count = self.states.shape[0]
        if count == 0:
            raise PreconditionError("an offline dataset needs at least one transition")
        columns = {
            "actions": self.actions,
            "rewards": self.rewards,
            "cost_vectors": self.cost_vectors,
            "combined_costs": self.combined_costs,
            "next_states": self.next_states,
            "dones": self.dones,
        }
        for name, column in columns.items():
            if column.shape[0] != count:
                raise DimensionInconsistencyError(f"{name} has {column.shape[0]} rows, states has {count}")
        if self.next_states.shape[1] != self.states.shape[1]:
            raise DimensionInconsistencyError("s and s_next must have equal length")
        for name in ("states", "actions", "rewards", "cost_vectors", "combined_costs", "next_states"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PreconditionError(f"{name} contains non-finite values")
        if np.any(self.rewards <= 0):
            raise PreconditionError("rewards must be strictly positive")
        if np.any(self.combined_costs < 0):
            raise PreconditionError("combined costs must be nonnegative")

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], metadata=None) -> "OfflineDataset":
        if not transitions:
            raise PreconditionError("an offline dataset needs at least one transition")
        return cls(
            states=[t.s for t in transitions],
            actions=[t.a for t in transitions],
            rewards=[t.r for t in transitions],
            cost_vectors=[t.cost_vector for t in transitions],
            combined_costs=[t.combined_cost for t in transitions],
            next_states=[t.s_next for t in transitions],
            dones=[t.done for t in transitions],
            metadata=metadata,
        )

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def m(self) -> int:
        return self.cost_vectors.shape[1]

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, index: int) -> Transition:
        return Transition(
            s=self.states[index],
            a=self.actions[index],
            r=float(self.rewards[index]),
            cost_vector=self.cost_vectors[index],
            combined_cost=float(self.combined_costs[index]),
            s_next=self.next_states[index],
            done=bool(self.dones[index]),
        )

    @property
    def transitions(self) -> List[Transition]:
        return [self[i] for i in range(len(self))]

    def take(self, indices) -> TransitionBatch:
        indices = np.asarray(indices, dtype=np.int64)
        return TransitionBatch(
            states=self.states[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            cost_vectors=self.cost_vectors[indices],
            combined_costs=self.combined_costs[indices],
            next_states=self.next_states[indices],
            dones=self.dones[indices],
        )

    def subset(self, indices, metadata_update: Optional[Dict[str, Any]] = None) -> "OfflineDataset":
        batch = self.take(indices)
        metadata = dict(self.metadata)
        metadata.update(metadata_update or {})
        return OfflineDataset(
            batch.states,
            batch.actions,
            batch.rewards,
            batch.cost_vectors,
            batch.combined_costs,
            batch.next_states,
            batch.dones,
            metadata,
        )

    @property
    def successor_indices(self) -> np.ndarray:
        """Index of the logged transition that continues each record's trajectory, or -1."""
        if self._successors is None:
            successors = np.full(len(self), -1, dtype=np.int64)
            if len(self) > 1:
                continues = ~self.dones[:-1] & np.all(self.next_states[:-1] == self.states[1:], axis=1)
                successors[:-1][continues] = np.arange(1, len(self))[continues]
            self._successors = successors
        return self._successors

    def equals(self, other: "OfflineDataset") -> bool:
        return (
            len(self) == len(other)
            and self.metadata == other.metadata
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("states", "actions", "rewards", "cost_vectors", "combined_costs", "next_states", "dones")
            )
        )


def compute_normalization(dataset: OfflineDataset) -> NormalizationStats:
    if len(dataset) == 0:
        raise PreconditionError("cannot compute normalization of an empty dataset")
    state_mean, state_std = array_stats(np.vstack([dataset.states, dataset.next_states]))
    action_mean, action_std = array_stats(dataset.actions)
    reward_mean, reward_std = array_stats(dataset.rewards)
    return NormalizationStats(
        state_mean=state_mean,
        state_std=state_std,
        action_mean=action_mean,
        action_std=action_std,
        reward_mean=float(reward_mean),
        reward_std=float(reward_std),
    )


def sample_indices(dataset: OfflineDataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size < 1:
        raise PreconditionError(f"batch_size must be >= 1, got {batch_size}")
    return rng.integers(0, len(dataset), size=batch_size)


def sample_batch(dataset: OfflineDataset, batch_size: int, rng: np.random.Generator) -> List[Transition]:
    """Uniform sampling with replacement."""
    return [dataset[int(i)] for i in sample_indices(dataset, batch_size, rng)]


def sample_transition_batch(dataset: OfflineDataset, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
    return dataset.take(sample_indices(dataset, batch_size, rng))


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def serialize_dataset(dataset: OfflineDataset) -> str:
    header = {
        "magic": consts.DatasetMagic,
        "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim,
        "m": dataset.m,
        "count": len(dataset),
        "metadata": dataset.metadata,
    }
    lines = [_dumps(header)]
    for i in range(len(dataset)):
        record = {
            "s": dataset.states[i].tolist(),
            "a": dataset.actions[i].tolist(),
            "r": float(dataset.rewards[i]),
            "c": dataset.cost_vectors[i].tolist(),
            "c_comb": float(dataset.combined_costs[i]),
            "s2": dataset.next_states[i].tolist(),
            "done": bool(dataset.dones[i]),
        }
        lines.append(_dumps(record))
    return "\n".join(lines) + "\n"


def dataset_hash(dataset: OfflineDataset) -> str:
    return hashlib.sha256(serialize_dataset(dataset).encode("utf-8")).hexdigest()[:16]


def save_dataset(dataset: OfflineDataset, path: Union[str, Path]):
    path = Path(path)
    path.write_text(serialize_dataset(dataset), encoding="utf-8")
    logger.info(f"Saved {len(dataset)} transitions to {path}")


def _vector(record: Dict[str, Any], key: str, length: int, line_number: int) -> List[float]:
    value = record[key]
    if not isinstance(value, list):
        raise MalformedRecordError(f"field '{key}' must be a list", line_number)
    if len(value) != length:
        raise DimensionInconsistencyError(
            f"field '{key}' has length {len(value)}, header declares {length}", line_number
        )
    return [_number(item, key, line_number) for item in value]


def _number(value: Any, key: str, line_number: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecordError(f"field '{key}' holds a non-numeric value {value!r}", line_number)
    try:
        number = float(value)
    except OverflowError:
        number = math.inf
    if not math.isfinite(number):
        raise MalformedRecordError(f"field '{key}' holds a non-finite value {value!r}", line_number)
    return number


def parse_dataset(lines: Iterable[str]) -> OfflineDataset:
    # number lines before dropping blanks so errors point at the physical line
    numbered = [(index + 1, line) for index, line in enumerate(lines) if line.strip()]
    if not numbered:
        raise MalformedRecordError("missing header", 1)
    header_line, header_text = numbered[0]
    try:
        header = json.loads(header_text)
    except json.JSONDecodeError as err:
        raise MalformedRecordError(f"header is not valid JSON: {err}", header_line)
    if not isinstance(header, dict) or header.get("magic") != consts.DatasetMagic:
        found = header.get("magic") if isinstance(header, dict) else None
        raise MagicMismatchError(f"expected magic {consts.DatasetMagic!r}, found {found!r}")
    try:
        state_dim, action_dim, m, count = (
            int(header["state_dim"]),
            int(header["action_dim"]),
            int(header["m"]),
            int(header["count"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise MalformedRecordError(f"header field missing or invalid: {err}", header_line)

    records = numbered[1:]
    if len(records) != count:
        raise CountMismatchError(f"header declares {count} transitions, file holds {len(records)}")

    columns = {key: [] for key in RECORD_KEYS}
    for line_number, line in records:
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise MalformedRecordError(f"record is not valid JSON: {err}", line_number)
        if not isinstance(record, dict) or set(record) != set(RECORD_KEYS):
            raise MalformedRecordError(f"record must have exactly the keys {RECORD_KEYS}", line_number)
        columns["s"].append(_vector(record, "s", state_dim, line_number))
        columns["a"].append(_vector(record, "a", action_dim, line_number))
        columns["c"].append(_vector(record, "c", m, line_number))
        columns["s2"].append(_vector(record, "s2", state_dim, line_number))
        if not isinstance(record["done"], bool):
            raise MalformedRecordError("field 'done' must be a boolean", line_number)
        columns["r"].append(_number(record["r"], "r", line_number))
        columns["c_comb"].append(_number(record["c_comb"], "c_comb", line_number))
        columns["done"].append(record["done"])

    return OfflineDataset(
        states=np.asarray(columns["s"], dtype=np.float64).reshape(count, state_dim),
        actions=np.asarray(columns["a"], dtype=np.float64).reshape(count, action_dim),
        rewards=columns["r"],
        cost_vectors=np.asarray(columns["c"], dtype=np.float64).reshape(count, m),
        combined_costs=columns["c_comb"],
        next_states=np.asarray(columns["s2"], dtype=np.float64).reshape(count, state_dim),
        dones=columns["done"],
        metadata=header.get("metadata") or {},
    )


def load_dataset(path: Union[str, Path]) -> OfflineDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        dataset = parse_dataset(handle.read().split("\n"))
    logger.info(f"Loaded {len(dataset)} transitions from {path}")
    return dataset
