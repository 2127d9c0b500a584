"""Partitioned state representation and the demonstration dataset container.

States are split into a continuous block (float32, pre-normalized to roughly
[-1, 1]) and a categorical block of small non-negative integer symbols where
0 means "empty/unknown". Trajectories store their states as two stacked
arrays so that augmentation and training can work on whole episodes at once;
:class:`StateVector` and :class:`Transition` are the per-step views.

On disk a dataset is JSONL: a header object on the first line followed by one
object per transition, episodes being contiguous runs of equal
``episode_id``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .rng import RngStream

FORMAT_VERSION = 1
ACTION_COUNT = 9
CONT_DTYPE = np.float32
CAT_DTYPE = np.int64


class DatasetError(ValueError):
    """Raised for malformed datasets or files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class StateSchema:
    continuous_names: tuple
    categorical_names: tuple
    categorical_cardinalities: tuple
    normalization: tuple = ()
    # optional structure hints consumed by the policy network:
    # {"self": [...], "entities": [[...], ...], "flags": [...], "map": [...], "map_shape": [5, 5, 5]}
    feature_groups: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "continuous_names", tuple(self.continuous_names))
        object.__setattr__(self, "categorical_names", tuple(self.categorical_names))
        object.__setattr__(self, "categorical_cardinalities",
                           tuple(int(c) for c in self.categorical_cardinalities))
        norm = tuple(self.normalization) or tuple("none" for _ in self.continuous_names)
        object.__setattr__(self, "normalization", norm)
        if self.continuous_dim < 1 or self.categorical_dim < 1:
            raise DatasetError("schema needs at least one continuous and one categorical feature")
        if len(set(self.continuous_names)) != self.continuous_dim:
            raise DatasetError("continuous feature names must be unique")
        if len(set(self.categorical_names)) != self.categorical_dim:
            raise DatasetError("categorical feature names must be unique")
        if len(self.categorical_cardinalities) != self.categorical_dim:
            raise DatasetError("one cardinality per categorical feature is required")
        if min(self.categorical_cardinalities) < 2:
            raise DatasetError("categorical cardinalities must be >= 2")
        if len(self.normalization) != self.continuous_dim:
            raise DatasetError("one normalization entry per continuous feature is required")

    @property
    def continuous_dim(self) -> int:
        return len(self.continuous_names)

    @property
    def categorical_dim(self) -> int:
        return len(self.categorical_names)

    @property
    def cardinality_array(self) -> np.ndarray:
        return np.asarray(self.categorical_cardinalities, dtype=CAT_DTYPE)

    def to_header(self) -> dict:
        return {
            "continuous_names": list(self.continuous_names),
            "categorical_names": list(self.categorical_names),
            "categorical_cardinalities": list(self.categorical_cardinalities),
            "normalization": list(self.normalization),
            "feature_groups": self.feature_groups,
        }

    @classmethod
    def from_header(cls, header: dict) -> "StateSchema":
        try:
            return cls(
                continuous_names=header["continuous_names"],
                categorical_names=header["categorical_names"],
                categorical_cardinalities=header["categorical_cardinalities"],
                normalization=header.get("normalization", ()),
                feature_groups=header.get("feature_groups"),
            )
        except KeyError as exc:
            raise DatasetError(f"schema header missing field {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, StateSchema):
            return NotImplemented
        return self.to_header() == other.to_header()

    def __hash__(self):
        return hash(json.dumps(self.to_header(), sort_keys=True))

    def check_categorical(self, cat: np.ndarray) -> None:
        cat = np.asarray(cat)
        if cat.shape[-1] != self.categorical_dim:
            raise DatasetError(
                f"categorical block has {cat.shape[-1]} entries, schema expects {self.categorical_dim}")
        if cat.size and (cat.min() < 0 or np.any(cat >= self.cardinality_array)):
            raise DatasetError("categorical value out of range")


@dataclass(frozen=True, eq=False)
class StateVector:
    continuous: np.ndarray
    categorical: np.ndarray

    def __post_init__(self):
        cont = np.array(self.continuous, dtype=CONT_DTYPE).reshape(-1) + CONT_DTYPE(0)
        cat = np.array(self.categorical, dtype=CAT_DTYPE).reshape(-1)
        object.__setattr__(self, "continuous", _frozen(cont))
        object.__setattr__(self, "categorical", _frozen(cat))

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return (np.array_equal(self.continuous, other.continuous)
                and np.array_equal(self.categorical, other.categorical))

    def conforms(self, schema: StateSchema) -> None:
        if self.continuous.shape[0] != schema.continuous_dim:
            raise DatasetError("continuous block length does not match schema")
        schema.check_categorical(self.categorical)


@dataclass(frozen=True)
class Transition:
    state: StateVector
    action: int

    def __post_init__(self):
        if not 0 <= int(self.action) < ACTION_COUNT:
            raise DatasetError(f"action {self.action} outside [0, {ACTION_COUNT})")
        object.__setattr__(self, "action", int(self.action))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode stored as stacked arrays."""

    episode_id: int
    continuous: np.ndarray
    categorical: np.ndarray
    actions: np.ndarray
    success: bool = True

    def __post_init__(self):
        cont = np.array(self.continuous, dtype=CONT_DTYPE, ndmin=2) + CONT_DTYPE(0)  # no -0.0
        cat = np.array(self.categorical, dtype=CAT_DTYPE, ndmin=2)
        act = np.array(self.actions, dtype=CAT_DTYPE).reshape(-1)
        if act.shape[0] == 0:
            raise DatasetError("trajectory must be non-empty")
        if cont.shape[0] != act.shape[0] or cat.shape[0] != act.shape[0]:
            raise DatasetError("state and action counts differ within trajectory")
        if not np.all(np.isfinite(cont)):
            raise DatasetError("non-finite continuous value")
        if act.min() < 0 or act.max() >= ACTION_COUNT:
            raise DatasetError("action index out of range")
        object.__setattr__(self, "episode_id", int(self.episode_id))
        object.__setattr__(self, "success", bool(self.success))
        object.__setattr__(self, "continuous", _frozen(cont))
        object.__setattr__(self, "categorical", _frozen(cat))
        object.__setattr__(self, "actions", _frozen(act))

    @classmethod
    def from_transitions(cls, episode_id: int, transitions: Sequence[Transition],
                         success: bool = True) -> "Trajectory":
        if not transitions:
            raise DatasetError("trajectory must be non-empty")
        return cls(
            episode_id,
            np.stack([t.state.continuous for t in transitions]),
            np.stack([t.state.categorical for t in transitions]),
            np.array([t.action for t in transitions]),
            success,
        )

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def state(self, k: int) -> StateVector:
        return StateVector(self.continuous[k], self.categorical[k])

    def transition(self, k: int) -> Transition:
        return Transition(self.state(k), int(self.actions[k]))

    @property
    def transitions(self) -> list[Transition]:
        return [self.transition(k) for k in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.episode_id == other.episode_id and self.success == other.success
                and np.array_equal(self.continuous, other.continuous)
                and np.array_equal(self.categorical, other.categorical)
                and np.array_equal(self.actions, other.actions))


@dataclass(frozen=True, eq=False)
class DemoDataset:
    schema: StateSchema
    trajectories: tuple
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise DatasetError("dataset must contain at least one trajectory")
        for traj in self.trajectories:
            if traj.continuous.shape[1] != self.schema.continuous_dim:
                raise DatasetError(f"episode {traj.episode_id}: continuous width mismatch")
            self.schema.check_categorical(traj.categorical)

    @property
    def sample_count(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def episode_count(self) -> int:
        return len(self.trajectories)

    def __len__(self) -> int:
        return self.sample_count

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All samples stacked as (continuous, categorical, actions)."""
        return (np.concatenate([t.continuous for t in self.trajectories]),
                np.concatenate([t.categorical for t in self.trajectories]),
                np.concatenate([t.actions for t in self.trajectories]))

    def __eq__(self, other):
        if not isinstance(other, DemoDataset):
            return NotImplemented
        return (self.schema == other.schema and self.provenance == other.provenance
                and len(self.trajectories) == len(other.trajectories)
                and all(a == b for a, b in zip(self.trajectories, other.trajectories)))


# --- serialization -------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.9g" % x


def _record_line(episode_id: int, step: int, cont: np.ndarray, cat: np.ndarray, action: int) -> str:
    return ('{"episode_id": %d, "step": %d, "continuous": [%s], "categorical": [%s], "action": %d}'
            % (episode_id, step, ", ".join(_fmt(v) for v in cont.tolist()),
               ", ".join(str(v) for v in cat.tolist()), action))


def dumps_dataset(d: DemoDataset) -> str:
    header = {"format_version": FORMAT_VERSION, **d.schema.to_header(),
              "provenance": d.provenance,
              "episodes": [{"episode_id": t.episode_id, "success": t.success} for t in d.trajectories]}
    lines = [json.dumps(header)]
    for t in d.trajectories:
        for k in range(len(t)):
            lines.append(_record_line(t.episode_id, k, t.continuous[k], t.categorical[k], int(t.actions[k])))
    return "\n".join(lines) + "\n"


def save_dataset(d: DemoDataset, path) -> None:
    if not isinstance(d, DemoDataset) or not d.trajectories:
        raise DatasetError("refusing to save an empty dataset")
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


def loads_dataset(text: str) -> DemoDataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetError("line 1: missing schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line 1: malformed header ({exc.msg})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"line 1: unsupported format_version {header.get('format_version')!r}")
    schema = StateSchema.from_header(header)
    outcomes = {int(e["episode_id"]): bool(e["success"]) for e in header.get("episodes", [])}

    runs: dict[int, list] = {}
    order: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            eid, step = int(rec["episode_id"]), int(rec["step"])
            cont, cat, action = rec["continuous"], rec["categorical"], int(rec["action"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: malformed record ({exc})") from None
        if len(cont) != schema.continuous_dim or len(cat) != schema.categorical_dim:
            raise DatasetError(f"line {lineno}: record does not match schema header dimensions")
        if not order or order[-1] != eid:
            if eid in runs:
                raise DatasetError(f"line {lineno}: episode {eid} is not contiguous")
            runs[eid] = []
            order.append(eid)
        if step != len(runs[eid]):
            raise DatasetError(f"line {lineno}: expected step {len(runs[eid])}, got {step}")
        if not 0 <= action < ACTION_COUNT:
            raise DatasetError(f"line {lineno}: action {action} out of range")
        for j, v in enumerate(cat):
            if not 0 <= v < schema.categorical_cardinalities[j]:
                raise DatasetError(f"line {lineno}: categorical value out of range "
                                   f"({schema.categorical_names[j]}={v})")
        runs[eid].append((cont, cat, action))

    for eid in outcomes:
        if eid not in runs:
            raise DatasetError(f"episode {eid}: trajectory must be non-empty")
    trajs = []
    for eid in order:
        recs = runs[eid]
        trajs.append(Trajectory(
            eid,
            np.array([r[0] for r in recs], dtype=CONT_DTYPE),
            np.array([r[1] for r in recs], dtype=CAT_DTYPE),
            np.array([r[2] for r in recs], dtype=CAT_DTYPE),
            outcomes.get(eid, True),
        ))
    if not trajs:
        raise DatasetError("dataset must contain at least one trajectory")
    return DemoDataset(schema, trajs, header.get("provenance", ""))


def load_dataset(path) -> DemoDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


# --- subsampling ---------------------------------------------------------

def episodes_for_fraction(n_episodes: int, fraction: float) -> int:
    """Round-half-up of ``fraction * n_episodes``."""
    return int(math.floor(fraction * n_episodes + 0.5))


def subsample_episodes(d: DemoDataset, fraction: float, seed: int) -> DemoDataset:
    """Keep a uniformly chosen subset of whole episodes, in original order."""
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"fraction must lie in (0, 1], got {fraction}")
    n = d.episode_count
    k = episodes_for_fraction(n, fraction)
    if k < 1:
        raise DatasetError(f"fraction {fraction} of {n} episodes selects no episode")
    if k == n:
        return d
    gen = RngStream(seed).child("subsample").generator
    keep = np.sort(gen.choice(n, size=k, replace=False))
    note = f"{d.provenance}; subsample fraction={fraction} seed={seed}".lstrip("; ")
    return DemoDataset(d.schema, [d.trajectories[i] for i in keep], note)
