"""Feature-space state augmentations and their composition.

Six transforms are available. ``gauss``, ``uni``, ``sca``, ``sm`` and ``drc``
touch only the continuous block of a state; ``drs`` touches only the
categorical block. Actions are never modified.

Every transform is implemented once, on a stack of states (shape ``(T, dim)``),
drawing its randomness row by row from one generator. The single-state
functions (``apply_gauss`` and friends) are the ``T == 1`` case, so consuming a
stream one transition at a time gives exactly the same draws as augmenting a
whole trajectory in one call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Sequence

import numpy as np

from .dataset import (CAT_DTYPE, CONT_DTYPE, DemoDataset, StateVector, Trajectory,
                      Transition)
from .rng import RngStream, as_generator

KINDS = ("gauss", "uni", "sca", "sm", "drc", "drs")
_ORDER = {k: i for i, k in enumerate(KINDS)}

GAUSS_SIGMAS = (0.03, 0.003, 0.0003, 0.00003)
DEFAULT_SIGMA = 0.0003
DEFAULTS = {
    "gauss": {"mu": 0.0, "sigma": DEFAULT_SIGMA},
    "uni": {"lam": 0.0003},
    "sca": {"mode": "literal", "alpha": 0.0003, "beta": 0.0006},
    "sm": {"beta_shape": 0.4},
    "drc": {"n": 3},
    "drs": {"n": 12},
}
SCALE_MODES = ("literal", "centered")
CLAMP_LIMIT = 1.5


class AugmentationError(ValueError):
    pass


def sigma_label(sigma: float) -> str:
    """``eX`` label for sigma = 3 * 10**-X, or an explicit value otherwise."""
    if sigma > 0:
        x = -math.log10(sigma / 3.0)
        if abs(x - round(x)) < 1e-9:
            return f"e{int(round(x))}"
    return f"s{sigma:g}"


def sigma_from_label(label: str) -> float:
    if label.startswith("e") and label[1:].isdigit():
        return float(f"3e-{int(label[1:])}")
    if label.startswith("s"):
        return float(label[1:])
    raise AugmentationError(f"bad gauss suffix {label!r}")


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    params: MappingProxyType = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AugmentationError(f"unknown augmentation kind {self.kind!r}")
        merged = dict(DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise AugmentationError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged.update(self.params)
        p = merged
        if self.kind == "gauss" and p["sigma"] < 0:
            raise AugmentationError("gauss: sigma must be >= 0")
        if self.kind == "uni" and p["lam"] < 0:
            raise AugmentationError("uni: lambda must be >= 0")
        if self.kind == "sca":
            if p["mode"] not in SCALE_MODES:
                raise AugmentationError(f"sca: mode must be one of {SCALE_MODES}")
            if p["alpha"] > p["beta"]:
                raise AugmentationError("sca: alpha must be <= beta")
        if self.kind == "sm" and p["beta_shape"] <= 0:
            raise AugmentationError("sm: beta shape must be > 0")
        if self.kind in ("drc", "drs") and (int(p["n"]) != p["n"] or p["n"] < 0):
            raise AugmentationError(f"{self.kind}: n must be a non-negative integer")
        object.__setattr__(self, "params", MappingProxyType(merged))

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def __eq__(self, other):
        return (isinstance(other, AugmentationSpec) and self.kind == other.kind
                and dict(self.params) == dict(other.params))

    @property
    def label(self) -> str:
        if self.kind == "gauss":
            return f"gauss_{sigma_label(self.params['sigma'])}"
        return self.kind

    @classmethod
    def parse(cls, token: str, scale_mode: str = "literal") -> "AugmentationSpec":
        kind, _, suffix = token.strip().partition("_")
        if kind == "gauss":
            sigma = sigma_from_label(suffix) if suffix else DEFAULT_SIGMA
            return cls("gauss", {"sigma": sigma})
        if suffix:
            raise AugmentationError(f"only gauss takes a suffix, got {token!r}")
        if kind == "sca":
            return cls("sca", {"mode": scale_mode})
        return cls(kind)


# --- transforms on stacks of states ---------------------------------------

def _as_f64(cont) -> np.ndarray:
    return np.asarray(cont, dtype=np.float64)


def _out(cont64: np.ndarray) -> np.ndarray:
    return cont64.astype(CONT_DTYPE) + CONT_DTYPE(0)


def _random_subset_mask(gen: np.random.Generator, rows: int, dim: int, n: int) -> np.ndarray:
    # n smallest of i.i.d. uniform keys == uniform n-subset without replacement
    keys = gen.random((rows, dim))
    idx = np.argsort(keys, axis=1, kind="stable")[:, :n]
    mask = np.zeros((rows, dim), dtype=bool)
    np.put_along_axis(mask, idx, True, axis=1)
    return mask


def transform_block(spec: AugmentationSpec, cont: np.ndarray, cat: np.ndarray,
                    gen: np.random.Generator, cont_next: np.ndarray | None = None,
                    has_next: np.ndarray | None = None, mix_eps: np.ndarray | None = None):
    """Apply one transform to ``T`` stacked states; returns (cont, cat).

    For ``sm``, ``cont_next[k]`` is the successor of row ``k`` and rows where
    ``has_next`` is False pass through unmixed. A mixing coefficient is still
    drawn for those rows so the stream position is independent of trajectory
    boundaries.
    """
    p = spec.params
    rows, cdim = cont.shape
    kdim = cat.shape[1]
    if spec.kind == "gauss":
        noise = gen.normal(p["mu"], p["sigma"], size=(rows, cdim)) if p["sigma"] > 0 else \
            np.full((rows, cdim), float(p["mu"]))
        return _out(_as_f64(cont) + noise), cat
    if spec.kind == "uni":
        noise = gen.uniform(-p["lam"], p["lam"], size=(rows, cdim))
        return _out(_as_f64(cont) + noise), cat
    if spec.kind == "sca":
        if p["mode"] == "literal":
            mult = gen.uniform(p["alpha"], p["beta"], size=(rows, cdim))
        else:
            mult = 1.0 + gen.uniform(-p["beta"], p["beta"], size=(rows, cdim))
        return _out(_as_f64(cont) * mult), cat
    if spec.kind == "sm":
        eps = gen.beta(p["beta_shape"], p["beta_shape"], size=rows)
        if mix_eps is not None:
            eps = np.broadcast_to(np.asarray(mix_eps, dtype=np.float64), (rows,))
        if cont_next is None:
            return cont, cat
        if has_next is None:
            has_next = np.ones(rows, dtype=bool)
        e = eps[:, None]
        mixed = e * _as_f64(cont) + (1.0 - e) * _as_f64(cont_next)
        return np.where(has_next[:, None], _out(mixed), cont), cat
    if spec.kind == "drc":
        n = int(p["n"])
        if n > cdim:
            raise AugmentationError(f"drc: n={n} exceeds continuous_dim={cdim}")
        mask = _random_subset_mask(gen, rows, cdim, n)
        out = np.array(cont, dtype=CONT_DTYPE)
        out[mask] = 0.0
        return out, cat
    if spec.kind == "drs":
        n = int(p["n"])
        if n > kdim:
            raise AugmentationError(f"drs: n={n} exceeds categorical_dim={kdim}")
        mask = _random_subset_mask(gen, rows, kdim, n)
        out = np.array(cat, dtype=CAT_DTYPE)
        out[mask] = 0
        return cont, out
    raise AugmentationError(spec.kind)  # pragma: no cover


def _single(spec, s: StateVector, rng, s_next=None, mix_eps=None) -> StateVector:
    gen = as_generator(rng)
    nxt = None if s_next is None else s_next.continuous[None, :]
    if s_next is not None and s_next.continuous.shape != s.continuous.shape:
        raise AugmentationError("sm: states do not share a schema")
    cont, cat = transform_block(spec, s.continuous[None, :], s.categorical[None, :], gen,
                                cont_next=nxt, mix_eps=mix_eps)
    return StateVector(cont[0], cat[0])


def apply_gauss(s: StateVector, mu: float, sigma: float, rng) -> StateVector:
    return _single(AugmentationSpec("gauss", {"mu": mu, "sigma": sigma}), s, rng)


def apply_uni(s: StateVector, lam: float, rng) -> StateVector:
    return _single(AugmentationSpec("uni", {"lam": lam}), s, rng)


def apply_sca(s: StateVector, mode: str, alpha: float, beta: float, rng) -> StateVector:
    """Elementwise scaling. In ``centered`` mode the multiplier is
    ``1 + U(-beta, beta)`` and ``alpha`` is ignored."""
    return _single(AugmentationSpec("sca", {"mode": mode, "alpha": alpha, "beta": beta}), s, rng)


def apply_sm(s_t: StateVector, s_next: StateVector, beta_shape: float, rng,
             eps: float | None = None) -> StateVector:
    """Mix ``s_t`` with its successor; ``eps`` forces the coefficient."""
    if s_next.categorical.shape != s_t.categorical.shape:
        raise AugmentationError("sm: states do not share a schema")
    return _single(AugmentationSpec("sm", {"beta_shape": beta_shape}), s_t, rng,
                   s_next=s_next, mix_eps=eps)


def apply_drc(s: StateVector, n: int, rng) -> StateVector:
    return _single(AugmentationSpec("drc", {"n": n}), s, rng)


def apply_drs(s: StateVector, n: int, rng) -> StateVector:
    return _single(AugmentationSpec("drs", {"n": n}), s, rng)


# --- pipelines ----------------------------------------------------------

@dataclass(frozen=True)
class Pipeline:
    specs: tuple
    clamp: float | None = None

    def __post_init__(self):
        specs = tuple(sorted(self.specs, key=lambda s: _ORDER[s.kind]))
        kinds = [s.kind for s in specs]
        if not 1 <= len(specs) <= 3:
            raise AugmentationError(f"a pipeline holds 1 to 3 augmentations, got {len(specs)}")
        if len(set(kinds)) != len(kinds):
            raise AugmentationError("a pipeline may contain each augmentation kind once")
        if "gauss" in kinds and "uni" in kinds:
            raise AugmentationError("gauss and uni may not be combined")
        object.__setattr__(self, "specs", specs)

    @property
    def id(self) -> str:
        return "+".join(s.label for s in self.specs)

    @property
    def kinds(self) -> tuple:
        return tuple(s.kind for s in self.specs)

    def __str__(self):
        return self.id

    @classmethod
    def parse(cls, pid: str, scale_mode: str = "literal", clamp: float | None = None) -> "Pipeline":
        tokens = [t for t in pid.split("+") if t.strip()]
        return cls(tuple(AugmentationSpec.parse(t, scale_mode) for t in tokens), clamp)


def pipeline_streams(p: Pipeline, rng) -> list:
    """One generator per spec. A single RngStream is split into children
    indexed by spec position; an explicit sequence is used as given."""
    if isinstance(rng, RngStream):
        return [rng.child(j).generator for j in range(len(p.specs))]
    if isinstance(rng, (list, tuple)):
        if len(rng) != len(p.specs):
            raise AugmentationError("need one random stream per pipeline step")
        return [as_generator(r) for r in rng]
    return [as_generator(rng)] * len(p.specs)


def augment_arrays(p: Pipeline, cont: np.ndarray, cat: np.ndarray, streams: Sequence,
                   cont_next: np.ndarray | None = None, has_next: np.ndarray | None = None):
    """Run a pipeline over stacked states. ``cont_next`` holds the raw
    (unaugmented) successor of each row, used by mixup."""
    for spec, gen in zip(p.specs, streams):
        cont, cat = transform_block(spec, cont, cat, gen, cont_next=cont_next, has_next=has_next)
    if p.clamp is not None:
        cont = np.clip(cont, -p.clamp, p.clamp).astype(CONT_DTYPE)
    return cont, cat


def apply_pipeline(p: Pipeline, t: Transition, t_next: Transition | None, rng) -> Transition:
    """Augment one transition; the action is carried over unchanged.

    When the pipeline contains ``sm`` and there is no successor the mixup
    step is the identity.
    """
    streams = pipeline_streams(p, rng)
    s = t.state
    nxt = None
    if t_next is not None:
        if t_next.state.continuous.shape != s.continuous.shape:
            raise AugmentationError("successor state does not share the schema")
        nxt = t_next.state.continuous[None, :]
    has_next = np.array([t_next is not None])
    cont, cat = augment_arrays(p, s.continuous[None, :], s.categorical[None, :], streams,
                               cont_next=nxt if nxt is not None else s.continuous[None, :],
                               has_next=has_next)
    return Transition(StateVector(cont[0], cat[0]), t.action)


def augment_trajectory(p: Pipeline, traj: Trajectory, rng, episode_id: int | None = None) -> Trajectory:
    streams = pipeline_streams(p, rng)
    cont = traj.continuous
    cont_next = np.concatenate([cont[1:], cont[-1:]], axis=0)
    has_next = np.ones(len(traj), dtype=bool)
    has_next[-1] = False
    new_cont, new_cat = augment_arrays(p, cont, traj.categorical, streams,
                                       cont_next=cont_next, has_next=has_next)
    eid = traj.episode_id if episode_id is None else episode_id
    return Trajectory(eid, new_cont, new_cat, traj.actions, traj.success)


def enumerate_pipelines(max_size: int = 3, gauss_sigmas: Sequence[float] = (DEFAULT_SIGMA,),
                        scale_mode: str = "literal") -> list[Pipeline]:
    """Every admissible combination of up to ``max_size`` kinds, sorted by id."""
    if not 1 <= max_size <= 3:
        raise AugmentationError("max_size must lie in [1, 3]")
    out = {}
    for size in range(1, max_size + 1):
        for combo in itertools.combinations(KINDS, size):
            if "gauss" in combo and "uni" in combo:
                continue
            sigmas = gauss_sigmas if "gauss" in combo else (None,)
            for sigma in sigmas:
                specs = []
                for kind in combo:
                    if kind == "gauss":
                        specs.append(AugmentationSpec("gauss", {"sigma": sigma}))
                    elif kind == "sca":
                        specs.append(AugmentationSpec("sca", {"mode": scale_mode}))
                    else:
                        specs.append(AugmentationSpec(kind))
                p = Pipeline(tuple(specs))
                out[p.id] = p
    return [out[k] for k in sorted(out)]


def build_augmented_dataset(base: DemoDataset, p: Pipeline, clones: int = 3, seed: int = 0) -> DemoDataset:
    """Original data followed by ``clones`` independently augmented copies."""
    if clones < 0:
        raise AugmentationError("clones must be >= 0")
    if clones == 0:
        return base
    root = RngStream(seed).child("augment")
    stride = max(t.episode_id for t in base.trajectories) + 1
    trajs = list(base.trajectories)
    for c in range(1, clones + 1):
        for i, traj in enumerate(base.trajectories):
            trajs.append(augment_trajectory(p, traj, root.child(c, i), episode_id=c * stride + traj.episode_id))
    note = f"pipeline={p.id} clones={clones} seed={seed}"
    if base.provenance:
        note += f"; base: {base.provenance}"
    return DemoDataset(base.schema, trajs, note)
