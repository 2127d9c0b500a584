"""Sweep orchestration: subsample -> augment -> train -> evaluate.

A trial is one trained model evaluated on one layout, keyed by
``(pipeline, data_fraction, seed, layout)``. Trials are appended to
``trials.jsonl`` in the output directory as soon as a model finishes, so an
interrupted sweep resumes by skipping completed keys.
"""

from __future__ import annotations

import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import env as envmod
from .augment import DEFAULT_SIGMA, Pipeline, build_augmented_dataset, enumerate_pipelines
from .dataset import DemoDataset, load_dataset, save_dataset, subsample_episodes
from .policy import ArchitectureConfig, Policy, PolicyError
from .rng import RngStream
from .train import TrainConfig, train

log = logging.getLogger(__name__)

BASELINE = "baseline"
DATA_FRACTIONS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

DESK_PIPELINES = (
    "sca", "sm", "drc", "gauss_e4", "uni", "drs",
    "sca+sm", "sca+drc", "sm+drc", "sca+sm+drc", "gauss_e4+sm+drc", "uni+sca+drc",
)


def default_seed() -> int:
    return int(os.environ.get("AUGBC_SEED", "0"))


@dataclass(frozen=True)
class TrialResult:
    pipeline: str
    data_fraction: float
    seed: int
    layout: str
    successes: int
    episodes: int
    success_rate: float
    mean_episode_length: float

    def __post_init__(self):
        if not 0 <= self.successes <= self.episodes or self.episodes < 1:
            raise ValueError("successes must lie in [0, episodes] with episodes >= 1")
        if self.success_rate != self.successes / self.episodes:
            raise ValueError("success_rate must equal successes / episodes")

    @property
    def key(self) -> tuple:
        return (self.pipeline, float(self.data_fraction), int(self.seed), self.layout)

    @property
    def model(self) -> tuple:
        return (self.pipeline, float(self.data_fraction))


@dataclass(frozen=True)
class SweepConfig:
    pipelines: tuple = DESK_PIPELINES
    data_fractions: tuple = (0.5, 1.0)
    seeds: int = 3
    seed_base: int = field(default_factory=default_seed)
    clones: int = 3
    layouts: tuple = envmod.LAYOUT_NAMES
    episodes_per_eval: int = 100
    eval_seed: int = 12345
    scale_mode: str = "centered"
    gauss_sigmas: tuple = (DEFAULT_SIGMA,)
    demo_episodes: int = 78
    demo_seed: int = 0
    demos: str | None = None
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    embedding_dim: int = 128
    workers: int = 1

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.episodes_per_eval < 1:
            raise ValueError("episodes_per_eval must be >= 1")
        for f in self.data_fractions:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"data fraction {f} outside (0, 1]")
        for name in ("pipelines", "data_fractions", "layouts", "gauss_sigmas"):
            value = getattr(self, name)
            if not isinstance(value, str):
                object.__setattr__(self, name, tuple(value))

    @classmethod
    def profile(cls, name: str, **overrides) -> "SweepConfig":
        if name == "desk":
            base = cls()
        elif name == "full":
            base = cls(pipelines="all", data_fractions=DATA_FRACTIONS, seeds=10, scale_mode="literal")
        else:
            raise ValueError(f"unknown profile {name!r}")
        return replace(base, **overrides)

    def pipeline_list(self) -> list[Pipeline]:
        if self.pipelines == "all":
            return enumerate_pipelines(3, self.gauss_sigmas, self.scale_mode)
        return [Pipeline.parse(p, self.scale_mode) for p in self.pipelines]

    def seed_list(self) -> list[int]:
        return list(range(self.seed_base, self.seed_base + self.seeds))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed)

    def arch(self) -> ArchitectureConfig:
        return ArchitectureConfig(embedding_dim=self.embedding_dim)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sweep config fields {sorted(unknown)}")
        return cls(**data)


# --- evaluation -------------------------------------------------------------

def episode_seeds(seed: int, episodes: int) -> list[int]:
    root = RngStream(seed).child("evaluate")
    return [int(root.child(i).generator.integers(2 ** 31)) for i in range(episodes)]


def run_episodes(policy: Callable, layout, episodes: int, seed: int):
    """Run ``episodes`` jittered-start episodes in lockstep.

    ``policy(cont, cat, states)`` receives the observations and states of
    every episode (finished ones included) and returns one action each.
    Returns the list of final states.
    """
    layout = envmod.load_layout(layout)
    states, conts, cats = [], [], []
    for s in episode_seeds(seed, episodes):
        st, _ = envmod.reset(layout, s, jitter=True)
        c, k = envmod.observation_arrays(layout, st)
        states.append(st)
        conts.append(c)
        cats.append(k)
    cont, cat = np.stack(conts), np.stack(cats)
    # A policy that is a pure function of the observation revisiting an
    # earlier state is in a cycle that can never reach the goal, so the
    # episode is fast-forwarded to the timeout with identical outcome.
    detect_cycles = getattr(policy, "stateless", False)
    seen = [set() for _ in states]
    while not all(s.done for s in states):
        actions = np.asarray(policy(cont, cat, states))
        for i, st in enumerate(states):
            if st.done:
                continue
            st = envmod.advance(layout, st, int(actions[i]))
            if detect_cycles and not st.done:
                key = (st.cell, st.heading, st.door_timer, st.button_pressed, st.jump_cooldown,
                       st.door_passed)
                if key in seen[i]:
                    st = replace(st, step_count=envmod.MAX_STEPS, done=True)
                seen[i].add(key)
            states[i] = st
            cont[i], cat[i] = envmod.observation_arrays(layout, st)
    return states


def evaluate(model: Callable, layout, episodes: int = 100, seed: int = 0,
             pipeline: str = "", data_fraction: float = 1.0, model_seed: int = 0) -> TrialResult:
    """Greedy evaluation of a policy on one layout."""
    layout = envmod.load_layout(layout)
    if isinstance(model, Policy):
        expected = envmod.make_schema(layout.arena)
        if model.schema != expected:
            raise PolicyError("model schema does not match the layout observation schema")
    final = run_episodes(model, layout, episodes, seed)
    successes = sum(s.success for s in final)
    return TrialResult(pipeline, float(data_fraction), int(model_seed), layout.name, successes,
                       episodes, successes / episodes,
                       float(np.mean([s.step_count for s in final])))


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.gen = RngStream(seed).child("random-policy").generator

    def __call__(self, cont, cat, states):
        return self.gen.integers(0, 9, size=len(states))


# --- sweep ----------------------------------------------------------------

def load_trials(path) -> list[TrialResult]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(TrialResult(**json.loads(line)))
    return out


def _trial_line(t: TrialResult) -> str:
    return json.dumps(asdict(t))


def run_model(cfg: SweepConfig, demos: DemoDataset, pipeline_id: str, fraction: float,
              seed: int, layouts: list[str]) -> list[TrialResult]:
    """Subsample, augment, train and evaluate one model."""
    data = subsample_episodes(demos, fraction, seed)
    if pipeline_id != BASELINE:
        data = build_augmented_dataset(data, Pipeline.parse(pipeline_id, cfg.scale_mode), cfg.clones, seed)
    policy, _ = train(data, cfg.arch(), cfg.train_config(seed))
    return [evaluate(policy, name, cfg.episodes_per_eval, cfg.eval_seed, pipeline_id, fraction, seed)
            for name in layouts]


def _job(args):
    cfg, demos, pid, frac, seed, layouts = args
    try:
        return args[2:5], run_model(cfg, demos, pid, frac, seed, layouts), None
    except Exception:  # recorded per trial, never aborts the sweep
        return args[2:5], [], traceback.format_exc()


def sweep_jobs(cfg: SweepConfig, done: set) -> list[tuple]:
    jobs = []
    for frac in cfg.data_fractions:
        for pid in [BASELINE] + [p.id for p in cfg.pipeline_list()]:
            for seed in cfg.seed_list():
                missing = [l for l in cfg.layouts if (pid, float(frac), seed, l) not in done]
                if missing:
                    jobs.append((pid, float(frac), seed, missing))
    return jobs


def resolve_demos(cfg: SweepConfig) -> DemoDataset:
    if cfg.demos:
        return load_dataset(cfg.demos)
    return envmod.generate_demos("train", cfg.demo_episodes, cfg.demo_seed)


def run_sweep(cfg: SweepConfig, out_dir, demos: DemoDataset | None = None,
              progress: Callable | None = None):
    """Run (or resume) a sweep; returns the :class:`SweepReport`."""
    from .report import SweepReport

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    trials_path = out / "trials.jsonl"
    done = {t.key for t in load_trials(trials_path)}
    jobs = sweep_jobs(cfg, done)
    if jobs and demos is None:
        demos = resolve_demos(cfg)
        if not (out / "demos.jsonl").exists():
            save_dataset(demos, out / "demos.jsonl")
    log.info("%d models to train (%d trials already complete)", len(jobs), len(done))

    failures = []

    def record(key, results, err):
        if err:
            failures.append({"pipeline": key[0], "data_fraction": key[1], "seed": key[2], "error": err})
            with open(out / "failures.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(failures[-1]) + "\n")
            log.warning("trial %s failed", key)
        with open(trials_path, "a", encoding="utf-8") as fh:
            for t in results:
                fh.write(_trial_line(t) + "\n")
        if progress:
            progress(key, results, err)

    payloads = [(cfg, demos, pid, frac, seed, layouts) for pid, frac, seed, layouts in jobs]
    started = time.time()
    if cfg.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for fut in as_completed([pool.submit(_job, p) for p in payloads]):
                record(*fut.result())
    else:
        for p in payloads:
            record(*_job(p))
    log.info("sweep finished in %.1f s", time.time() - started)
    report = SweepReport.from_trials(load_trials(trials_path))
    report.failures = failures
    report.jobs_run = len(jobs)
    return report
