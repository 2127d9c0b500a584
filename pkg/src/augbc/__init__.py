"""State augmentation for behavioral cloning on a grid navigation analog.

Modules: ``dataset`` (schema, trajectories, JSONL), ``augment`` (transforms
and pipelines), ``env`` (simulator, layouts, scripted expert), ``policy`` and
``train`` (numpy network and BC training), ``experiment`` and ``report``
(sweeps and analyses).
"""

from .augment import AugmentationSpec, Pipeline, build_augmented_dataset, enumerate_pipelines
from .dataset import DemoDataset, StateSchema, StateVector, Trajectory, Transition, load_dataset, save_dataset
from .env import generate_demos, load_layout, reset, scripted_expert, step
from .experiment import SweepConfig, evaluate, run_sweep
from .policy import ArchitectureConfig, Policy, load_checkpoint, save_checkpoint
from .report import SweepReport, emit_report
from .rng import RngStream
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationSpec", "Pipeline", "build_augmented_dataset", "enumerate_pipelines",
    "DemoDataset", "StateSchema", "StateVector", "Trajectory", "Transition", "load_dataset", "save_dataset",
    "generate_demos", "load_layout", "reset", "scripted_expert", "step",
    "SweepConfig", "evaluate", "run_sweep",
    "ArchitectureConfig", "Policy", "load_checkpoint", "save_checkpoint",
    "SweepReport", "emit_report", "RngStream", "TrainConfig", "train",
]
