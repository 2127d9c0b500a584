"""Train a baseline and an augmented policy, then evaluate both.

Run with ``python walkthroughs/02_train_and_evaluate.py``; takes a few
minutes on one core.
"""

from augbc import env
from augbc.augment import Pipeline, build_augmented_dataset
from augbc.dataset import subsample_episodes
from augbc.experiment import evaluate
from augbc.policy import ArchitectureConfig
from augbc.report import relative_success
from augbc.train import TrainConfig, train

demos = env.generate_demos("train", episodes=78, seed=0)
half = subsample_episodes(demos, 0.5, seed=0)
augmented = build_augmented_dataset(half, Pipeline.parse("sca", "centered"), clones=3, seed=0)

arch = ArchitectureConfig()
cfg = TrainConfig(epochs=300, seed=0)
models = {}
for name, data in (("baseline", half), ("sca", augmented)):
    policy, log = train(data, arch, cfg)
    print(f"{name}: {log['samples']} samples, loss {log['loss'][0]:.3f} -> {log['loss'][-1]:.3f}, "
          f"train accuracy {log['train_accuracy']:.3f}")
    models[name] = policy

# 100 jittered episodes per layout, greedy actions, same seeds for both models
for layout in env.LAYOUT_NAMES:
    base = evaluate(models["baseline"], layout, 100, seed=12345).success_rate
    aug = evaluate(models["sca"], layout, 100, seed=12345).success_rate
    rel = relative_success(aug, base)
    print(f"{layout:6s} baseline {base:.2f}  sca {aug:.2f}  relative {'undefined' if rel is None else f'{rel:.2f}'}")
