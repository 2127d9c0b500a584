"""Walk through the six state transforms on real expert data.

Run with ``python walkthroughs/01_augmentations.py``.
"""

import numpy as np

from augbc import env
from augbc.augment import AugmentationSpec, Pipeline, build_augmented_dataset, enumerate_pipelines, transform_block
from augbc.rng import RngStream

# a handful of demonstrations on the training layout
demos = env.generate_demos("train", episodes=6, seed=0)
cont, cat, actions = demos.arrays()
print(f"{demos.episode_count} episodes, {demos.sample_count} samples")
print("continuous block", cont.shape, "categorical block", cat.shape)
print(env.load_layout("train").ascii())

# every transform on the same block of states, one fresh stream each
for kind in ("gauss", "uni", "sca", "sm", "drc", "drs"):
    spec = AugmentationSpec(kind, {"mode": "centered"} if kind == "sca" else {})
    gen = RngStream(1).child(kind).generator
    nxt = np.roll(cont, -1, axis=0)  # successor rows, only read by mixup
    out_cont, out_cat = transform_block(spec, cont, cat, gen, cont_next=nxt)
    moved = np.abs(out_cont.astype(np.float64) - cont).max()
    print(f"{kind:6s} max |delta cont| = {moved:.2e}   categorical entries changed = {(out_cat != cat).sum()}")

# pipelines are sets of 1-3 transforms in a fixed order
ps = enumerate_pipelines(3)
print(len(ps), "pipelines, e.g.", [p.id for p in ps[:5]])
print(Pipeline.parse("drc+sca+sm").id)  # any order normalizes

# clone-and-append: three augmented copies next to the original
aug = build_augmented_dataset(demos, Pipeline.parse("sca+sm+drc", "centered"), clones=3, seed=0)
print(f"{demos.sample_count} -> {aug.sample_count} samples")
a_actions = aug.arrays()[2]
assert np.array_equal(a_actions[: len(actions)], actions)
assert np.array_equal(a_actions[len(actions): 2 * len(actions)], actions)
