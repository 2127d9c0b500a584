import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augbc.augment import (KINDS, AugmentationError, AugmentationSpec, Pipeline, apply_drc, apply_gauss,
                           apply_pipeline, apply_sm, augment_trajectory, build_augmented_dataset,
                           enumerate_pipelines)
from augbc.dataset import StateVector, Transition, dumps_dataset
from augbc.rng import RngStream
from conftest import random_dataset


def brute_force_ids(max_size, sigma_labels):
    """Independent oracle: bitmask subsets of the six kinds."""
    ids = set()
    for mask in range(1, 1 << 6):
        members = [KINDS[i] for i in range(6) if mask >> i & 1]
        if len(members) > max_size or {"gauss", "uni"} <= set(members):
            continue
        if "gauss" in members:
            for lab in sigma_labels:
                ids.add("+".join(f"gauss_{lab}" if m == "gauss" else m for m in members))
        else:
            ids.add("+".join(members))
    return sorted(ids)


def test_enumeration_counts():
    assert len(enumerate_pipelines(1)) == 6
    assert len(enumerate_pipelines(2)) == 6 + 15 - 1
    one = enumerate_pipelines(3)
    assert len(one) == 36
    assert [p.id for p in one] == brute_force_ids(3, ["e4"])
    # with four sigmas each of the 11 admissible gauss combinations appears
    # four times: 36 - 11 + 4 * 11
    gauss_combos = sum("gauss" in p.kinds for p in one)
    assert gauss_combos == 11
    four = enumerate_pipelines(3, (0.03, 0.003, 0.0003, 0.00003))
    assert len(four) == 36 - gauss_combos + 4 * gauss_combos == 69
    assert [p.id for p in four] == brute_force_ids(3, ["e2", "e3", "e4", "e5"])


def test_enumeration_rules():
    ps = enumerate_pipelines(3)
    assert len({p.id for p in ps}) == len(ps)
    assert [p.id for p in ps] == sorted(p.id for p in ps)
    assert all(not {"gauss", "uni"} <= set(p.kinds) for p in ps)
    assert enumerate_pipelines(3) == ps
    for bad in (0, 4):
        with pytest.raises(AugmentationError):
            enumerate_pipelines(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(KINDS), min_size=1, max_size=3, unique=True), st.randoms())
def test_any_order_is_normalized(kinds, rnd):
    shuffled = list(kinds)
    rnd.shuffle(shuffled)
    specs = [AugmentationSpec(k) for k in shuffled]
    if {"gauss", "uni"} <= set(kinds):
        with pytest.raises(AugmentationError):
            Pipeline(specs)
        return
    p = Pipeline(specs)
    assert list(p.kinds) == sorted(kinds, key=KINDS.index)
    assert Pipeline.parse(p.id) == p


def test_pipeline_construction():
    p = Pipeline((AugmentationSpec("drc"), AugmentationSpec("gauss")))
    assert p.kinds == ("gauss", "drc") and p.id == "gauss_e4+drc"
    assert Pipeline.parse("gauss_e3+sm+drc").specs[0].params["sigma"] == pytest.approx(0.003)
    assert Pipeline.parse("sca", "centered").specs[0].params["mode"] == "centered"
    for bad in ("", "gauss+uni", "sca+sca", "sca+sm+drc+drs", "sm_e3", "gauss_x3"):
        with pytest.raises(AugmentationError):
            Pipeline.parse(bad)


def _transition(gen, action=4):
    return Transition(StateVector(gen.uniform(-1, 1, 6).astype(np.float32), gen.integers(1, 5, 10)), action)


def test_fused_equals_stepwise():
    gen = np.random.default_rng(3)
    p = Pipeline.parse("drc+gauss+sm")
    for trial in range(50):
        t, t_next = _transition(gen), _transition(gen)
        root = RngStream(trial).child(9)
        fused = apply_pipeline(p, t, t_next, root)
        s = apply_gauss(t.state, 0.0, 0.0003, root.child(0))
        s = apply_sm(s, t_next.state, 0.4, root.child(1))
        s = apply_drc(s, 3, root.child(2))
        np.testing.assert_array_equal(fused.state.continuous, s.continuous)
        np.testing.assert_array_equal(fused.state.categorical, s.categorical)
        assert fused.action == t.action


def test_trajectory_equals_per_transition():
    d = random_dataset(np.random.default_rng(4), episodes=1, cdim=6, kdim=20, max_len=9)
    traj = d.trajectories[0]
    p = Pipeline.parse("sca+sm+drs")
    whole = augment_trajectory(p, traj, RngStream(1))
    streams = [RngStream(1).child(j).generator for j in range(3)]
    ts = traj.transitions
    for k, t in enumerate(ts):
        nxt = ts[k + 1] if k + 1 < len(ts) else None
        one = apply_pipeline(p, t, nxt, streams)
        np.testing.assert_array_equal(one.state.continuous, whole.continuous[k])
        np.testing.assert_array_equal(one.state.categorical, whole.categorical[k])


def test_mixup_without_successor_is_identity():
    t = _transition(np.random.default_rng(0))
    out = apply_pipeline(Pipeline.parse("sm"), t, None, RngStream(0))
    np.testing.assert_array_equal(out.state.continuous, t.state.continuous)


def test_zero_sigma_pipeline_is_identity():
    t = _transition(np.random.default_rng(0))
    p = Pipeline((AugmentationSpec("gauss", {"sigma": 0.0}),))
    out = apply_pipeline(p, t, None, RngStream(0))
    np.testing.assert_array_equal(out.state.continuous, t.state.continuous)


def test_block_purity_and_action_preservation():
    gen = np.random.default_rng(11)
    d = random_dataset(gen, episodes=4, cdim=8, kdim=40, max_len=25_000)
    cont, cat, actions = d.arrays()
    assert len(actions) >= 10_000
    for p in enumerate_pipelines(3):
        aug = build_augmented_dataset(d, p, clones=1, seed=2)
        a_cont, a_cat, a_actions = (x[len(actions):] for x in aug.arrays())
        np.testing.assert_array_equal(a_actions, actions)
        if "drs" not in p.kinds:
            np.testing.assert_array_equal(a_cat, cat)
        if set(p.kinds) == {"drs"}:
            np.testing.assert_array_equal(a_cont, cont)
        assert a_cont.shape == cont.shape and a_cat.shape == cat.shape


def test_clamp_option():
    t = Transition(StateVector(np.array([1.4999, -1.4999], np.float32), np.array([1])), 0)
    p = Pipeline.parse("sca", "centered", clamp=1.5)
    out = apply_pipeline(Pipeline(p.specs, clamp=1.5), t, None, RngStream(0))
    assert np.all(np.abs(out.state.continuous) <= 1.5)


def test_augmented_dataset_law(demos):
    p = Pipeline.parse("sca+sm+drc", "centered")
    assert build_augmented_dataset(demos, p, 0, 1) is demos
    aug = build_augmented_dataset(demos, p, 3, 1)
    assert aug.sample_count == 4 * demos.sample_count
    assert aug.trajectories[:demos.episode_count] == demos.trajectories
    assert len({t.episode_id for t in aug.trajectories}) == aug.episode_count
    assert "pipeline=sca+sm+drc" in aug.provenance and "clones=3" in aug.provenance
    again = build_augmented_dataset(demos, p, 3, 1)
    assert dumps_dataset(again) == dumps_dataset(aug)
    assert dumps_dataset(build_augmented_dataset(demos, p, 3, 2)) != dumps_dataset(aug)
    with pytest.raises(AugmentationError):
        build_augmented_dataset(demos, p, -1, 1)


def test_clones_are_independent(demos):
    aug = build_augmented_dataset(demos, Pipeline.parse("gauss_e2"), 2, 0)
    n = demos.episode_count
    a, b = aug.trajectories[n], aug.trajectories[2 * n]
    assert not np.array_equal(a.continuous, b.continuous)


def test_combination_count_matches_pairs():
    # admissible sets of size 2 and 3 exclude those containing both noises
    pairs = [c for c in itertools.combinations(KINDS, 2) if not {"gauss", "uni"} <= set(c)]
    triples = [c for c in itertools.combinations(KINDS, 3) if not {"gauss", "uni"} <= set(c)]
    assert (len(pairs), len(triples)) == (14, 16)
