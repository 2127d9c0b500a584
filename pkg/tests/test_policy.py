import math
import time

import numpy as np
import pytest

from augbc import env
from augbc.dataset import StateVector, Transition
from augbc.policy import (ArchitectureConfig, Policy, PolicyError, act, bc_loss, forward, load_checkpoint,
                          save_checkpoint, schema_hash, select_action)
from conftest import make_schema
from gradcheck import check, small_batch

SCHEMA = env.make_schema(13)
SMALL = {"compact": ArchitectureConfig(embedding_dim=8, hidden_sizes=(16,)),
         "faithful": ArchitectureConfig.faithful(embedding_dim=8, hidden_sizes=(16,), conv_filters=(4, 4))}


def random_states(n, seed=0):
    cont, cat, _ = small_batch(SCHEMA, n, seed)
    return cont.astype(np.float32), cat


@pytest.mark.parametrize("variant", ["compact", "faithful"])
def test_gradients_match_finite_differences(variant):
    start = time.time()
    policy = Policy(SCHEMA, SMALL[variant], seed=1, dtype=np.float64)
    res = check(policy, *small_batch(SCHEMA, 10, seed=2))
    assert set(res) == set(policy.parameters())
    worst = max(r[0] for r in res.values())
    assert worst < 1e-4, {k: r[0] for k, r in res.items() if r[0] >= 1e-4}
    assert time.time() - start < 120


def test_variants_emit_distributions():
    cont, cat = random_states(10_000)
    for variant, arch in (("compact", ArchitectureConfig()), ("faithful", SMALL["faithful"])):
        p = Policy(SCHEMA, arch, seed=0).predict_proba(cont, cat)
        assert p.shape == (10_000, 9)
        assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_faithful_defaults():
    arch = ArchitectureConfig.faithful()
    policy = Policy(SCHEMA, arch, seed=0)
    assert arch.embedding_dim == 128 and arch.attention_heads == 4
    filters = [policy.layers[f"conv{i}"].params["W"].shape[-1] for i in range(3)]
    assert filters == [32, 64, 128]


@pytest.mark.parametrize("variant", ["compact", "faithful"])
def test_entity_encoder_is_shared(variant):
    policy = Policy(SCHEMA, SMALL[variant], seed=0, dtype=np.float64)
    assert [n for n in policy.parameters() if n.startswith("entity")] == ["entity.W", "entity.b"]
    # one set of weights for every entity: swapping the two entities only
    # permutes the set, which both poolings ignore
    cont, cat = random_states(5)
    swapped = cont.copy()
    swapped[:, 5:8], swapped[:, 8:11] = cont[:, 8:11], cont[:, 5:8]
    np.testing.assert_allclose(policy.logits(cont, cat), policy.logits(swapped, cat), atol=1e-12)


def test_uniform_head_gives_log9():
    policy = Policy(SCHEMA, ArchitectureConfig(), seed=0)
    policy.layers["head"].params["W"][...] = 0
    policy.layers["head"].params["b"][...] = 0
    cont, cat = random_states(7)
    s = StateVector(cont[0], cat[0])
    np.testing.assert_allclose(forward(policy, s), np.full(9, 1 / 9), atol=1e-7)
    batch = [Transition(StateVector(cont[i], cat[i]), i % 9) for i in range(7)]
    loss, grads = bc_loss(policy, batch)
    assert loss == pytest.approx(math.log(9), abs=1e-6)
    assert set(grads) == set(policy.parameters())
    assert all(grads[k].shape == v.shape for k, v in policy.parameters().items())
    assert act(policy, s) == 0  # ties go to the lowest index


def test_loss_at_optimum_and_floor():
    policy = Policy(SCHEMA, ArchitectureConfig(), seed=0, dtype=np.float64)
    policy.layers["head"].params["W"][...] = 0
    cont, cat = random_states(4)
    policy.layers["head"].params["b"][...] = 0
    policy.layers["head"].params["b"][3] = 40.0
    assert policy.loss_and_grad(cont, cat, [3] * 4) <= 1e-6
    # a label with probability below 1e-9 contributes -log(1e-9) and no gradient
    assert policy.loss_and_grad(cont, cat, [0] * 4) == pytest.approx(-math.log(1e-9))
    assert all(not g.any() for g in policy.gradients().values())


def test_errors():
    policy = Policy(SCHEMA, ArchitectureConfig(), seed=0)
    with pytest.raises(PolicyError):
        bc_loss(policy, [])
    with pytest.raises(PolicyError):
        policy.logits(np.zeros((1, 3)), np.zeros((1, SCHEMA.categorical_dim)))
    with pytest.raises(ValueError):
        forward(policy, StateVector(np.zeros(3, np.float32), np.zeros(SCHEMA.categorical_dim)))
    policy.layers["head"].params["b"][0] = np.nan
    with pytest.raises(PolicyError):
        forward(policy, StateVector(*random_states(1)[0][:1], random_states(1)[1][0]))
    with pytest.raises(PolicyError):
        ArchitectureConfig(action_count=5)
    with pytest.raises(PolicyError):
        ArchitectureConfig(embedding_dim=4)
    with pytest.raises(PolicyError):
        Policy(make_schema(), ArchitectureConfig.faithful(embedding_dim=8))


def test_bare_schema_compact():
    schema = make_schema()
    policy = Policy(schema, ArchitectureConfig(embedding_dim=8), seed=0)
    p = policy.predict_proba(np.zeros((2, 4)), np.zeros((2, 6), int))
    assert p.shape == (2, 9)


def test_select_action():
    probs = np.zeros(9)
    probs[[2, 5]] = (0.1, 0.9)
    assert select_action(probs) == 5
    assert select_action(np.full(9, 1 / 9)) == 0
    target = np.array([0.05, 0.1, 0.15, 0.2, 0.0, 0.0, 0.25, 0.05, 0.2])
    gen = np.random.default_rng(0)
    draws = np.array([select_action(target, "sample", gen) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=9) / len(draws)
    assert np.all(np.abs(freq - target) <= 0.01)
    with pytest.raises(PolicyError):
        select_action(target, "softmax")


def test_initialisation_is_seeded():
    a = Policy(SCHEMA, ArchitectureConfig(), seed=3).parameters()
    b = Policy(SCHEMA, ArchitectureConfig(), seed=3).parameters()
    c = Policy(SCHEMA, ArchitectureConfig(), seed=4).parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


@pytest.mark.parametrize("variant", ["compact", "faithful"])
def test_checkpoint_round_trip(tmp_path, variant):
    policy = Policy(SCHEMA, SMALL[variant], seed=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(policy, path, extra={"pipeline": "sca"})
    loaded = load_checkpoint(path)
    cont, cat = random_states(6)
    np.testing.assert_array_equal(policy.logits(cont, cat), loaded.logits(cont, cat))
    assert loaded.arch == policy.arch and loaded.seed == 5 and loaded.extra == {"pipeline": "sca"}
    assert schema_hash(loaded.schema) == schema_hash(SCHEMA)
    save_checkpoint(loaded, tmp_path / "again.ckpt", extra={"pipeline": "sca"})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_other_files(tmp_path):
    bad = tmp_path / "x.npz"
    np.savez(bad, header=np.array('{"format": "other"}'))
    with pytest.raises(PolicyError):
        load_checkpoint(bad)
