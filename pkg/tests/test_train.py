import numpy as np
import pytest

from augbc import env
from augbc.dataset import DemoDataset
from augbc.policy import ArchitectureConfig
from augbc.train import TrainConfig, TrainingDiverged, accuracy, train


def first_transitions(d, n):
    """The first ``n`` transitions of a dataset, as whole and cut episodes."""
    trajs, left = [], n
    for t in d.trajectories:
        if left == 0:
            break
        k = min(left, len(t))
        trajs.append(type(t)(t.episode_id, t.continuous[:k], t.categorical[:k], t.actions[:k], t.success))
        left -= k
    return DemoDataset(d.schema, trajs, "subset")


@pytest.fixture(scope="module")
def expert():
    return env.generate_demos("train", 8, seed=11)


def corridor_a(d):
    """Episodes along corridor A only; demonstrations alternate A, B, A, ..."""
    return DemoDataset(d.schema, d.trajectories[::2], "corridor A")


def test_overfits_fifty_transitions(expert):
    # the corridor is not observable, so mixing both can give one observation
    # two labels; a single corridor keeps the subset consistent
    data = first_transitions(corridor_a(expert), 50)
    c, k, a = data.arrays()
    labels = {}
    for i in range(len(a)):
        labels.setdefault((c[i].tobytes(), k[i].tobytes()), set()).add(int(a[i]))
    assert all(len(v) == 1 for v in labels.values())
    assert data.sample_count == 50
    policy, log = train(data, ArchitectureConfig(), TrainConfig(epochs=300, seed=0))
    assert log["train_accuracy"] >= 0.99
    assert log["loss"][-1] < log["loss"][0]
    assert len(log["loss"]) == 300 and np.all(np.isfinite(log["loss"]))


def test_ten_samples_fit_exactly(expert):
    data = first_transitions(expert, 10)
    policy, log = train(data, ArchitectureConfig(), TrainConfig(epochs=300, seed=1))
    assert accuracy(policy, *data.arrays()) == 1.0


def test_seeded_retrain_is_bitwise_identical(expert):
    data = first_transitions(expert, 60)
    cfg = TrainConfig(epochs=20, batch_size=16, seed=4)
    a, la = train(data, ArchitectureConfig(embedding_dim=16), cfg)
    b, lb = train(data, ArchitectureConfig(embedding_dim=16), cfg)
    assert la["loss"] == lb["loss"]
    pa, pb = a.parameters(), b.parameters()
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
    c, _ = train(data, ArchitectureConfig(embedding_dim=16), TrainConfig(epochs=20, batch_size=16, seed=5))
    assert not all(np.array_equal(pa[k], c.parameters()[k]) for k in pa)


def test_double_precision_training(expert):
    data = first_transitions(expert, 20)
    policy, log = train(data, ArchitectureConfig(embedding_dim=8), TrainConfig(epochs=3), dtype=np.float64)
    assert policy.parameters()["head.W"].dtype == np.float64


def test_config_validation():
    for kw in ({"epochs": 0}, {"batch_size": 0}, {"optimizer": "sgd"}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
    assert (TrainConfig().epochs, TrainConfig().batch_size, TrainConfig().learning_rate) == (300, 256, 1e-3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(expert):
    data = first_transitions(expert, 20)
    with pytest.raises(TrainingDiverged):
        train(data, ArchitectureConfig(embedding_dim=8), TrainConfig(epochs=50, learning_rate=1e30))
