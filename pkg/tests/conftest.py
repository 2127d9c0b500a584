import numpy as np
import pytest

from augbc import env
from augbc.dataset import DemoDataset, StateSchema, Trajectory


def make_schema(cdim=4, kdim=6, card=7):
    return StateSchema(
        continuous_names=[f"c{i}" for i in range(cdim)],
        categorical_names=[f"k{i}" for i in range(kdim)],
        categorical_cardinalities=[card] * kdim,
    )


def random_dataset(gen, episodes=3, cdim=4, kdim=6, card=7, max_len=8, provenance="synthetic"):
    schema = make_schema(cdim, kdim, card)
    trajs = []
    for e in range(episodes):
        n = int(gen.integers(1, max_len + 1))
        trajs.append(Trajectory(
            e,
            gen.uniform(-1, 1, size=(n, cdim)).astype(np.float32),
            gen.integers(0, card, size=(n, kdim)),
            gen.integers(0, 9, size=n),
            bool(gen.integers(2)),
        ))
    return DemoDataset(schema, trajs, provenance)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def train_layout():
    return env.load_layout("train")


@pytest.fixture(scope="session")
def demos():
    return env.generate_demos("train", 8, seed=3)
