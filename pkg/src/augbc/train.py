"""Behavioral-cloning training loop (minibatch Adam on the mean NLL)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import DemoDataset
from .policy import ArchitectureConfig, Policy, PolicyError
from .rng import RngStream

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is available")


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def accuracy(policy: Policy, cont, cat, actions, batch: int = 4096) -> float:
    hits = 0
    for i in range(0, len(actions), batch):
        hits += int((policy(cont[i:i + batch], cat[i:i + batch]) == actions[i:i + batch]).sum())
    return hits / len(actions)


def train(dataset: DemoDataset, arch: ArchitectureConfig = ArchitectureConfig(),
          cfg: TrainConfig = TrainConfig(), dtype=np.float32, policy: Policy | None = None):
    """Fit a policy; returns ``(policy, log)`` with the per-epoch loss curve."""
    cont, cat, actions = dataset.arrays()
    n = len(actions)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if policy is None:
        policy = Policy(dataset.schema, arch, seed=cfg.seed, dtype=dtype)
    cont = cont.astype(policy.dtype)
    opt = Adam(policy.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    shuffler = RngStream(cfg.seed).child("shuffle").generator
    losses = []
    for epoch in range(cfg.epochs):
        order = shuffler.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss = policy.loss_and_grad(cont[idx], cat[idx], actions[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {i}")
            opt.step(policy.gradients())
            total += loss * len(idx)
        losses.append(total / n)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, losses[-1])
    try:
        policy.check_finite()
    except PolicyError as exc:
        raise TrainingDiverged(str(exc)) from None
    train_log = {"loss": losses, "samples": n, "epochs": cfg.epochs,
                 "train_accuracy": accuracy(policy, cont, cat, actions)}
    return policy, train_log
