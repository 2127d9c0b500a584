"""Central finite-difference oracle for policy gradients."""

import numpy as np

from augbc.policy import LOG_PROB_FLOOR


def nll(policy, cont, cat, actions) -> float:
    """Forward-only loss, written independently of Policy.loss_and_grad."""
    z = policy.logits(cont, cat).astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.maximum(logp[np.arange(len(actions)), actions], LOG_PROB_FLOOR).mean())


def check(policy, cont, cat, actions, h=1e-5):
    """Return {name: (relative_error, analytic, numeric)} per parameter tensor.

    The relative error of a tensor is ||a - n|| / max(||a|| + ||n||, 1e-8);
    the floor keeps tensors whose true gradient is identically zero (attention
    key biases, by softmax shift invariance) from reporting roundoff as error.
    """
    policy.loss_and_grad(cont, cat, actions)
    analytic = {k: v.copy() for k, v in policy.gradients().items()}
    out = {}
    for name, p in policy.parameters().items():
        num = np.zeros_like(p)
        flat, gflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = nll(policy, cont, cat, actions)
            flat[i] = old - h
            down = nll(policy, cont, cat, actions)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        a = analytic[name]
        denom = max(np.linalg.norm(a) + np.linalg.norm(num), 1e-8)
        err = float(np.linalg.norm(a - num) / denom)
        out[name] = (err, a, num)
    return out


def small_batch(schema, n=10, seed=0):
    gen = np.random.default_rng(seed)
    cont = gen.uniform(-1, 1, size=(n, schema.continuous_dim))
    cat = gen.integers(0, schema.cardinality_array, size=(n, schema.categorical_dim))
    actions = gen.integers(0, 9, size=n)
    return cont, cat, actions
