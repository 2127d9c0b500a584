"""Minimal numpy layers with hand-written backward passes.

Each layer caches what it needs during ``forward`` and returns the gradient
with respect to its input from ``backward``, accumulating parameter gradients
into ``self.grads``. Inputs may have any number of leading batch dimensions
unless stated otherwise.
"""

from __future__ import annotations

import numpy as np


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def named_parameters(self, prefix: str):
        for k, v in self.params.items():
            yield f"{prefix}.{k}", v, self.grads


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        self.params["W"] = _uniform(rng, (n_in, n_out), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.grads["W"] += x2.T @ g2
        self.grads["b"] += g2.sum(axis=0)
        return g @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self._scale = np.where(x > 0, 1.0, self.slope).astype(x.dtype)
        return x * self._scale

    def backward(self, g):
        return g * self._scale


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, g):
        return g * (1.0 - self._y ** 2)


class Embedding(Layer):
    def __init__(self, vocab, dim, rng, dtype=np.float32):
        super().__init__()
        self.params["table"] = rng.normal(0.0, 1.0, size=(vocab, dim)).astype(dtype)
        self.zero_grad()

    def forward(self, idx):
        self._idx = idx
        return self.params["table"][idx]

    def backward(self, g):
        table = self.params["table"]
        flat = self._idx.reshape(-1)
        g2 = g.reshape(-1, table.shape[1])
        # one-hot product is faster than np.add.at for small vocabularies
        onehot = np.zeros((flat.shape[0], table.shape[0]), dtype=g.dtype)
        onehot[np.arange(flat.shape[0]), flat] = 1.0
        self.grads["table"] += onehot.T @ g2
        return None


class LayerNorm(Layer):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(dim, dtype=dtype)
        self.params["beta"] = np.zeros(dim, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self._xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, g):
        d = g.shape[-1]
        self.grads["gamma"] += (g * self._xhat).reshape(-1, d).sum(axis=0)
        self.grads["beta"] += g.reshape(-1, d).sum(axis=0)
        gx = g * self.params["gamma"]
        return self._inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - self._xhat * (gx * self._xhat).mean(axis=-1, keepdims=True))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class MultiHeadSelfAttention(Layer):
    """Self-attention over a set: input (B, N, D)."""

    def __init__(self, dim, heads, rng, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ValueError("attention width must be divisible by the head count")
        self.heads, self.dh = heads, dim // heads
        self.q, self.k, self.v, self.o = (Linear(dim, dim, rng, dtype) for _ in range(4))
        self.children = {"q": self.q, "k": self.k, "v": self.v, "o": self.o}

    def _split(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, n, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def forward(self, x):
        q, k, v = (self._split(m.forward(x)) for m in (self.q, self.k, self.v))
        scale = 1.0 / np.sqrt(self.dh)
        self._a = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
        self._q, self._k, self._v, self._scale = q, k, v, scale
        return self.o.forward(self._merge(self._a @ v))

    def backward(self, g):
        gm = self._split(self.o.backward(g))
        a = self._a
        gv = a.transpose(0, 1, 3, 2) @ gm
        ga = gm @ self._v.transpose(0, 1, 3, 2)
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * self._scale
        gq = gs @ self._k
        gk = gs.transpose(0, 1, 3, 2) @ self._q
        return (self.q.backward(self._merge(gq)) + self.k.backward(self._merge(gk))
                + self.v.backward(self._merge(gv)))


class TransformerEncoderLayer(Layer):
    """Post-norm encoder block: LN(x + MHA(x)) then LN(h + FFN(h))."""

    def __init__(self, dim, heads, ff, rng, dtype=np.float32):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.ln1 = LayerNorm(dim, dtype)
        self.ff1 = Linear(dim, ff, rng, dtype)
        self.act = ReLU()
        self.ff2 = Linear(ff, dim, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.children = {"attn": self.attn, "ln1": self.ln1, "ff1": self.ff1,
                         "ff2": self.ff2, "ln2": self.ln2}

    def forward(self, x):
        h = self.ln1.forward(x + self.attn.forward(x))
        return self.ln2.forward(h + self.ff2.forward(self.act.forward(self.ff1.forward(h))))

    def backward(self, g):
        gh = self.ln2.backward(g)
        gh = gh + self.ff1.backward(self.act.backward(self.ff2.backward(gh)))
        gx = self.ln1.backward(gh)
        return gx + self.attn.backward(gx)


class Conv3d(Layer):
    """3D convolution on channels-last input (B, D, H, W, C), cubic kernel."""

    def __init__(self, c_in, c_out, rng, kernel=3, stride=2, pad=1, dtype=np.float32):
        super().__init__()
        self.k, self.s, self.p = kernel, stride, pad
        fan_in = kernel ** 3 * c_in
        self.params["W"] = _uniform(rng, (fan_in, c_out), fan_in, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def _out_size(self, n):
        return (n + 2 * self.p - self.k) // self.s + 1

    def forward(self, x):
        b, d, h, w, c = x.shape
        od, oh, ow = (self._out_size(n) for n in (d, h, w))
        p, s, k = self.p, self.s, self.k
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))
        cols = np.empty((b, od, oh, ow, k, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    cols[:, :, :, :, i, j, l, :] = xp[:, i:i + s * (od - 1) + 1:s,
                                                      j:j + s * (oh - 1) + 1:s,
                                                      l:l + s * (ow - 1) + 1:s, :]
        self._shape = x.shape
        self._out = (od, oh, ow)
        self._cols = cols.reshape(b * od * oh * ow, -1)
        y = self._cols @ self.params["W"] + self.params["b"]
        return y.reshape(b, od, oh, ow, -1)

    def backward(self, g):
        b, d, h, w, c = self._shape
        od, oh, ow = self._out
        p, s, k = self.p, self.s, self.k
        g2 = g.reshape(-1, g.shape[-1])
        self.grads["W"] += self._cols.T @ g2
        self.grads["b"] += g2.sum(axis=0)
        gcols = (g2 @ self.params["W"].T).reshape(b, od, oh, ow, k, k, k, c)
        gxp = np.zeros((b, d + 2 * p, h + 2 * p, w + 2 * p, c), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    gxp[:, i:i + s * (od - 1) + 1:s, j:j + s * (oh - 1) + 1:s,
                        l:l + s * (ow - 1) + 1:s, :] += gcols[:, :, :, :, i, j, l, :]
        return gxp[:, p:p + d, p:p + h, p:p + w, :]


def walk(layer: Layer, prefix: str):
    """Yield (name, param array, grads dict, key) for a layer tree."""
    for k, v in layer.params.items():
        yield f"{prefix}.{k}", v, layer.grads, k
    for cname, child in getattr(layer, "children", {}).items():
        yield from walk(child, f"{prefix}.{cname}")
