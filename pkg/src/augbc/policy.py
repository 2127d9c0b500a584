"""Policy network, behavioral-cloning loss and checkpoints.

Two architectures share one entry point:

``compact``
    self features -> linear+ReLU (d); each entity -> shared linear (d), mean
    pooled; semantic map -> symbol embedding (8, tanh) -> flatten -> linear+ReLU
    (d); concatenation -> 256 ReLU -> 9 logits.

``faithful``
    the self embedding is concatenated to every entity embedding and the set
    is encoded by a 4-head transformer layer with average pooling; the
    embedded 5x5x5 map goes through three stride-2 3D convolutions (32, 64
    and d filters, leaky ReLU). Same head as ``compact``.

Categorical inputs always enter through learned embeddings. The status flags
have their own table (one row per flag/symbol pair) and their embeddings join
the self features.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import ACTION_COUNT, StateSchema, StateVector
from .rng import RngStream, as_generator

LOG_PROB_FLOOR = float(np.log(1e-9))
CHECKPOINT_VERSION = 1


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    variant: str = "compact"
    embedding_dim: int = 128
    entity_pooling: str = "mean"
    map_encoder: str = "flatten-embed"
    hidden_sizes: tuple = (256,)
    symbol_embedding: int = 8
    attention_heads: int = 4
    conv_filters: tuple = (32, 64)
    action_count: int = ACTION_COUNT

    def __post_init__(self):
        if self.variant not in ("compact", "faithful"):
            raise PolicyError(f"unknown variant {self.variant!r}")
        if self.action_count != ACTION_COUNT:
            raise PolicyError("the action space has exactly 9 actions")
        if self.embedding_dim < 8:
            raise PolicyError("embedding_dim must be >= 8")
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))

    @classmethod
    def faithful(cls, **kw) -> "ArchitectureConfig":
        return cls(variant="faithful", entity_pooling="attention", map_encoder="conv3d", **kw)


def schema_groups(schema: StateSchema) -> dict:
    """Feature groups, falling back to 'everything is self/map' for bare schemas."""
    g = schema.feature_groups or {}
    return {
        "self": list(g.get("self", range(schema.continuous_dim))),
        "entities": [list(e) for e in g.get("entities", [])],
        "flags": list(g.get("flags", [])),
        "map": list(g.get("map", range(schema.categorical_dim))),
        "map_shape": g.get("map_shape"),
    }


def schema_hash(schema: StateSchema) -> str:
    blob = json.dumps(schema.to_header(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


class Policy:
    """A policy network bound to a state schema."""

    stateless = True  # greedy actions depend on the observation only

    def __init__(self, schema: StateSchema, arch: ArchitectureConfig = ArchitectureConfig(),
                 seed: int = 0, dtype=np.float32):
        self.schema, self.arch, self.seed, self.dtype = schema, arch, seed, np.dtype(dtype)
        g = schema_groups(schema)
        self.groups = g
        self._self_idx = np.array(g["self"], dtype=np.int64)
        self._ent_idx = (np.array(g["entities"], dtype=np.int64) if g["entities"]
                         else np.zeros((0, 0), dtype=np.int64))
        self._flag_idx = np.array(g["flags"], dtype=np.int64)
        self._map_idx = np.array(g["map"], dtype=np.int64)
        cards = schema.cardinality_array
        self._flag_offsets = np.concatenate([[0], np.cumsum(cards[self._flag_idx])[:-1]]).astype(np.int64) \
            if len(self._flag_idx) else np.zeros(0, dtype=np.int64)
        flag_vocab = int(cards[self._flag_idx].sum()) if len(self._flag_idx) else 0
        map_vocab = int(cards[self._map_idx].max()) if len(self._map_idx) else 0

        rng = RngStream(seed).child("init").generator
        d, e = arch.embedding_dim, arch.symbol_embedding
        dt = self.dtype
        self.layers: dict[str, nn.Layer] = {}
        L = self.layers
        if flag_vocab:
            L["flag_embed"] = nn.Embedding(flag_vocab, e, rng, dt)
        L["self"] = nn.Linear(len(self._self_idx) + e * len(self._flag_idx), d, rng, dt)
        n_ent = len(self._ent_idx)
        if n_ent:
            L["entity"] = nn.Linear(self._ent_idx.shape[1], d, rng, dt)  # shared across entities
        if len(self._map_idx):
            L["map_embed"] = nn.Embedding(map_vocab, e, rng, dt)

        if arch.variant == "compact":
            if len(self._map_idx):
                L["map_proj"] = nn.Linear(len(self._map_idx) * e, d, rng, dt)
            width = d + (d if n_ent else 0) + (d if len(self._map_idx) else 0)
        else:
            if not n_ent:
                raise PolicyError("the faithful variant needs entity groups in the schema")
            shape = g["map_shape"]
            if not shape or int(np.prod(shape)) != len(self._map_idx):
                raise PolicyError("the faithful variant needs a cubic map_shape in the schema")
            self._map_shape = tuple(shape)
            if 2 * d % arch.attention_heads:
                raise PolicyError("2*embedding_dim must be divisible by attention_heads")
            L["encoder"] = nn.TransformerEncoderLayer(2 * d, arch.attention_heads, 2 * d, rng, dt)
            filters = (e,) + arch.conv_filters + (d,)
            for i in range(len(filters) - 1):
                L[f"conv{i}"] = nn.Conv3d(filters[i], filters[i + 1], rng, dtype=dt)
            self._n_conv = len(filters) - 1
            width = 2 * d + d
        for i, h in enumerate(arch.hidden_sizes):
            L[f"hidden{i}"] = nn.Linear(width, h, rng, dt)
            width = h
        L["head"] = nn.Linear(width, ACTION_COUNT, rng, dt)
        self._acts: dict = {}
        self.zero_grad()

    # parameters ---------------------------------------------------------
    def named_parameters(self):
        for name, layer in self.layers.items():
            for full, arr, grads, key in nn.walk(layer, name):
                yield full, arr, grads, key

    def parameters(self) -> dict:
        return {n: a for n, a, _, _ in self.named_parameters()}

    def gradients(self) -> dict:
        return {n: g[k] for n, _, g, k in self.named_parameters()}

    def zero_grad(self):
        for _, arr, grads, key in self.named_parameters():
            grads[key] = np.zeros_like(arr)

    @property
    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.parameters().values()))

    def load_parameters(self, values: dict):
        for name, arr, _, _ in self.named_parameters():
            if name not in values or values[name].shape != arr.shape:
                raise PolicyError(f"parameter {name} missing or mis-shaped")
            arr[...] = values[name]

    def check_finite(self):
        for name, arr in self.parameters().items():
            if not np.all(np.isfinite(arr)):
                raise PolicyError(f"non-finite values in parameter {name}")

    # forward/backward ---------------------------------------------------
    def _act(self, key, kind):
        if key not in self._acts:
            self._acts[key] = {"relu": nn.ReLU, "tanh": nn.Tanh, "lrelu": nn.LeakyReLU}[kind]()
        return self._acts[key]

    def logits(self, cont: np.ndarray, cat: np.ndarray) -> np.ndarray:
        cont = np.asarray(cont, dtype=self.dtype)
        cat = np.asarray(cat, dtype=np.int64)
        if cont.ndim == 1:
            cont, cat = cont[None], cat[None]
        if cont.shape[1] != self.schema.continuous_dim or cat.shape[1] != self.schema.categorical_dim:
            raise PolicyError("state does not match the schema the policy was built for")
        L = self.layers
        b = cont.shape[0]
        self._b = b
        parts = [cont[:, self._self_idx]]
        if "flag_embed" in L:
            fe = L["flag_embed"].forward(cat[:, self._flag_idx] + self._flag_offsets)
            parts.append(fe.reshape(b, -1))
        self._self_split = [p.shape[1] for p in parts]
        xa = self._act("self", "relu").forward(L["self"].forward(np.concatenate(parts, axis=1)))
        feats = []
        if self.arch.variant == "compact":
            feats.append(xa)
            if "entity" in L:
                xe = L["entity"].forward(cont[:, self._ent_idx])  # (B, E, d)
                feats.append(xe.mean(axis=1))
            if "map_embed" in L:
                m = self._act("map_tanh", "tanh").forward(L["map_embed"].forward(cat[:, self._map_idx]))
                xm = self._act("map", "relu").forward(L["map_proj"].forward(m.reshape(b, -1)))
                feats.append(xm)
        else:
            xe = L["entity"].forward(cont[:, self._ent_idx])
            n_ent = xe.shape[1]
            xae = np.concatenate([np.broadcast_to(xa[:, None, :], xe.shape), xe], axis=2)
            xt = L["encoder"].forward(xae).mean(axis=1)
            self._n_ent = n_ent
            m = self._act("map_tanh", "tanh").forward(L["map_embed"].forward(cat[:, self._map_idx]))
            h = m.reshape((b,) + self._map_shape + (m.shape[-1],))
            for i in range(self._n_conv):
                h = self._act(f"conv{i}", "lrelu").forward(L[f"conv{i}"].forward(h))
            feats += [xt, h.reshape(b, -1)]
        self._feat_split = [f.shape[1] for f in feats]
        h = np.concatenate(feats, axis=1)
        for i in range(len(self.arch.hidden_sizes)):
            h = self._act(f"hidden{i}", "relu").forward(L[f"hidden{i}"].forward(h))
        return L["head"].forward(h)

    def backward(self, g_logits: np.ndarray):
        L = self.layers
        b = self._b
        g = L["head"].backward(g_logits)
        for i in reversed(range(len(self.arch.hidden_sizes))):
            g = L[f"hidden{i}"].backward(self._act(f"hidden{i}", "relu").backward(g))
        gfeats = np.split(g, np.cumsum(self._feat_split)[:-1], axis=1)
        if self.arch.variant == "compact":
            g_xa = gfeats[0]
            k = 1
            if "entity" in L:
                n_ent = len(self._ent_idx)
                ge = np.broadcast_to(gfeats[k][:, None, :] / n_ent,
                                     (b, n_ent, gfeats[k].shape[1]))
                L["entity"].backward(np.ascontiguousarray(ge))
                k += 1
            if "map_embed" in L:
                gm = L["map_proj"].backward(self._act("map", "relu").backward(gfeats[k]))
                gm = self._act("map_tanh", "tanh").backward(gm.reshape(b, len(self._map_idx), -1))
                L["map_embed"].backward(gm)
        else:
            g_xt, g_xm = gfeats
            h = g_xm.reshape((b, 1, 1, 1, -1))
            for i in reversed(range(self._n_conv)):
                h = L[f"conv{i}"].backward(self._act(f"conv{i}", "lrelu").backward(h))
            gm = self._act("map_tanh", "tanh").backward(h.reshape(b, len(self._map_idx), -1))
            L["map_embed"].backward(gm)
            n_ent = self._n_ent
            g_enc = np.broadcast_to(g_xt[:, None, :] / n_ent, (b, n_ent, g_xt.shape[1]))
            g_xae = L["encoder"].backward(np.ascontiguousarray(g_enc))
            d = self.arch.embedding_dim
            L["entity"].backward(g_xae[:, :, d:])
            g_xa = g_xae[:, :, :d].sum(axis=1)
        g_in = L["self"].backward(self._act("self", "relu").backward(g_xa))
        if "flag_embed" in L:
            gf = g_in[:, self._self_split[0]:]
            L["flag_embed"].backward(gf.reshape(b, len(self._flag_idx), -1))

    def predict_proba(self, cont, cat) -> np.ndarray:
        return nn.softmax(self.logits(cont, cat).astype(np.float64))

    def loss_and_grad(self, cont, cat, actions) -> float:
        """Mean negative log-likelihood; gradients are left in the layers."""
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size == 0:
            raise PolicyError("empty batch")
        z = self.logits(cont, cat).astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        picked = logp[np.arange(len(actions)), actions]
        clamped = picked < LOG_PROB_FLOOR
        loss = float(-np.maximum(picked, LOG_PROB_FLOOR).mean())
        g = np.exp(logp)
        g[np.arange(len(actions)), actions] -= 1.0
        g[clamped] = 0.0
        g /= len(actions)
        self.zero_grad()
        self.backward(g.astype(self.dtype))
        return loss

    def __call__(self, cont, cat, states=None) -> np.ndarray:
        """Greedy batch policy, usable directly by the evaluator."""
        return np.argmax(self.logits(cont, cat), axis=1)


# --- functional surface -----------------------------------------------------

def forward(policy: Policy, s: StateVector) -> np.ndarray:
    """Action distribution (9 probabilities) for one state."""
    policy.check_finite()
    s.conforms(policy.schema)
    return policy.predict_proba(s.continuous, s.categorical)[0]


def bc_loss(policy: Policy, batch) -> tuple:
    """(loss, gradients) of the mean negative log-likelihood over a batch of
    transitions."""
    batch = list(batch)
    if not batch:
        raise PolicyError("empty batch")
    cont = np.stack([t.state.continuous for t in batch])
    cat = np.stack([t.state.categorical for t in batch])
    loss = policy.loss_and_grad(cont, cat, [t.action for t in batch])
    return loss, {k: v.copy() for k, v in policy.gradients().items()}


def select_action(probs: np.ndarray, mode: str = "greedy", rng=None) -> int:
    probs = np.asarray(probs, dtype=np.float64)
    if mode == "greedy":
        return int(np.argmax(probs))  # first maximum wins ties
    if mode == "sample":
        return int(as_generator(rng if rng is not None else 0).choice(len(probs), p=probs / probs.sum()))
    raise PolicyError(f"unknown action mode {mode!r}")


def act(policy: Policy, s: StateVector, mode: str = "greedy", rng=None) -> int:
    return select_action(forward(policy, s), mode, rng)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(policy: Policy, path, extra: dict | None = None) -> None:
    """Single .npz file: a JSON header plus the raw parameter tensors."""
    header = {
        "format": "augbc-policy",
        "version": CHECKPOINT_VERSION,
        "arch": asdict(policy.arch),
        "schema": policy.schema.to_header(),
        "schema_hash": schema_hash(policy.schema),
        "seed": policy.seed,
        "dtype": policy.dtype.name,
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in policy.parameters().items()}
    buf = io.BytesIO()
    np.savez(buf, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Policy:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "augbc-policy" or header.get("version") != CHECKPOINT_VERSION:
            raise PolicyError("not a supported policy checkpoint")
        schema = StateSchema.from_header(header["schema"])
        if schema_hash(schema) != header["schema_hash"]:
            raise PolicyError("checkpoint schema hash mismatch")
        arch = ArchitectureConfig(**header["arch"])
        policy = Policy(schema, arch, seed=header["seed"], dtype=np.dtype(header["dtype"]))
        policy.load_parameters({k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")})
    policy.extra = header.get("extra", {})
    return policy
