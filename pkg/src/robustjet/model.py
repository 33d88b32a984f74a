"""Typed feature-embedding classifier with a dense fusion tail.

Every scalar feature ``x`` of type ``t`` is lifted to 8 dimensions by a
two-layer network whose weights are shared by all features of that type::

    e = W2[t] @ relu(W1[t] * x + b1[t]) + b2[t]

The 87 embeddings are concatenated (696 values) and classified by::

    prob = sigmoid(W_out @ tanh(W_hidden @ z + b_hidden) + b_out)

In training mode inverted dropout is applied to the raw input, and additive
Gaussian noise followed by inverted dropout to both hidden layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .data import FeatureSchema, FeatureType, N_FEATURES, default_schema

EMB_HIDDEN = 16
EMB_DIM = 8
N_TYPES = len(FeatureType)
FUSION_DIM = N_FEATURES * EMB_DIM
TAIL_HIDDEN = 256
FORMAT_TAG = "crnet-v1"
EVAL_CHUNK = 4096

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_hidden", "b_hidden", "W_out", "b_out")
BIAS_NAMES = ("b1", "b2", "b_hidden", "b_out")
PARAM_SHAPES = {
    "W1": (N_TYPES, EMB_HIDDEN),
    "b1": (N_TYPES, EMB_HIDDEN),
    "W2": (N_TYPES, EMB_DIM, EMB_HIDDEN),
    "b2": (N_TYPES, EMB_DIM),
    "W_hidden": (TAIL_HIDDEN, FUSION_DIM),
    "b_hidden": (TAIL_HIDDEN,),
    "W_out": (TAIL_HIDDEN,),
    "b_out": (),
}

TRAIN = "train"
EVAL = "eval"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RegularizerConfig:
    hidden_dropout: float = 0.2
    noise_sigma: float = 0.01

    def __post_init__(self):
        if not 0 <= self.hidden_dropout < 1:
            raise ValueError(f"hidden_dropout must be in [0, 1), got {self.hidden_dropout}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class ModelParams:
    """All trainable arrays plus the per-model input dropout rate.

    ``params[name]`` gives the array for any name in ``PARAM_NAMES``.  Embedding
    arrays are indexed by ``FeatureType`` along axis 0.
    """

    arrays: dict[str, np.ndarray]
    input_dropout: float = 0.0
    schema: FeatureSchema = field(default_factory=default_schema)
    use_bias: bool = True

    def __post_init__(self):
        if not 0 <= self.input_dropout < 1:
            raise ModelError(f"input_dropout must be in [0, 1), got {self.input_dropout}")
        if len(self.schema) != N_FEATURES:
            raise ModelError("model schema must have 87 columns")
        for name in PARAM_NAMES:
            a = np.asarray(self.arrays[name], dtype=np.float64)
            if a.shape != PARAM_SHAPES[name]:
                raise ModelError(f"{name}: expected shape {PARAM_SHAPES[name]}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ModelError(f"{name}: non-finite entries")
            self.arrays[name] = a

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return replace(self, arrays={k: v.copy() for k, v in self.arrays.items()})

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def type_groups(self) -> list[np.ndarray]:
        t = self.schema.type_index
        return [np.flatnonzero(t == k) for k in range(N_TYPES)]

    # -- serialization --

    def to_json(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "schema": self.schema.to_json(),
            "input_dropout": self.input_dropout,
            "use_bias": self.use_bias,
            "params": {
                name: {"shape": list(PARAM_SHAPES[name]), "data": self.arrays[name].reshape(-1).tolist()}
                for name in PARAM_NAMES
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelParams":
        if doc.get("format") != FORMAT_TAG:
            raise ModelError(f"not a {FORMAT_TAG} model document (format={doc.get('format')!r})")
        arrays = {}
        for name in PARAM_NAMES:
            entry = doc["params"][name]
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        return cls(arrays, float(doc["input_dropout"]), FeatureSchema.from_json(doc["schema"]),
                   bool(doc.get("use_bias", True)))

    def dumps(self) -> str:
        # repr-based float output is shortest round-trip, so load(dump(m)) == m exactly
        return json.dumps(self.to_json(), separators=(",", ":"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def zero_params(input_dropout: float = 0.0, schema: FeatureSchema | None = None) -> ModelParams:
    arrays = {n: np.zeros(s) for n, s in PARAM_SHAPES.items()}
    return ModelParams(arrays, input_dropout, schema or default_schema())


def init_params(seed: int, input_dropout: float = 0.0, schema: FeatureSchema | None = None,
                use_bias: bool = True) -> ModelParams:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases."""
    g = rngmod.stream(seed, rngmod.INIT)

    def u(shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return g.uniform(-bound, bound, size=shape)

    arrays = {
        "W1": u(PARAM_SHAPES["W1"], 1),
        "b1": np.zeros(PARAM_SHAPES["b1"]),
        "W2": u(PARAM_SHAPES["W2"], EMB_HIDDEN),
        "b2": np.zeros(PARAM_SHAPES["b2"]),
        "W_hidden": u(PARAM_SHAPES["W_hidden"], FUSION_DIM),
        "b_hidden": np.zeros(PARAM_SHAPES["b_hidden"]),
        "W_out": u(PARAM_SHAPES["W_out"], TAIL_HIDDEN),
        "b_out": np.zeros(()),
    }
    return ModelParams(arrays, input_dropout, schema or default_schema(), use_bias)


# -- training-time randomness ----------------------------------------------


@dataclass
class Noise:
    """Multiplicative masks (already scaled by 1/(1-p)) and additive noise."""

    input_mask: np.ndarray  # (B, 87)
    emb_noise: np.ndarray  # (B, 87, 16)
    emb_mask: np.ndarray  # (B, 87, 16)
    tail_noise: np.ndarray  # (B, 256)
    tail_mask: np.ndarray  # (B, 256)


def _mask(g: np.random.Generator, shape, p: float) -> np.ndarray:
    keep = g.random(shape) >= p
    return keep / (1.0 - p)


def draw_noise(g: np.random.Generator, batch: int, input_dropout: float, reg: RegularizerConfig) -> Noise:
    return Noise(
        input_mask=_mask(g, (batch, N_FEATURES), input_dropout),
        emb_noise=reg.noise_sigma * g.standard_normal((batch, N_FEATURES, EMB_HIDDEN)),
        emb_mask=_mask(g, (batch, N_FEATURES, EMB_HIDDEN), reg.hidden_dropout),
        tail_noise=reg.noise_sigma * g.standard_normal((batch, TAIL_HIDDEN)),
        tail_mask=_mask(g, (batch, TAIL_HIDDEN), reg.hidden_dropout),
    )


# -- forward / backward ----------------------------------------------------


@dataclass
class Cache:
    x: np.ndarray  # input after input dropout, (B, 87)
    a1: np.ndarray  # embedding pre-activation, (B, 87, 16)
    h1: np.ndarray  # embedding hidden after regularization, (B, 87, 16)
    z: np.ndarray  # concatenated embeddings, (B, 696)
    h2_raw: np.ndarray  # tanh output, (B, 256)
    h2: np.ndarray  # tail hidden after regularization, (B, 256)
    logit: np.ndarray  # (B,)
    prob: np.ndarray  # (B,)
    noise: Noise | None


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _as_batch(x) -> np.ndarray:
    x = np.asarray(getattr(x, "features", x), dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ModelError(f"input must have {N_FEATURES} features, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite input")
    return x


def embed(m: ModelParams, x: np.ndarray, noise: Noise | None = None):
    """Embedding block for a (B, 87) batch.  Returns (a1, h1, e) with e of shape (B, 87, 8)."""
    t = m.schema.type_index
    a1 = x[:, :, None] * m["W1"][t] + m["b1"][t]
    h1 = np.maximum(a1, 0.0)
    if noise is not None:
        h1 = (h1 + noise.emb_noise) * noise.emb_mask
    e = np.empty((x.shape[0], N_FEATURES, EMB_DIM))
    for k, idx in enumerate(m.type_groups()):
        e[:, idx, :] = h1[:, idx, :] @ m["W2"][k].T + m["b2"][k]
    return a1, h1, e


def embed_feature(x: float, t: FeatureType, m: ModelParams, mode: str = EVAL,
                  reg: RegularizerConfig | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Embed one scalar with the shared parameters of type ``t``; returns a length-8 vector."""
    k = int(t)
    h = np.maximum(m["W1"][k] * x + m["b1"][k], 0.0)
    if mode == TRAIN:
        reg = reg or RegularizerConfig()
        h = (h + reg.noise_sigma * rng.standard_normal(EMB_HIDDEN)) * _mask(rng, EMB_HIDDEN, reg.hidden_dropout)
    return m["W2"][k] @ h + m["b2"][k]


def forward(m: ModelParams, x, mode: str = EVAL, reg: RegularizerConfig | None = None,
            rng: np.random.Generator | None = None, noise: Noise | None = None):
    """Run the network on one sample or a (B, 87) batch.

    In TRAIN mode the regularization draws come from ``noise`` if given,
    otherwise from ``rng``.  Returns ``(prob, cache)`` with ``prob`` of shape (B,).
    """
    x = _as_batch(x)
    if mode == TRAIN:
        if noise is None:
            if rng is None:
                raise ModelError("TRAIN mode needs an rng or explicit noise")
            noise = draw_noise(rng, x.shape[0], m.input_dropout, reg or RegularizerConfig())
        x = x * noise.input_mask
    elif mode == EVAL:
        noise = None
    else:
        raise ModelError(f"unknown mode {mode!r}")
    a1, h1, e = embed(m, x, noise)
    z = e.reshape(x.shape[0], FUSION_DIM)
    h2_raw = np.tanh(z @ m["W_hidden"].T + m["b_hidden"])
    h2 = h2_raw if noise is None else (h2_raw + noise.tail_noise) * noise.tail_mask
    logit = h2 @ m["W_out"] + m["b_out"]
    prob = sigmoid(logit)
    return prob, Cache(x, a1, h1, z, h2_raw, h2, logit, prob, noise)


def backward(m: ModelParams, cache: Cache, y, reduction: str = "mean") -> dict[str, np.ndarray]:
    """Gradients of the binary cross-entropy w.r.t. every parameter.

    ``reduction`` is ``"mean"`` or ``"sum"`` over the batch.  Shared embedding
    weights receive the sum of contributions from all features of their type.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    B = cache.x.shape[0]
    if y.shape != (B,):
        raise ModelError(f"label count {y.shape[0]} does not match batch size {B}")
    if cache.a1.shape != (B, N_FEATURES, EMB_HIDDEN) or cache.z.shape != (B, FUSION_DIM):
        raise ModelError("cache does not match model shapes")
    noise = cache.noise
    d_logit = cache.prob - y
    if reduction == "mean":
        d_logit = d_logit / B
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")

    g = {}
    g["W_out"] = cache.h2.T @ d_logit
    g["b_out"] = np.asarray(d_logit.sum())
    d_h2 = np.outer(d_logit, m["W_out"])
    if noise is not None:
        d_h2 = d_h2 * noise.tail_mask
    d_a2 = d_h2 * (1.0 - cache.h2_raw ** 2)
    g["W_hidden"] = d_a2.T @ cache.z
    g["b_hidden"] = d_a2.sum(axis=0)
    d_e = (d_a2 @ m["W_hidden"]).reshape(B, N_FEATURES, EMB_DIM)

    g["W2"] = np.zeros(PARAM_SHAPES["W2"])
    g["b2"] = np.zeros(PARAM_SHAPES["b2"])
    g["W1"] = np.zeros(PARAM_SHAPES["W1"])
    g["b1"] = np.zeros(PARAM_SHAPES["b1"])
    d_h1 = np.empty_like(cache.h1)
    for k, idx in enumerate(m.type_groups()):
        de_k = d_e[:, idx, :].reshape(-1, EMB_DIM)
        g["W2"][k] = de_k.T @ cache.h1[:, idx, :].reshape(-1, EMB_HIDDEN)
        g["b2"][k] = de_k.sum(axis=0)
        d_h1[:, idx, :] = d_e[:, idx, :] @ m["W2"][k]
    if noise is not None:
        d_h1 = d_h1 * noise.emb_mask
    d_a1 = d_h1 * (cache.a1 > 0)
    # per-feature sums, then reduce onto the shared type slots
    dW1_f = np.einsum("bfk,bf->fk", d_a1, cache.x)
    db1_f = d_a1.sum(axis=0)
    for k, idx in enumerate(m.type_groups()):
        g["W1"][k] = dW1_f[idx].sum(axis=0)
        g["b1"][k] = db1_f[idx].sum(axis=0)
    if not m.use_bias:
        for name in BIAS_NAMES:
            g[name] = np.zeros_like(g[name])
    return g


def predict_proba(m: ModelParams, X, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """EVAL-mode probabilities, computed in fixed-size row chunks."""
    X = _as_batch(X)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        out[s:s + chunk] = forward(m, X[s:s + chunk], EVAL)[0]
    return out


def predict_logit(m: ModelParams, X, chunk: int = EVAL_CHUNK) -> np.ndarray:
    X = _as_batch(X)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        out[s:s + chunk] = forward(m, X[s:s + chunk], EVAL)[1].logit
    return out


def predict(m: ModelParams, x) -> np.ndarray | int:
    """Label 1 iff prob >= 0.5.  A single sample gives an int, a batch an array."""
    single = np.ndim(getattr(x, "features", x)) == 1
    labels = (predict_proba(m, x) >= 0.5).astype(np.uint8)
    return int(labels[0]) if single else labels
