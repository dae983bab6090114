"""Transformer-encoder delta classifier with hand-written backprop.

Layout per encoder layer (post-norm)::

    A = Attention(X)            # shared query/key projection
    H = LayerNorm(X + A)        # skipped entirely for the bypass kind
    Y = LayerNorm(H + FFN(H))

Encodings are mean-pooled over positions and fed to a linear classifier.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..trace import DeltaVocabulary, EnrichedRecord, FEATURES, feature_matrix
from .attention import (
    HlshConfig,
    HlshPlan,
    OpCounter,
    angular_lsh,
    full_attention_backward,
    full_attention_forward,
    hlsh_backward,
    hlsh_forward,
    lsh_rotations,
    positional_encoding,
    sample_positions,
    softmax,
)
from .features import FeatureSchema, embed_indices, token_indices

CLAMP_LIMIT = 8.0
LN_EPS = 1e-5


class Attention(str, enum.Enum):
    FULL = "full"
    HLSH = "hlsh"
    BYPASS = "bypass"


class Quant(str, enum.Enum):
    NONE = "none"
    CLAMP = "clamp"
    CLAMP4 = "clamp4"


@dataclass(frozen=True)
class ModelConfig:
    schema: FeatureSchema = field(default_factory=FeatureSchema.revised)
    num_classes: int = 0
    seq_len: int = 30
    n_layers: int = 1
    n_heads: int = 1
    ffn_hidden: int = 0  # 0 -> 4 * model_dim
    attention: Attention = Attention.HLSH
    bypass_threshold: float = 0.9
    quant: Quant = Quant.NONE
    hlsh: HlshConfig = field(default_factory=HlshConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attention", Attention(self.attention))
        object.__setattr__(self, "quant", Quant(self.quant))
        if self.hlsh.seq_len != self.seq_len:
            object.__setattr__(self, "hlsh", replace(self.hlsh, seq_len=self.seq_len))
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.model_dim % 2:
            raise ValueError("model_dim must be even (sinusoidal positions)")
        if not 0.0 <= self.bypass_threshold <= 1.0:
            raise ValueError("bypass_threshold must lie in [0, 1]")
        if self.seq_len < 1 or self.n_layers < 1:
            raise ValueError("seq_len and n_layers must be positive")

    @property
    def model_dim(self) -> int:
        return self.schema.model_dim

    @property
    def hidden(self) -> int:
        return self.ffn_hidden or 4 * self.model_dim

    @classmethod
    def unconstrained(cls, num_classes: int = 0, **kw) -> "ModelConfig":
        kw.setdefault("schema", FeatureSchema.full())
        kw.setdefault("n_layers", 2)
        kw.setdefault("n_heads", 2)
        kw.setdefault("attention", Attention.FULL)
        return cls(num_classes=num_classes, **kw)

    @classmethod
    def revised(cls, num_classes: int = 0, **kw) -> "ModelConfig":
        kw.setdefault("schema", FeatureSchema.revised())
        kw.setdefault("n_layers", 1)
        kw.setdefault("n_heads", 1)
        kw.setdefault("attention", Attention.HLSH)
        return cls(num_classes=num_classes, **kw)


def choose_attention(conv: float, threshold: float, otherwise: Attention = Attention.HLSH) -> Attention:
    """Bypass attention when the training data's delta convergence reaches ``threshold``."""
    return Attention.BYPASS if conv >= threshold else Attention(otherwise)


# -- parameters -------------------------------------------------------------------


LAYER_PARAMS = ("wqk", "wv", "wo", "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


def init_params(cfg: ModelConfig, rng: np.random.Generator | int | None = None) -> dict[str, np.ndarray]:
    if cfg.num_classes < 2:
        raise ValueError("num_classes must be at least 2 (one delta plus UNKNOWN)")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    d, h, c = cfg.model_dim, cfg.hidden, cfg.num_classes
    params: dict[str, np.ndarray] = {}
    for name, w in zip(cfg.schema.names, cfg.schema.widths):
        params[f"emb.{name}"] = rng.standard_normal((cfg.schema.buckets, w))

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    for layer in range(cfg.n_layers):
        p = f"layer{layer}."
        params[p + "wqk"] = dense(d, d)
        params[p + "wv"] = dense(d, d)
        params[p + "wo"] = dense(d, d)
        params[p + "w1"] = dense(d, h)
        params[p + "b1"] = np.zeros(h)
        params[p + "w2"] = dense(h, d)
        params[p + "b2"] = np.zeros(d)
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
    params["cls.w"] = dense(d, c)
    params["cls.b"] = np.zeros(c)
    return params


def layer_params(params: dict[str, np.ndarray], layer: int) -> dict[str, np.ndarray]:
    p = f"layer{layer}."
    return {k: params[p + k] for k in LAYER_PARAMS}


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: DeltaVocabulary | None = None

    @classmethod
    def init(cls, cfg: ModelConfig, vocab: DeltaVocabulary | None = None, rng=None) -> "Model":
        if vocab is not None and cfg.num_classes == 0:
            cfg = replace(cfg, num_classes=vocab.num_classes)
        if vocab is not None and vocab.num_classes != cfg.num_classes:
            raise ValueError(f"num_classes {cfg.num_classes} != vocabulary size {vocab.num_classes}")
        return cls(cfg, init_params(cfg, rng), vocab)

    @cached_property
    def pe(self) -> np.ndarray:
        return positional_encoding(self.config.seq_len, self.config.model_dim)

    @cached_property
    def rotations(self) -> list[list[np.ndarray]]:
        cfg = self.config
        dk = cfg.model_dim // cfg.n_heads
        return [
            [lsh_rotations(dk, cfg.hlsh, stream=layer * cfg.n_heads + h) for h in range(cfg.n_heads)]
            for layer in range(cfg.n_layers)
        ]

    @cached_property
    def samples(self) -> np.ndarray:
        return sample_positions(self.config.seq_len, self.config.hlsh)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def parameter_bytes(self) -> float:
        """Storage for the parameters: 4 bits each on the integer grid, else float32."""
        per = 0.5 if self.config.quant is Quant.CLAMP4 else 4.0
        return self.parameter_count() * per

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.vocab)


# -- building blocks ---------------------------------------------------------------


def _clip(x: np.ndarray, on: bool):
    if not on:
        return x, None
    mask = np.abs(x) <= CLAMP_LIMIT
    return np.clip(x, -CLAMP_LIMIT, CLAMP_LIMIT), mask


def _unclip(dx: np.ndarray, mask):
    return dx if mask is None else dx * mask


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=red)
    db = dy.sum(axis=red)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _split_heads(x, n_heads):
    B, n, d = x.shape
    return x.reshape(B, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, h * dk)


def hlsh_plans(q: np.ndarray, hlsh: HlshConfig, rotations: np.ndarray, samples: np.ndarray) -> list[HlshPlan]:
    """Plans for a batch of shared query/key matrices ``q`` of shape (B, n, d_k)."""
    B, n, _ = q.shape
    hashes = angular_lsh(q, hlsh, rotations)
    samples = samples[samples < n]
    dist = (hashes[:, :, None, :] != hashes[:, None, samples, :]).sum(axis=-1).astype(np.float64)
    valid = samples[None, :] != np.arange(n)[:, None]
    counts = valid.sum(axis=1)
    with np.errstate(divide="ignore"):
        logs = np.where(valid, np.log(dist), 0.0)
    zero = np.any((dist == 0) & valid, axis=-1)
    mean_log = np.divide(logs.sum(axis=-1), counts, out=np.full((B, n), np.nan), where=counts > 0)
    scores = np.where(zero, 0.0, np.exp(mean_log))
    scores[:, counts == 0] = np.nan
    plans = []
    for b in range(B):
        s = scores[b]
        plans.append(HlshPlan(erased=s >= hlsh.htop, record=[int(j) for j in np.flatnonzero(s <= hlsh.hbot)]))
    return plans


def _attention_forward(X, p, cfg: ModelConfig, rotations, samples, counter):
    QK = X @ p["wqk"]
    Vv = X @ p["wv"]
    q = _split_heads(QK, cfg.n_heads)
    v = _split_heads(Vv, cfg.n_heads)
    if cfg.attention is Attention.FULL:
        o, c = full_attention_forward(q, q, v, counter)
        caches = ("full", c)
    else:
        o = np.zeros_like(v)
        per = []
        for h in range(cfg.n_heads):
            plans = hlsh_plans(q[:, h], cfg.hlsh, rotations[h], samples)
            row = []
            for b, plan in enumerate(plans):
                o[b, h], c = hlsh_forward(q[b, h], q[b, h], v[b, h], plan, cfg.hlsh.masked, counter)
                row.append(c)
            per.append(row)
        caches = ("hlsh", per)
    om = _merge_heads(o)
    return om @ p["wo"], (X, om, caches)


def _attention_backward(dA, p, cfg: ModelConfig, cache, grads):
    X, om, (kind, c) = cache
    grads["wo"] = om.reshape(-1, om.shape[-1]).T @ dA.reshape(-1, dA.shape[-1])
    do = _split_heads(dA @ p["wo"].T, cfg.n_heads)
    if kind == "full":
        dq, dk, dv = full_attention_backward(do, c)
        dq = dq + dk
    else:
        dq = np.zeros_like(do)
        dv = np.zeros_like(do)
        for h, row in enumerate(c):
            for b, cb in enumerate(row):
                gq, gk, gv = hlsh_backward(do[b, h], cb)
                dq[b, h] = gq + gk
                dv[b, h] = gv
    dQK = _merge_heads(dq)
    dV = _merge_heads(dv)
    X2 = X.reshape(-1, X.shape[-1])
    grads["wqk"] = X2.T @ dQK.reshape(-1, dQK.shape[-1])
    grads["wv"] = X2.T @ dV.reshape(-1, dV.shape[-1])
    return dQK @ p["wqk"].T + dV @ p["wv"].T


def encoder_layer_forward(X, p, cfg: ModelConfig, rotations=None, samples=None, counter=None):
    clamp = cfg.quant is not Quant.NONE
    cache = {}
    if cfg.attention is Attention.BYPASS:
        H = X
    else:
        A, cache["attn"] = _attention_forward(X, p, cfg, rotations, samples, counter)
        A, cache["mA"] = _clip(A, clamp)
        H, cache["ln1"] = layer_norm(X + A, p["ln1_g"], p["ln1_b"])
        H, cache["mH"] = _clip(H, clamp)
    Z = H @ p["w1"] + p["b1"]
    Z, cache["mZ"] = _clip(Z, clamp)
    R = np.maximum(Z, 0.0)
    F = R @ p["w2"] + p["b2"]
    F, cache["mF"] = _clip(F, clamp)
    Y, cache["ln2"] = layer_norm(H + F, p["ln2_g"], p["ln2_b"])
    Y, cache["mY"] = _clip(Y, clamp)
    cache.update(H=H, Z=Z, R=R)
    return Y, cache


def encoder_layer_backward(dY, p, cfg: ModelConfig, cache):
    grads: dict[str, np.ndarray] = {}
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    dY = _unclip(dY, cache["mY"])
    dR2, grads["ln2_g"], grads["ln2_b"] = layer_norm_backward(dY, cache["ln2"])
    dF = _unclip(dR2, cache["mF"])
    grads["w2"] = flat(cache["R"]).T @ flat(dF)
    grads["b2"] = flat(dF).sum(axis=0)
    dZ = _unclip((dF @ p["w2"].T) * (cache["Z"] > 0), cache["mZ"])
    grads["w1"] = flat(cache["H"]).T @ flat(dZ)
    grads["b1"] = flat(dZ).sum(axis=0)
    dH = dR2 + dZ @ p["w1"].T
    if cfg.attention is Attention.BYPASS:
        for k in ("wqk", "wv", "wo", "ln1_g", "ln1_b"):
            grads[k] = np.zeros_like(p[k])
        return dH, grads
    dH = _unclip(dH, cache["mH"])
    dR1, grads["ln1_g"], grads["ln1_b"] = layer_norm_backward(dH, cache["ln1"])
    dA = _unclip(dR1, cache["mA"])
    dX = dR1 + _attention_backward(dA, p, cfg, cache["attn"], grads)
    return dX, grads


def encoder_forward(
    X: np.ndarray,
    params: dict[str, np.ndarray],
    attention: Attention | str = Attention.FULL,
    n_heads: int = 1,
    hlsh: HlshConfig | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """One encoder layer on ``X`` of shape (seq_len, d) or (B, seq_len, d)."""
    single = X.ndim == 2
    Xb = X[None] if single else X
    n, d = Xb.shape[1:]
    schema = FeatureSchema(("delta_p",), (d,), buckets=1)
    hlsh = hlsh or HlshConfig(seq_len=n)
    cfg = ModelConfig(schema=schema, num_classes=2, seq_len=n, n_heads=n_heads, attention=attention,
                      hlsh=hlsh, ffn_hidden=params["w1"].shape[1])
    dk = d // n_heads
    rotations = [lsh_rotations(dk, cfg.hlsh, stream=h) for h in range(n_heads)]
    Y, _ = encoder_layer_forward(Xb, params, cfg, rotations, sample_positions(n, cfg.hlsh), counter)
    return Y[0] if single else Y


# -- whole model ---------------------------------------------------------------------


def forward(model: Model, idx: np.ndarray, counter: OpCounter | None = None):
    """Logits for bucket-index tokens ``idx`` of shape (B, seq_len, n_features)."""
    cfg = model.config
    P = model.params
    clamp = cfg.quant is not Quant.NONE
    X = embed_indices(cfg.schema, {n: P[f"emb.{n}"] for n in cfg.schema.names}, idx) + model.pe[: idx.shape[1]]
    X, m0 = _clip(X, clamp)
    layers = []
    for layer in range(cfg.n_layers):
        X, c = encoder_layer_forward(
            X, layer_params(P, layer), cfg, model.rotations[layer], model.samples, counter
        )
        layers.append(c)
    pooled = X.mean(axis=1)
    pooled, mp = _clip(pooled, clamp)
    logits = pooled @ P["cls.w"] + P["cls.b"]
    logits, ml = _clip(logits, clamp)
    return logits, (idx, m0, layers, X.shape[1], pooled, mp, ml)


def backward(model: Model, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = model.config
    P = model.params
    idx, m0, layers, n, pooled, mp, ml = cache
    grads: dict[str, np.ndarray] = {}
    dlogits = _unclip(dlogits, ml)
    grads["cls.w"] = pooled.T @ dlogits
    grads["cls.b"] = dlogits.sum(axis=0)
    dpooled = _unclip(dlogits @ P["cls.w"].T, mp)
    dX = np.repeat(dpooled[:, None, :] / n, n, axis=1)
    for layer in reversed(range(cfg.n_layers)):
        dX, g = encoder_layer_backward(dX, layer_params(P, layer), cfg, layers[layer])
        for k, v in g.items():
            grads[f"layer{layer}.{k}"] = v
    dX = _unclip(dX, m0)
    off = 0
    for i, (name, w) in enumerate(zip(cfg.schema.names, cfg.schema.widths)):
        table = np.zeros_like(P[f"emb.{name}"])
        np.add.at(table, idx[..., i].ravel(), dX[..., off : off + w].reshape(-1, w))
        grads[f"emb.{name}"] = table
        off += w
    return grads


def loss_and_grads(model: Model, idx: np.ndarray, labels: np.ndarray):
    logits, cache = forward(model, idx)
    probs = softmax(logits)
    B = len(labels)
    loss = -np.mean(np.log(np.clip(probs[np.arange(B), labels], 1e-300, None)))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    return float(loss), backward(model, cache, dlogits / B), probs


def classify(model: Model, encodings: np.ndarray) -> np.ndarray:
    """Mean-pool encodings (..., seq_len, d) and return class probabilities."""
    logits = encodings.mean(axis=-2) @ model.params["cls.w"] + model.params["cls.b"]
    if model.config.quant is not Quant.NONE:
        logits = np.clip(logits, -CLAMP_LIMIT, CLAMP_LIMIT)
    return softmax(logits)


def predict_proba(model: Model, tokens: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Class probabilities for raw tokens of shape (B, seq_len, len(FEATURES))."""
    idx = token_indices(model.config.schema, tokens)
    out = []
    for s in range(0, len(idx), batch_size):
        logits, _ = forward(model, idx[s : s + batch_size])
        out.append(softmax(logits))
    if not out:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(out)


def topk_classes(probs: np.ndarray, k: int) -> np.ndarray:
    """Top-k class ids per row; equal probabilities resolve to the lower class id."""
    return np.argsort(-probs, axis=-1, kind="stable")[..., :k]


def window_tokens(window: list[EnrichedRecord], seq_len: int, pad: bool = False) -> np.ndarray:
    feats = feature_matrix(window[-seq_len:]) if window else np.zeros((0, len(FEATURES)), np.int64)
    if len(feats) < seq_len:
        if not pad:
            raise ValueError(f"window has {len(feats)} records, need {seq_len}")
        feats = np.vstack([np.zeros((seq_len - len(feats), len(FEATURES)), np.int64), feats])
    return feats


def predict_topk(model: Model, window: list[EnrichedRecord], k: int = 1, pad: bool = False):
    """Top-k (delta, probability) pairs for one window; UNKNOWN maps to ``None``."""
    if model.vocab is None:
        raise ValueError("model has no delta vocabulary attached")
    probs = predict_proba(model, window_tokens(window, model.config.seq_len, pad)[None])[0]
    return [(model.vocab.delta_of(int(c)), float(probs[c])) for c in topk_classes(probs, k)]


def quantize(model: Model, mode: Quant | str) -> Model:
    """Clamp parameters to [-8, 8]; clamp4 also rounds onto the signed 4-bit grid."""
    mode = Quant(mode)
    params = {}
    for k, v in model.params.items():
        if mode is Quant.CLAMP:
            v = np.clip(v, -CLAMP_LIMIT, CLAMP_LIMIT)
        elif mode is Quant.CLAMP4:
            v = np.clip(np.round(v), -CLAMP_LIMIT, CLAMP_LIMIT - 1)
        params[k] = v.copy()
    return Model(replace(model.config, quant=mode), params, model.vocab)
