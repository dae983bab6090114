"""Attention kernels: full softmax attention and Hamming-scored LSH attention.

All kernels work on a single sequence (``seq_len x d_k`` matrices) unless a
leading batch axis is noted. Forward functions that the network trains
through return ``(output, cache)``; the matching ``*_backward`` consumes the
cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def positional_encoding(seq_len: int, model_dim: int) -> np.ndarray:
    """Sinusoidal position table: sin on even dims, cos on odd dims."""
    if model_dim % 2:
        raise ValueError(f"model_dim must be even for sinusoidal encoding, got {model_dim}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(0, model_dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / model_dim)
    pe = np.zeros((seq_len, model_dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


@dataclass
class OpCounter:
    """Counts scalar multiplications performed by the attention kernels."""

    mults: int = 0

    def add(self, n: int) -> None:
        self.mults += int(n)


# -- full attention ------------------------------------------------------------


def full_attention_logits(Q: np.ndarray, K: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    scale = 1.0 / np.sqrt(Q.shape[-1])
    if counter is not None:
        n, d = Q.shape[-2:]
        m = K.shape[-2]
        counter.add(Q[..., 0, 0].size * (n * m * d + n * m))
    return (Q @ np.swapaxes(K, -1, -2)) * scale


def full_attention(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray, counter: OpCounter | None = None
) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V; leading batch axes broadcast."""
    out, _ = full_attention_forward(Q, K, V, counter)
    return out


def full_attention_forward(Q, K, V, counter: OpCounter | None = None):
    S = full_attention_logits(Q, K, counter)
    P = softmax(S)
    if counter is not None:
        counter.add(P[..., 0, 0].size * P.shape[-2] * P.shape[-1] * V.shape[-1])
    return P @ V, (Q, K, V, P)


def full_attention_backward(dout: np.ndarray, cache):
    Q, K, V, P = cache
    scale = 1.0 / np.sqrt(Q.shape[-1])
    dV = np.swapaxes(P, -1, -2) @ dout
    dP = dout @ np.swapaxes(V, -1, -2)
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    return dQ, dK, dV


# -- angular LSH -----------------------------------------------------------------


@dataclass(frozen=True)
class HlshConfig:
    """Hashing and threshold settings for HLSH attention.

    ``n_hashes`` is the hash-vector length (rounds of angular LSH). The
    Hamming thresholds sit at 10% and 90% of it.
    """

    n_hashes: int = 10
    n_buckets: int = 4
    seq_len: int = 30
    seed: int = 0
    masked: bool = False

    def __post_init__(self):
        if self.n_buckets < 2 or self.n_buckets % 2:
            raise ValueError("n_buckets must be an even count >= 2")
        if self.n_hashes < 1:
            raise ValueError("n_hashes must be positive")

    @property
    def hbot(self) -> float:
        return 0.1 * self.n_hashes

    @property
    def htop(self) -> float:
        return 0.9 * self.n_hashes

    @property
    def sample_count(self) -> int:
        return max(1, self.seq_len // 2)


def lsh_rotations(d_k: int, cfg: HlshConfig, stream: int = 0) -> np.ndarray:
    """Random projections, shape (d_k, n_hashes, n_buckets // 2)."""
    rng = np.random.default_rng([cfg.seed, 0, stream])
    return rng.standard_normal((d_k, cfg.n_hashes, cfg.n_buckets // 2))


def sample_positions(seq_len: int, cfg: HlshConfig, stream: int = 0) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1, stream])
    k = min(cfg.sample_count, seq_len)
    return np.sort(rng.choice(seq_len, size=k, replace=False))


def angular_lsh(X: np.ndarray, cfg: HlshConfig, rotations: np.ndarray | None = None) -> np.ndarray:
    """Bucket ids per round: argmax over [XR; -XR]. Returns (seq_len, n_hashes)."""
    if rotations is None:
        rotations = lsh_rotations(X.shape[-1], cfg)
    rotated = np.einsum("...nd,dhb->...nhb", X, rotations)
    return np.argmax(np.concatenate([rotated, -rotated], axis=-1), axis=-1)


def hamming_scores(
    Q_lsh: np.ndarray, K_lsh: np.ndarray, cfg: HlshConfig, samples: np.ndarray | None = None
) -> np.ndarray:
    """Geometric-mean Hamming distance of each query hash row to the sampled key rows.

    A row is never compared with itself; a row with nothing to compare against
    scores NaN, which falls between the thresholds.
    """
    n = Q_lsh.shape[0]
    if samples is None:
        samples = sample_positions(K_lsh.shape[0], cfg)
    dist = (Q_lsh[:, None, :] != K_lsh[None, samples, :]).sum(axis=-1).astype(np.float64)
    valid = samples[None, :] != np.arange(n)[:, None]
    scores = np.full(n, np.nan)
    for j in range(n):
        d = dist[j, valid[j]]
        if d.size == 0:
            continue
        scores[j] = 0.0 if np.any(d == 0) else float(np.exp(np.mean(np.log(d))))
    return scores


# -- HLSH attention ------------------------------------------------------------------


@dataclass
class HlshPlan:
    """Which rows survive. ``record`` holds the base first, then its duplicates."""

    erased: np.ndarray  # bool (n,), rows scoring at or above htop
    record: list[int] = field(default_factory=list)

    @property
    def base(self) -> int | None:
        return self.record[0] if self.record else None

    @property
    def duplicates(self) -> list[int]:
        return self.record[1:]

    @property
    def kept(self) -> np.ndarray:
        keep = ~self.erased.copy()
        keep[self.duplicates] = False
        return np.flatnonzero(keep)


def hlsh_plan(scores: np.ndarray, cfg: HlshConfig) -> HlshPlan:
    erased = scores >= cfg.htop
    record: list[int] = []
    for j, s in enumerate(scores):
        if s <= cfg.hbot and j not in record:
            record.append(j)
    return HlshPlan(erased=erased, record=record)


def hlsh_forward(
    Q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    plan: HlshPlan,
    masked: bool = False,
    counter: OpCounter | None = None,
):
    """Attention over the rows ``plan`` keeps; duplicates copy the base row.

    Erased rows act as zero vectors: their logits are 0 (or masked out when
    ``masked``). Only kept-row products are evaluated.
    """
    n, d = Q.shape
    scale = 1.0 / np.sqrt(d)
    kept = plan.kept
    k = len(kept)
    dropped = np.ones(n, dtype=bool)
    dropped[kept] = False

    S = np.zeros((n, n))
    if k:
        S[np.ix_(kept, kept)] = (Q[kept] @ K[kept].T) * scale
    if masked:
        S[:, dropped] = -np.inf
    dup = plan.duplicates
    if dup:
        S[dup] = S[plan.base]

    Pk = softmax(S[kept]) if k else np.zeros((0, n))
    out = np.zeros((n, V.shape[1]))
    if k:
        out[kept] = Pk @ V
    if dup:
        out[dup] = out[plan.base]
    erased_rows = np.flatnonzero(plan.erased)
    if len(erased_rows) and not masked:
        # an all-zero logit row is a uniform average; no products needed
        out[erased_rows] = V.sum(axis=0) / n
    if counter is not None:
        counter.add(k * k * d + k * k + k * n * V.shape[1])
    return out, (Q, K, V, plan, S, Pk, masked)


def hlsh_backward(dout: np.ndarray, cache):
    """Straight-through gradients: dropped rows get none, duplicates feed the base."""
    Q, K, V, plan, S, Pk, masked = cache
    n, d = Q.shape
    scale = 1.0 / np.sqrt(d)
    kept = plan.kept
    dQ = np.zeros_like(Q)
    dK = np.zeros_like(K)
    dV = np.zeros_like(V)
    g = dout.copy()
    if plan.duplicates:
        g[plan.base] += dout[plan.duplicates].sum(axis=0)
    erased_rows = np.flatnonzero(plan.erased)
    if len(erased_rows) and not masked:
        dV += dout[erased_rows].sum(axis=0) / n
    if len(kept) == 0:
        return dQ, dK, dV
    gk = g[kept]
    dV += Pk.T @ gk
    dP = gk @ V.T
    dS = Pk * (dP - np.sum(dP * Pk, axis=-1, keepdims=True))
    dSkk = dS[:, kept] * scale
    dQ[kept] = dSkk @ K[kept]
    dK[kept] = dSkk.T @ Q[kept]
    return dQ, dK, dV


def hlsh_attention(
    Q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    cfg: HlshConfig,
    counter: OpCounter | None = None,
    return_plan: bool = False,
):
    """HLSH attention on one sequence with a shared query/key projection."""
    rotations = lsh_rotations(Q.shape[1], cfg)
    samples = sample_positions(K.shape[0], cfg)
    scores = hamming_scores(angular_lsh(Q, cfg, rotations), angular_lsh(K, cfg, rotations), cfg, samples)
    plan = hlsh_plan(scores, cfg)
    out, _ = hlsh_forward(Q, K, V, plan, cfg.masked, counter)
    if return_plan:
        return out, plan, scores
    return out


def hlsh_logits(Q: np.ndarray, K: np.ndarray, plan: HlshPlan) -> np.ndarray:
    """Pre-softmax logit matrix as HLSH builds it (scaled by 1/sqrt(d_k))."""
    _, cache = hlsh_forward(Q, K, np.zeros((Q.shape[0], 1)), plan)
    return cache[4]
