"""Token feature schemas and hashed-bucket embedding lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..trace import FEATURE_INDEX, FEATURES

DEFAULT_BUCKETS = 4096
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def split_widths(names: tuple[str, ...], total: int) -> tuple[int, ...]:
    """Even split of ``total`` dims; the remainder goes to delta_p (or the last feature)."""
    if total < len(names):
        raise ValueError("need at least one dimension per feature")
    base, rem = divmod(total, len(names))
    widths = [base] * len(names)
    widths[names.index("delta_p") if "delta_p" in names else -1] += rem
    return tuple(widths)


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    widths: tuple[int, ...]
    buckets: int = DEFAULT_BUCKETS

    def __post_init__(self):
        unknown = [n for n in self.names if n not in FEATURE_INDEX]
        if unknown:
            raise ValueError(f"unknown features {unknown}")
        if len(self.names) != len(self.widths) or any(w <= 0 for w in self.widths):
            raise ValueError("one positive width per feature required")
        if self.buckets < 1:
            raise ValueError("buckets must be positive")

    @property
    def model_dim(self) -> int:
        return sum(self.widths)

    @classmethod
    def build(cls, names, total: int, buckets: int = DEFAULT_BUCKETS) -> "FeatureSchema":
        names = tuple(names)
        return cls(names, split_widths(names, total), buckets)

    @classmethod
    def full(cls, buckets: int = DEFAULT_BUCKETS) -> "FeatureSchema":
        return cls.build(FEATURES, 200, buckets)

    @classmethod
    def revised(cls, buckets: int = DEFAULT_BUCKETS) -> "FeatureSchema":
        return cls.build(("page_addr", "delta_p", "pc"), 12, buckets)


def bucket_ids(values: np.ndarray, buckets: int) -> np.ndarray:
    """Fibonacci hashing of signed 64-bit feature values into ``buckets`` slots."""
    v = np.asarray(values, dtype=np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        h = v * _GOLDEN
    return ((h >> np.uint64(32)) % np.uint64(buckets)).astype(np.int64)


def token_indices(schema: FeatureSchema, tokens: np.ndarray) -> np.ndarray:
    """Raw (..., seq_len, len(FEATURES)) tokens -> (..., seq_len, n_active) table rows."""
    cols = [FEATURE_INDEX[n] for n in schema.names]
    return bucket_ids(tokens[..., cols], schema.buckets)


def embed_indices(schema: FeatureSchema, tables: dict[str, np.ndarray], idx: np.ndarray) -> np.ndarray:
    """Concatenate per-feature embedding rows; ``idx`` comes from :func:`token_indices`."""
    return np.concatenate([tables[n][idx[..., i]] for i, n in enumerate(schema.names)], axis=-1)


def embed_sequence(tokens: np.ndarray, schema: FeatureSchema, tables: dict[str, np.ndarray]) -> np.ndarray:
    """Raw tokens -> (..., seq_len, model_dim) embedding matrix."""
    return embed_indices(schema, tables, token_indices(schema, np.asarray(tokens)))
