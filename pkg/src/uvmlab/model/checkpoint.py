"""Versioned text checkpoints: header, ``key=value`` config lines, then tensor blocks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..trace import DeltaVocabulary
from .attention import HlshConfig
from .features import FeatureSchema
from .network import LAYER_PARAMS, Model, ModelConfig

HEADER = "uvmlab-model v1"


class CheckpointError(ValueError):
    pass


def _ints(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",")) if text else ()


def config_lines(model: Model) -> list[str]:
    c = model.config
    items = {
        "schema.names": ",".join(c.schema.names),
        "schema.widths": _ints(c.schema.widths),
        "schema.buckets": c.schema.buckets,
        "num_classes": c.num_classes,
        "seq_len": c.seq_len,
        "n_layers": c.n_layers,
        "n_heads": c.n_heads,
        "ffn_hidden": c.ffn_hidden,
        "attention": c.attention.value,
        "bypass_threshold": repr(float(c.bypass_threshold)),
        "quant": c.quant.value,
        "hlsh.n_hashes": c.hlsh.n_hashes,
        "hlsh.n_buckets": c.hlsh.n_buckets,
        "hlsh.seed": c.hlsh.seed,
        "hlsh.masked": int(c.hlsh.masked),
        "seed": c.seed,
    }
    if model.vocab is not None:
        items["vocab.deltas"] = _ints(model.vocab.deltas)
        items["vocab.counts"] = _ints(model.vocab.counts)
        items["vocab.unknown_count"] = model.vocab.unknown_count
    return [f"{k}={v}" for k, v in items.items()]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, c = cfg.model_dim, cfg.hidden, cfg.num_classes
    shapes = {f"emb.{n}": (cfg.schema.buckets, w) for n, w in zip(cfg.schema.names, cfg.schema.widths)}
    per_layer = dict(wqk=(d, d), wv=(d, d), wo=(d, d), w1=(d, h), b1=(h,), w2=(h, d), b2=(d,),
                     ln1_g=(d,), ln1_b=(d,), ln2_g=(d,), ln2_b=(d,))
    for layer in range(cfg.n_layers):
        for k in LAYER_PARAMS:
            shapes[f"layer{layer}.{k}"] = per_layer[k]
    shapes["cls.w"] = (d, c)
    shapes["cls.b"] = (c,)
    return shapes


def dumps(model: Model) -> str:
    out = [HEADER, *config_lines(model)]
    for name, p in model.params.items():
        m = np.atleast_2d(p)
        out.append(f"tensor {name} {m.shape[0]} {m.shape[1]}")
        out.extend(" ".join(repr(float(x)) for x in row) for row in m)
    return "\n".join(out) + "\n"


def save(model: Model, path: str | Path) -> None:
    Path(path).write_text(dumps(model))


def _config_from(kv: dict[str, str]) -> tuple[ModelConfig, DeltaVocabulary | None]:
    try:
        schema = FeatureSchema(
            tuple(kv["schema.names"].split(",")), _parse_ints(kv["schema.widths"]), int(kv["schema.buckets"])
        )
        hlsh = HlshConfig(
            n_hashes=int(kv["hlsh.n_hashes"]),
            n_buckets=int(kv["hlsh.n_buckets"]),
            seq_len=int(kv["seq_len"]),
            seed=int(kv["hlsh.seed"]),
            masked=bool(int(kv["hlsh.masked"])),
        )
        cfg = ModelConfig(
            schema=schema,
            num_classes=int(kv["num_classes"]),
            seq_len=int(kv["seq_len"]),
            n_layers=int(kv["n_layers"]),
            n_heads=int(kv["n_heads"]),
            ffn_hidden=int(kv["ffn_hidden"]),
            attention=kv["attention"],
            bypass_threshold=float(kv["bypass_threshold"]),
            quant=kv["quant"],
            hlsh=hlsh,
            seed=int(kv["seed"]),
        )
    except KeyError as e:
        raise CheckpointError(f"missing config key {e.args[0]}") from None
    except ValueError as e:
        raise CheckpointError(f"bad config value: {e}") from None
    vocab = None
    if "vocab.deltas" in kv:
        vocab = DeltaVocabulary(
            _parse_ints(kv["vocab.deltas"]), _parse_ints(kv["vocab.counts"]), int(kv.get("vocab.unknown_count", 0))
        )
    return cfg, vocab


def loads(text: str) -> Model:
    lines = text.split("\n")
    if not lines or lines[0].strip() != HEADER:
        raise CheckpointError(f"not a checkpoint: expected header {HEADER!r}")
    kv: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i] and not lines[i].startswith("tensor "):
        key, sep, value = lines[i].partition("=")
        if not sep:
            raise CheckpointError(f"line {i + 1}: expected key=value")
        kv[key.strip()] = value.strip()
        i += 1
    cfg, vocab = _config_from(kv)
    shapes = param_shapes(cfg)
    params: dict[str, np.ndarray] = {}
    while i < len(lines) and lines[i]:
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise CheckpointError(f"line {i + 1}: expected 'tensor <name> <rows> <cols>'")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        if name not in shapes:
            raise CheckpointError(f"line {i + 1}: unexpected tensor {name}")
        body = lines[i + 1 : i + 1 + rows]
        try:
            m = np.array([[float(x) for x in row.split()] for row in body], dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"tensor {name}: malformed number") from None
        if m.shape != (rows, cols) or rows * cols != int(np.prod(shapes[name])):
            raise CheckpointError(f"tensor {name}: shape {m.shape} does not match {shapes[name]}")
        params[name] = m.reshape(shapes[name])
        i += 1 + rows
    missing = set(shapes) - set(params)
    if missing:
        raise CheckpointError(f"missing tensors: {', '.join(sorted(missing))}")
    return Model(cfg, {k: params[k] for k in shapes}, vocab)


def load(path: str | Path) -> Model:
    return loads(Path(path).read_text())
