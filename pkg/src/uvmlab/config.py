"""Experiment configuration: dotted ``key = value`` files and named seed streams."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .model.attention import HlshConfig
from .model.features import FeatureSchema
from .model.network import Attention, ModelConfig, Quant
from .model.train import TrainConfig
from .prefetch import POLICIES
from .sim import TimingConfig
from .synth import PATTERNS, SyntheticSpec
from .trace import ClusterKey


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for a named stream such as ``"trace"`` or ``"model"``."""
    return int(np.random.SeedSequence([seed, zlib.crc32(stream.encode())]).generate_state(1)[0])


@dataclass(frozen=True)
class TraceSection:
    path: str = ""
    pattern: str = "dominant_delta"
    n_records: int = 4000
    delta: int = 4
    purity: float = 0.99
    strides: tuple[int, ...] = (1, 2, 5, 3)
    phase_lengths: tuple[int, ...] = (2, 1, 1, 2)
    grid: tuple[int, ...] = (64, 64)
    n_sms: int = 4
    sm_strides: tuple[int, ...] = (1, 4, 9, 16)
    burst: float = 2.0
    cycle_gap: int = 200_000
    alloc_base: int = 0x10000000
    pc: int = 0x400

    def synthetic(self, seed: int, n_records: int | None = None) -> SyntheticSpec:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("path",)}
        kw["grid"] = tuple(kw["grid"])
        if n_records is not None:
            kw["n_records"] = n_records
        return SyntheticSpec(seed=seed, **kw)


@dataclass(frozen=True)
class DataSection:
    cluster_key: str = "sm"
    seq_len: int = 30
    distance: int = 1


@dataclass(frozen=True)
class ModelSection:
    schema: str = "revised"  # revised | full
    attention: str = "auto"  # auto picks bypass from training convergence, else hlsh
    n_layers: int = 0  # 0 -> schema default (1 revised, 2 full)
    n_heads: int = 0  # 0 -> schema default (1 revised, 2 full)
    ffn_hidden: int = 0
    bypass_threshold: float = 0.9
    quant: str = "none"
    buckets: int = 4096
    checkpoint: str = "model.ckpt"


@dataclass(frozen=True)
class HlshSection:
    n_hashes: int = 10
    n_buckets: int = 4
    masked: bool = False


@dataclass(frozen=True)
class SimSection:
    policies: tuple[str, ...] = ("none", "tree", "predictor")
    latencies: tuple[int, ...] = (1481, 2962, 7405, 14810)
    trace_path: str = ""
    n_records: int = 0  # 0 -> same as trace.n_records


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    trace: TraceSection = field(default_factory=TraceSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    hlsh: HlshSection = field(default_factory=HlshSection)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    timing: TimingConfig = field(default_factory=TimingConfig)
    sim: SimSection = field(default_factory=SimSection)

    def validate(self) -> "ExperimentConfig":
        if self.trace.path and not Path(self.trace.path).is_file():
            raise ConfigError(f"trace.path {self.trace.path} does not exist")
        if self.sim.trace_path and not Path(self.sim.trace_path).is_file():
            raise ConfigError(f"sim.trace_path {self.sim.trace_path} does not exist")
        if not self.trace.path and self.trace.pattern not in PATTERNS:
            raise ConfigError(f"trace.pattern must be one of {', '.join(PATTERNS)}")
        if any(v <= 0 for v in self.sim.latencies):
            raise ConfigError("sim.latencies must be positive")
        bad = [p for p in self.sim.policies if p not in POLICIES]
        if bad:
            raise ConfigError(f"unknown policy {bad[0]!r}; expected one of {', '.join(POLICIES)}")
        try:
            ClusterKey.parse(self.data.cluster_key)
            Quant(self.model.quant)
            if self.model.attention != "auto":
                Attention(self.model.attention)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.model.schema not in ("revised", "full"):
            raise ConfigError("model.schema must be 'revised' or 'full'")
        return self

    @property
    def cluster_key(self) -> ClusterKey:
        return ClusterKey.parse(self.data.cluster_key)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def checkpoint_path(self) -> Path:
        p = Path(self.model.checkpoint)
        return p if p.is_absolute() else self.out_dir / p

    def model_config(self, num_classes: int, attention: Attention) -> ModelConfig:
        m = self.model
        full = m.schema == "full"
        schema = FeatureSchema.full(m.buckets) if full else FeatureSchema.revised(m.buckets)
        hlsh = HlshConfig(
            n_hashes=self.hlsh.n_hashes,
            n_buckets=self.hlsh.n_buckets,
            seq_len=self.data.seq_len,
            seed=derive_seed(self.seed, "lsh"),
            masked=self.hlsh.masked,
        )
        return ModelConfig(
            schema=schema,
            num_classes=num_classes,
            seq_len=self.data.seq_len,
            n_layers=m.n_layers or (2 if full else 1),
            n_heads=m.n_heads or (2 if full else 1),
            ffn_hidden=m.ffn_hidden,
            attention=attention,
            bypass_threshold=m.bypass_threshold,
            quant=Quant.NONE,
            hlsh=hlsh,
            seed=derive_seed(self.seed, "model"),
        )

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=derive_seed(self.seed, "train"))


def _coerce(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(int(t, 0) for t in items)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def with_overrides(cfg: ExperimentConfig, items: dict[str, str]) -> ExperimentConfig:
    """Apply dotted overrides such as ``{"timing.far_fault_us": "45"}``."""
    top = {f.name for f in fields(cfg)}
    sections: dict[str, dict] = {}
    flat: dict = {}
    for key, value in items.items():
        head, _, tail = key.partition(".")
        if head not in top:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, head)
        if not tail:
            if dataclasses.is_dataclass(current):
                raise ConfigError(f"{key} is a section; set {key}.<field>")
            flat[head] = _coerce(value, current, key)
            continue
        if not dataclasses.is_dataclass(current) or tail not in {f.name for f in fields(current)}:
            raise ConfigError(f"unknown config key {key!r}")
        sections.setdefault(head, {})[tail] = _coerce(value, getattr(current, tail), key)
    try:
        for head, kw in sections.items():
            flat[head] = replace(getattr(cfg, head), **kw)
        return replace(cfg, **flat)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def parse_config(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        items[key.strip()] = value.strip()
    return items


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    items = parse_config(Path(path).read_text()) if path else {}
    items.update(overrides or {})
    return with_overrides(ExperimentConfig(), items)


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`load_config` for every field (tuples as comma lists)."""

    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            lines += [f"{f.name}.{g.name} = {fmt(getattr(v, g.name))}" for g in fields(v)]
        else:
            lines.append(f"{f.name} = {fmt(v)}")
    return "\n".join(lines) + "\n"
