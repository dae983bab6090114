"""Pipeline steps shared by the CLI and the demo scripts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics, sim, synth
from .config import ExperimentConfig, derive_seed
from .model.network import Attention, Model, Quant, choose_attention, predict_proba, quantize
from .model.train import EpochStats, train
from .prefetch import AllocationRegistry, infer_allocations, make_policy
from .trace import (
    AccessRecord,
    ClusterKey,
    SequenceDataset,
    build_vocabulary,
    convergence,
    enrich_and_cluster,
    ingest,
    make_dataset,
    split_datasets,
)

SUMMARY_HEADER = "policy,latency_cycles,hit_rate,accuracy,coverage,unity,stall_cycles,completion_cycles,total_bytes"
HISTORY_HEADER = "epoch,train_loss,val_top1"
TOPK = 10


def read_trace(path: str | Path) -> list[AccessRecord]:
    with open(path) as fh:
        return ingest(fh)


def training_trace(cfg: ExperimentConfig) -> list[AccessRecord]:
    if cfg.trace.path:
        return read_trace(cfg.trace.path)
    return synth.generate(cfg.trace.synthetic(derive_seed(cfg.seed, "trace")))


def simulation_trace(cfg: ExperimentConfig) -> list[AccessRecord]:
    """Trace replayed by ``simulate``: an explicit file, the training file, or a fresh synthetic draw."""
    if cfg.sim.trace_path:
        return read_trace(cfg.sim.trace_path)
    if cfg.trace.path:
        return read_trace(cfg.trace.path)
    return synth.generate(cfg.trace.synthetic(derive_seed(cfg.seed, "simtrace"), cfg.sim.n_records or None))


def weighted_convergence(streams) -> float:
    """Record-weighted mean of per-cluster convergence."""
    streams = [s for s in streams if s]
    total = sum(len(s) for s in streams)
    return sum(len(s) * convergence(s) for s in streams) / total


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    convergence: float
    attention: Attention
    train_set: SequenceDataset
    val_set: SequenceDataset
    scores: dict[str, float]


def evaluate(model: Model, dataset: SequenceDataset, k: int = TOPK) -> dict[str, float]:
    """top1, topk and weighted F1 of ``model`` on ``dataset``."""
    if len(dataset) == 0:
        return {"top1": float("nan"), "topk": float("nan"), "weighted_f1": float("nan")}
    probs = predict_proba(model, dataset.tokens)
    k = min(k, probs.shape[1])
    return {
        "top1": metrics.topk_accuracy(probs, dataset.labels, 1),
        "topk": metrics.topk_accuracy(probs, dataset.labels, k),
        "weighted_f1": metrics.weighted_f1(np.argmax(probs, axis=1), dataset.labels),
    }


def train_from_config(cfg: ExperimentConfig, records: list[AccessRecord]) -> TrainResult:
    clusters = enrich_and_cluster(records, cfg.cluster_key)
    tcfg = cfg.train_config()
    train_set, val_set, vocab = split_datasets(clusters, cfg.data.seq_len, cfg.data.distance, tcfg.train_fraction)
    if len(train_set) == 0:
        raise ValueError("no training windows: trace too short for seq_len and distance after clustering")
    heads = [s[: int(round(len(s) * tcfg.train_fraction))] for s in clusters.values()]
    conv = weighted_convergence(heads)
    if cfg.model.attention == "auto":
        attention = choose_attention(conv, cfg.model.bypass_threshold)
    else:
        attention = Attention(cfg.model.attention)
    mcfg = cfg.model_config(vocab.num_classes, attention)
    model, history = train(train_set, mcfg, tcfg, val_set)
    if cfg.model.quant != "none":
        model = quantize(model, Quant(cfg.model.quant))
    return TrainResult(model, history, conv, attention, train_set, val_set, evaluate(model, val_set))


def history_csv(history: list[EpochStats]) -> str:
    return HISTORY_HEADER + "\n" + "".join(f"{h.epoch},{h.train_loss!r},{h.val_top1!r}\n" for h in history)


def model_scores(model: Model, records: list[AccessRecord], cfg: ExperimentConfig) -> dict[str, float]:
    """Classifier quality of ``model`` on every window of ``records``, using the model's own vocabulary."""
    clusters = enrich_and_cluster(records, cfg.cluster_key)
    vocab = model.vocab or build_vocabulary([r for s in clusters.values() for r in s])
    parts = [make_dataset(s, model.config.seq_len, cfg.data.distance, vocab) for s in clusters.values()]
    return evaluate(model, SequenceDataset.concat(parts, vocab, model.config.seq_len))


@dataclass
class SimRun:
    policy: str
    latency: int
    report: sim.SimReport
    scores: dict[str, float | None]

    def summary_row(self) -> str:
        s = self.scores
        r = self.report
        return (
            f"{self.policy},{self.latency},{s['page_hit_rate']!r},{s['accuracy']!r},{s['coverage']!r},"
            f"{s['unity']!r},{r.total_stall_cycles},{r.completion_cycles},{r.total_bytes}"
        )

    @property
    def stem(self) -> str:
        return f"{self.policy}_{self.latency}"


def simulate_policies(
    records: list[AccessRecord],
    policies,
    timing: sim.TimingConfig,
    latencies=(1481,),
    model: Model | None = None,
    key: ClusterKey = ClusterKey.SM_ID,
    registry: AllocationRegistry | None = None,
    model_quality: dict[str, float] | None = None,
) -> list[SimRun]:
    """One replay per (policy, latency); latency only varies for the predictor policy."""
    registry = registry or infer_allocations(records)
    base = sim.baseline_faults(records, registry)
    runs = []
    for name in policies:
        lats = list(latencies) if name == "predictor" else [0]
        for lat in lats:
            t = replace(timing, prediction_latency_cycles=lat) if lat else timing
            report = sim.replay(records, make_policy(name, registry, model, key), t, registry)
            scores: dict[str, float | None] = dict(metrics.report_metrics(report, base))
            quality = model_quality if name == "predictor" else None
            for k in ("weighted_f1", "top1", "topk"):
                scores[k] = None if quality is None else quality[k]
            runs.append(SimRun(name, lat, report, scores))
    return runs


def summary_csv(runs: list[SimRun]) -> str:
    return SUMMARY_HEADER + "\n" + "".join(r.summary_row() + "\n" for r in runs)


class SchemaError(ValueError):
    pass


COMPARE_FIELDS = ("policy", "prediction_latency_cycles", "hits", "demands", "total_stall_cycles", "total_bytes")


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def compare_reports(reports: list[tuple[str, dict]]) -> str:
    """CSV table normalizing hit rate, stall and bytes against the first report."""
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    for name, d in reports:
        for f in COMPARE_FIELDS:
            if f not in d:
                raise SchemaError(f"schema mismatch: report {name} lacks field {f!r}")

    def hit(d):
        return d["hits"] / d["demands"] if d["demands"] else 0.0

    base = reports[0][1]
    lines = ["report,policy,latency_cycles,hit_rate_ratio,stall_ratio,bytes_ratio"]
    for name, d in reports:
        lines.append(
            f"{name},{d['policy']},{d['prediction_latency_cycles']},{_ratio(hit(d), hit(base))!r},"
            f"{_ratio(d['total_stall_cycles'], base['total_stall_cycles'])!r},"
            f"{_ratio(d['total_bytes'], base['total_bytes'])!r}"
        )
    return "\n".join(lines) + "\n"
