"""Prediction-quality and prefetcher-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import SimReport


def _check_fraction(name: str, x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


@dataclass(frozen=True)
class UnityInputs:
    accuracy: float
    coverage: float
    page_hit_rate: float

    def __post_init__(self):
        for name in ("accuracy", "coverage", "page_hit_rate"):
            _check_fraction(name, getattr(self, name))


def unity(u: UnityInputs | tuple[float, float, float]) -> float:
    """Cube root of accuracy x coverage x page hit rate."""
    if not isinstance(u, UnityInputs):
        u = UnityInputs(*u)
    return float(np.cbrt(u.accuracy * u.coverage * u.page_hit_rate))


def prefetcher_accuracy(report: SimReport) -> float:
    """Fraction of prefetched pages later demanded; 1.0 when nothing was prefetched."""
    if report.pages_migrated_prefetch == 0:
        return 1.0
    return report.prefetched_used / report.pages_migrated_prefetch


def prefetcher_coverage(report: SimReport, baseline_fault_count: int) -> float:
    """Share of the on-demand baseline's faults the policy removed, clamped to [0, 1]."""
    if baseline_fault_count == 0:
        return 1.0
    return min(1.0, max(0.0, (baseline_fault_count - report.far_faults) / baseline_fault_count))


def page_hit_rate(report: SimReport) -> float:
    return report.hits / report.demands if report.demands else 0.0


def report_metrics(report: SimReport, baseline_fault_count: int) -> dict[str, float]:
    acc = prefetcher_accuracy(report)
    cov = prefetcher_coverage(report, baseline_fault_count)
    hit = page_hit_rate(report)
    return {"accuracy": acc, "coverage": cov, "page_hit_rate": hit, "unity": unity((acc, cov, hit))}


def weighted_f1(predictions, labels) -> float:
    """Per-class F1 averaged with support weights; classes never predicted score 0."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape[0] if p.ndim else 0} predictions vs {y.shape[0] if y.ndim else 0} labels")
    if y.size == 0:
        return 0.0
    total = 0.0
    for c in np.unique(y):
        tp = np.count_nonzero((p == c) & (y == c))
        fp = np.count_nonzero((p == c) & (y != c))
        fn = np.count_nonzero((p != c) & (y == c))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        total += f1 * np.count_nonzero(y == c)
    return float(total / y.size)


def topk_accuracy(probability_rows, labels, k: int) -> float:
    """Share of rows whose label ranks in the top ``k``; ties go to the lower class id."""
    probs = np.asarray(probability_rows, dtype=np.float64)
    y = np.asarray(labels)
    if probs.ndim != 2 or len(probs) != len(y):
        raise ValueError("need one probability row per label")
    if not 1 <= k <= probs.shape[1]:
        raise ValueError(f"k must lie in 1..{probs.shape[1]}, got {k}")
    if len(y) == 0:
        return 0.0
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    top = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == y[:, None], axis=1)))
