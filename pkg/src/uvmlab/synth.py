"""Seeded synthetic GPU access traces.

These stand in for simulator-captured traces. Each pattern produces records
with realistic hardware ids so the clustering keys have something to do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import PAGE_SIZE, AccessRecord

PATTERNS = ("dominant_delta", "multi_stride_phases", "stencil2d", "interleaved_multi_sm")
DEFAULT_BASE = 0x10000000
_ROOT_PAGES = 512


@dataclass(frozen=True)
class SyntheticSpec:
    pattern: str = "dominant_delta"
    n_records: int = 10000
    seed: int = 0
    # dominant_delta
    delta: int = 4
    purity: float = 1.0
    # multi_stride_phases
    strides: tuple[int, ...] = (1, 2, 5, 3)
    phase_lengths: tuple[int, ...] = (2, 1, 1, 2)
    # stencil2d: grid in pages
    grid: tuple[int, int] = (64, 64)
    # interleaved_multi_sm
    n_sms: int = 4
    sm_strides: tuple[int, ...] = (1, 4, 9, 16)
    burst: float = 2.0
    # timing and placement
    cycle_gap: int = 20
    alloc_base: int = DEFAULT_BASE
    pc: int = 0x400

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.n_records <= 0:
            raise ValueError("n_records must be positive")
        if not 0.0 <= self.purity <= 1.0:
            raise ValueError("purity must lie in [0, 1]")
        if self.cycle_gap < 0:
            raise ValueError("cycle_gap must be non-negative")
        if self.alloc_base % PAGE_SIZE:
            raise ValueError("alloc_base must be page aligned")
        if self.pattern == "multi_stride_phases":
            if not self.strides or len(self.strides) != len(self.phase_lengths):
                raise ValueError("strides and phase_lengths must be non-empty and equal length")
            if any(p <= 0 for p in self.phase_lengths):
                raise ValueError("phase lengths must be positive")
        if self.pattern == "stencil2d" and (self.grid[0] < 3 or self.grid[1] < 1):
            raise ValueError("stencil grid needs at least 3 rows")
        if self.pattern == "interleaved_multi_sm":
            if self.n_sms < 1 or len(self.sm_strides) < 1:
                raise ValueError("need at least one SM and one stride")
            if self.burst < 1.0:
                raise ValueError("burst must be >= 1")


def _round_up(x: int, m: int) -> int:
    return -(-x // m) * m


def _cycles(rng: np.random.Generator, n: int, gap: int) -> np.ndarray:
    if gap == 0:
        return np.zeros(n, dtype=np.int64)
    steps = rng.integers(gap // 2 + 1, gap + gap // 2 + 1, size=n)
    steps[0] = 0
    return np.cumsum(steps)


def _single_stream(spec: SyntheticSpec, pages: list[int], rng: np.random.Generator) -> list[AccessRecord]:
    cycles = _cycles(rng, len(pages), spec.cycle_gap)
    offsets = rng.integers(0, PAGE_SIZE // 4, size=len(pages)) * 4
    return [
        AccessRecord(
            int(c), spec.pc, 0, 0, 0, 0, spec.alloc_base + p * PAGE_SIZE + int(o), spec.alloc_base, False
        )
        for c, p, o in zip(cycles, pages, offsets)
    ]


def _dominant(spec: SyntheticSpec, rng: np.random.Generator) -> list[int]:
    step = spec.delta
    span = max(_round_up(2 * spec.n_records * max(abs(step), 1), _ROOT_PAGES), _ROOT_PAGES)
    off = 0 if step >= 0 else span - 1
    pages = [off]
    coin = rng.random(spec.n_records)
    jumps = rng.integers(0, span, size=spec.n_records)
    for i in range(1, spec.n_records):
        off = (off + step) % span if coin[i] < spec.purity else int(jumps[i])
        pages.append(off)
    return pages


def _phases(spec: SyntheticSpec) -> list[int]:
    cycle = [s for s, n in zip(spec.strides, spec.phase_lengths) for _ in range(n)]
    per_period = sum(cycle)
    span = _round_up(abs(per_period) * (spec.n_records // len(cycle) + 2) + sum(abs(s) for s in cycle) + 1, _ROOT_PAGES)
    off = span // 2 if per_period < 0 else sum(abs(s) for s in cycle)
    pages = [off]
    for i in range(1, spec.n_records):
        off += cycle[(i - 1) % len(cycle)]
        pages.append(off % span)
    return pages


def _stencil(spec: SyntheticSpec) -> list[int]:
    rows, cols = spec.grid
    pages: list[int] = []
    while len(pages) < spec.n_records:
        for r in range(1, rows - 1):
            for c in range(cols):
                pages.extend(((r - 1) * cols + c, r * cols + c, (r + 1) * cols + c))
    return pages[: spec.n_records]


def _interleaved(spec: SyntheticSpec, rng: np.random.Generator) -> list[AccessRecord]:
    n_sms = spec.n_sms
    strides = [spec.sm_strides[i % len(spec.sm_strides)] for i in range(n_sms)]
    # each SM walks its own 2MB-aligned region of one shared allocation
    region = _round_up(max(abs(s) for s in strides) * (spec.n_records // n_sms + 16) * 2, _ROOT_PAGES)
    offsets = [0] * n_sms
    order: list[int] = []
    while len(order) < spec.n_records:
        sm = int(rng.integers(n_sms))
        length = int(rng.geometric(1.0 / spec.burst))
        order.extend([sm] * length)
    order = order[: spec.n_records]
    cycles = _cycles(rng, len(order), spec.cycle_gap)
    byte_offsets = rng.integers(0, PAGE_SIZE // 4, size=len(order)) * 4
    out = []
    started = [False] * n_sms
    for cyc, sm, bo in zip(cycles, order, byte_offsets):
        if started[sm]:
            offsets[sm] = (offsets[sm] + strides[sm]) % region
        started[sm] = True
        page = sm * region + offsets[sm]
        out.append(
            AccessRecord(
                int(cyc),
                spec.pc,
                sm,
                sm // 2,
                sm,
                sm % 2,
                spec.alloc_base + page * PAGE_SIZE + int(bo),
                spec.alloc_base,
                False,
            )
        )
    return out


def generate(spec: SyntheticSpec) -> list[AccessRecord]:
    """Deterministically generate ``spec.n_records`` records from ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.pattern == "interleaved_multi_sm":
        return _interleaved(spec, rng)
    if spec.pattern == "dominant_delta":
        pages = _dominant(spec, rng)
    elif spec.pattern == "multi_stride_phases":
        pages = _phases(spec)
    else:
        pages = _stencil(spec)
    return _single_stream(spec, pages, rng)


def sequential(n_pages: int, gap: int = 200_000, base: int = DEFAULT_BASE) -> list[AccessRecord]:
    """``n_pages`` single accesses to consecutive pages, ``gap`` cycles apart."""
    return [AccessRecord(i * gap, 0x400, 0, 0, 0, 0, base + i * PAGE_SIZE, base, False) for i in range(n_pages)]
