"""Discrete-event replay of an access trace against UVM residency and one PCIe channel.

Accesses arrive at their trace cycle (open loop). A far-fault asks the policy
for a request, which migrates as a single transfer on the serialized channel;
the faulting access replays when that transfer lands. Stall and completion
cycles stand in for IPC, which needs a full GPU pipeline model.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

from .prefetch import (
    AllocationRegistry,
    DemandPolicy,
    Policy,
    infer_allocations,
    page_of,
)
from .trace import PAGE_SIZE, AccessRecord

DEFAULT_CLOCK_HZ = 1_481_000_000
# 16 lanes x 8 GT/s x 128/130 line coding, in bytes per second
PCIE_BYTES_PER_S = 16 * 8e9 * 128 / 130 / 8


@dataclass(frozen=True)
class TimingConfig:
    core_clock_hz: int = DEFAULT_CLOCK_HZ
    page_walk_cycles: int = 100
    pcie_latency_cycles: int = 100
    dram_latency_cycles: int = 100
    far_fault_us: float = 45.0
    prediction_latency_cycles: int = 1481
    pcie_bytes_per_s: float = PCIE_BYTES_PER_S
    page_size: int = PAGE_SIZE
    window_cycles: int = 14810  # 10 us bandwidth windows

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"timing.{f.name} must be positive")

    @property
    def far_fault_cycles(self) -> int:
        return round(self.far_fault_us * 1e-6 * self.core_clock_hz)

    @property
    def pcie_bytes_per_cycle(self) -> float:
        return self.pcie_bytes_per_s / self.core_clock_hz

    def transfer_cycles(self, n_bytes: int) -> int:
        return self.pcie_latency_cycles + math.ceil(n_bytes / self.pcie_bytes_per_cycle)


@dataclass(frozen=True)
class Transfer:
    start: int
    end: int
    n_bytes: int
    pages: tuple[int, ...]
    fault_page: int


@dataclass(frozen=True)
class AccessEvent:
    index: int
    arrival: int
    page: int
    kind: str  # "hit", "fault" (new transfer) or "pending" (page already in flight)
    replay: int


@dataclass
class SimReport:
    policy: str = "none"
    prediction_latency_cycles: int = 0
    demands: int = 0
    hits: int = 0
    far_faults: int = 0
    pending_faults: int = 0
    pages_migrated_demand: int = 0
    pages_migrated_prefetch: int = 0
    prefetched_used: int = 0
    total_bytes: int = 0
    completion_cycles: int = 0
    total_stall_cycles: int = 0
    window_cycles: int = 0
    bandwidth: list[int] = field(default_factory=list)
    # replay logs, kept out of the JSON document
    transfers: list[Transfer] = field(default_factory=list, repr=False)
    events: list[AccessEvent] = field(default_factory=list, repr=False)

    JSON_FIELDS = (
        "policy", "prediction_latency_cycles", "demands", "hits", "far_faults", "pending_faults",
        "pages_migrated_demand", "pages_migrated_prefetch", "prefetched_used", "total_bytes",
        "completion_cycles", "total_stall_cycles", "window_cycles", "bandwidth",
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.JSON_FIELDS}

    def to_json(self, extra: dict | None = None) -> str:
        d = self.to_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        missing = [k for k in cls.JSON_FIELDS if k not in d]
        if missing:
            raise ValueError(f"schema mismatch: report lacks field {missing[0]!r}")
        return cls(**{k: d[k] for k in cls.JSON_FIELDS})


class ReplayError(ValueError):
    pass


def _apportion(report_transfers: Iterable[Transfer], window_cycles: int, horizon: int) -> list[int]:
    """Integer bytes per window; each transfer spreads evenly over its busy interval."""
    if window_cycles <= 0:
        raise ValueError("window size must be positive")
    n = -(-horizon // window_cycles) if horizon > 0 else 0
    out = [0] * n
    for t in report_transfers:
        dur = t.end - t.start
        w = t.start // window_cycles
        done = 0
        while done < t.n_bytes:
            edge = min((w + 1) * window_cycles, t.end)
            # floor of the cumulative share telescopes, so the total is exact
            cum = t.n_bytes if edge >= t.end else t.n_bytes * (edge - t.start) // dur
            out[w] += cum - done
            done = cum
            w += 1
    return out


def replay(
    records: Sequence[AccessRecord],
    policy: Policy | None = None,
    timing: TimingConfig = TimingConfig(),
    registry: AllocationRegistry | None = None,
    resident: Iterable[int] = (),
) -> SimReport:
    """Replay ``records`` (cycle-ordered) and report traffic, hits and stall.

    ``resident`` seeds pages as already on the GPU before the first access.
    """
    policy = policy or DemandPolicy()
    if registry is None:
        registry = infer_allocations(records)
    latency = timing.prediction_latency_cycles if policy.charges_prediction else 0
    rep = SimReport(policy=policy.name, prediction_latency_cycles=latency, window_cycles=timing.window_cycles)

    # page -> (provenance, ready cycle); provenance in {"seed", "demand", "prefetch"}
    requested: dict[int, tuple[str, int]] = {p: ("seed", 0) for p in map(page_of, resident)}
    used: set[int] = set()
    busy_until = 0
    last_cycle = None
    for i, rec in enumerate(records):
        a = rec.cycle
        if last_cycle is not None and a < last_cycle:
            raise ReplayError(f"record {i}: cycle {a} precedes {last_cycle}; input must be cycle-ordered")
        last_cycle = a
        page = page_of(rec.vaddr)
        registry.find(page)
        policy.observe(rec)
        rep.demands += 1
        entry = requested.get(page)
        if entry is not None and entry[1] <= a:
            rep.hits += 1
            replay_at = a + timing.page_walk_cycles
            kind = "hit"
        elif entry is not None:
            rep.far_faults += 1
            rep.pending_faults += 1
            replay_at = entry[1]
            kind = "pending"
        else:
            rep.far_faults += 1
            req = policy.on_fault(rec, requested)
            if page not in req.pages:
                raise ReplayError(f"policy {policy.name} did not request the faulting page {page:#x}")
            n_bytes = len(req.pages) * timing.page_size
            start = max(a + timing.far_fault_cycles + latency, busy_until)
            end = start + timing.transfer_cycles(n_bytes)
            busy_until = end
            rep.transfers.append(Transfer(start, end, n_bytes, req.pages, page))
            for p in req.pages:
                requested[p] = ("demand" if p == page else "prefetch", end)
            rep.pages_migrated_demand += 1
            rep.pages_migrated_prefetch += len(req.pages) - 1
            rep.total_bytes += n_bytes
            replay_at = end
            kind = "fault"
            entry = requested[page]
        if entry[0] == "prefetch" and page not in used:
            used.add(page)
            rep.prefetched_used += 1
        if kind != "hit":
            rep.total_stall_cycles += replay_at - a
        rep.completion_cycles = max(rep.completion_cycles, replay_at)
        rep.events.append(AccessEvent(i, a, page, kind, replay_at))
    rep.bandwidth = _apportion(rep.transfers, timing.window_cycles, rep.completion_cycles)
    return rep


def baseline_faults(records: Sequence[AccessRecord], registry: AllocationRegistry | None = None) -> int:
    """Far-faults of page-granular on-demand migration without eviction: one per distinct page."""
    registry = registry or infer_allocations(records)
    pages = set()
    for r in records:
        p = page_of(r.vaddr)
        registry.find(p)
        pages.add(p)
    return len(pages)


def window_bandwidth(report: SimReport, window_cycles: int | None = None,
                     core_clock_hz: int = DEFAULT_CLOCK_HZ) -> list[tuple[int, float]]:
    """(window index, bytes/s) pairs; bytes are re-binned from the transfer log when sizes differ."""
    if window_cycles is not None and window_cycles <= 0:
        raise ValueError("window size must be positive")
    if window_cycles is None or window_cycles == report.window_cycles:
        window_cycles = report.window_cycles
        series = report.bandwidth
    else:
        series = _apportion(report.transfers, window_cycles, report.completion_cycles)
    scale = core_clock_hz / window_cycles
    return [(i, b * scale) for i, b in enumerate(series)]


def bandwidth_csv(series: list[tuple[int, float]]) -> str:
    return "window,bytes_per_s\n" + "".join(f"{i},{repr(float(v))}\n" for i, v in series)
