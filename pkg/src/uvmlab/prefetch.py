"""Prefetch policies: on-demand, tree-based neighborhood, and predictor-guided.

Every policy answers a far-fault with a :class:`PrefetchRequest`: the pages
to migrate in one PCIe transfer, faulting page included.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Container, Hashable, Iterable, Sequence

import numpy as np

from .trace import (
    BLOCK_SIZE,
    PAGE_SIZE,
    PAGES_PER_BLOCK,
    ROOT_SIZE,
    AccessRecord,
    ClusterKey,
    EnrichedRecord,
    enrich_record,
)

PAGES_PER_ROOT = ROOT_SIZE // PAGE_SIZE
PREDICTOR_MAX_PAGES = PAGES_PER_BLOCK


class AllocationError(ValueError):
    """A page lies outside every registered managed allocation."""


def page_of(addr: int) -> int:
    return addr - addr % PAGE_SIZE


# -- allocations -----------------------------------------------------------------


@dataclass(frozen=True)
class Allocation:
    base: int
    size: int

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def n_pages(self) -> int:
        return -(-self.size // PAGE_SIZE)

    def __contains__(self, addr: int) -> bool:
        return self.base <= addr < self.end


class AllocationRegistry:
    """Sorted, non-overlapping managed allocations."""

    def __init__(self, allocations: Iterable[Allocation] = ()):
        self._allocs: list[Allocation] = []
        for a in allocations:
            self.register(a.base, a.size)

    def register(self, base: int, size: int) -> Allocation:
        if size <= 0:
            raise ValueError("allocation size must be positive")
        if base % PAGE_SIZE:
            raise ValueError(f"allocation base {base:#x} is not page aligned")
        alloc = Allocation(base, size)
        i = bisect.bisect_left([a.base for a in self._allocs], base)
        if (i > 0 and self._allocs[i - 1].end > base) or (i < len(self._allocs) and self._allocs[i].base < alloc.end):
            raise ValueError(f"allocation at {base:#x} overlaps an existing one")
        self._allocs.insert(i, alloc)
        return alloc

    def find(self, addr: int) -> Allocation:
        i = bisect.bisect_right([a.base for a in self._allocs], addr) - 1
        if i >= 0 and addr in self._allocs[i]:
            return self._allocs[i]
        raise AllocationError(f"address {addr:#x} is outside every registered allocation")

    def contains(self, addr: int) -> bool:
        try:
            self.find(addr)
        except AllocationError:
            return False
        return True

    def __iter__(self):
        return iter(self._allocs)

    def __len__(self) -> int:
        return len(self._allocs)


def infer_allocations(records: Iterable[AccessRecord], sizes: dict[int, int] | None = None) -> AllocationRegistry:
    """One allocation per distinct ``alloc_base``.

    Without an explicit size, an allocation extends to the highest touched
    byte rounded up to a whole 64KB block.
    """
    sizes = dict(sizes or {})
    extent: dict[int, int] = {}
    for r in records:
        extent[r.alloc_base] = max(extent.get(r.alloc_base, 0), r.vaddr - r.alloc_base + 1)
    reg = AllocationRegistry()
    for base in sorted(set(extent) | set(sizes)):
        size = sizes.get(base) or -(-extent[base] // BLOCK_SIZE) * BLOCK_SIZE
        reg.register(base, size)
    return reg


# -- requests ----------------------------------------------------------------------


@dataclass(frozen=True)
class PrefetchRequest:
    pages: tuple[int, ...]
    fault_page: int
    policy: str

    def __len__(self) -> int:
        return len(self.pages)


def demand_only(page_addr: int, residency: Container[int]) -> PrefetchRequest:
    page = page_of(page_addr)
    return PrefetchRequest(() if page in residency else (page,), page, "none")


# -- tree prefetcher ---------------------------------------------------------------


class ChunkTree:
    """Binary tree over the 64KB blocks of one (up to) 2MB chunk.

    Level 0 holds the leaves (blocks); the root sits at ``depth``. A chunk
    shorter than 2MB spans the next power-of-two block count, and the padding
    pages carry no capacity.
    """

    def __init__(self, base: int, n_pages: int):
        if not 0 < n_pages <= PAGES_PER_ROOT:
            raise ValueError("a chunk holds between 1 and 512 pages")
        self.base = base
        self.n_pages = n_pages
        n_blocks = -(-n_pages // PAGES_PER_BLOCK)
        self.depth = max(0, int(np.ceil(np.log2(n_blocks))))
        span = (1 << self.depth) * PAGES_PER_BLOCK
        self.real = np.zeros(span, dtype=bool)
        self.real[:n_pages] = True
        self.valid = np.zeros(span, dtype=bool)

    def page_range(self, level: int, index: int) -> tuple[int, int]:
        width = PAGES_PER_BLOCK << level
        return index * width, (index + 1) * width

    def n_nodes(self, level: int) -> int:
        return 1 << (self.depth - level)

    def valid_bytes(self, level: int, index: int) -> int:
        lo, hi = self.page_range(level, index)
        return int(np.count_nonzero(self.valid[lo:hi])) * PAGE_SIZE

    def capacity_bytes(self, level: int, index: int) -> int:
        lo, hi = self.page_range(level, index)
        return int(np.count_nonzero(self.real[lo:hi])) * PAGE_SIZE

    def page_addr(self, i: int) -> int:
        return self.base + i * PAGE_SIZE

    def index_of(self, page: int) -> int:
        return (page - self.base) // PAGE_SIZE

    def sync(self, residency: Container[int]) -> None:
        """Mark pages the residency holds but the tree has not seen (seeded pages)."""
        for i in np.flatnonzero(self.real & ~self.valid):
            if self.page_addr(int(i)) in residency:
                self.valid[i] = True

    def fault(self, page: int) -> list[int]:
        """Apply the fault; return newly valid page indices in request order."""
        i = self.index_of(page)
        lo, hi = self.page_range(0, i // PAGES_PER_BLOCK)
        out = [j for j in range(lo, hi) if self.real[j] and not self.valid[j]]
        self.valid[out] = True
        leaf = i // PAGES_PER_BLOCK
        for level in range(1, self.depth + 1):
            node = leaf >> level
            if 2 * self.valid_bytes(level, node) > self.capacity_bytes(level, node):
                lo, hi = self.page_range(level, node)
                new = [j for j in range(lo, hi) if self.real[j] and not self.valid[j]]
                self.valid[new] = True
                out.extend(new)
        return out


class PrefetchTree:
    """Forest of :class:`ChunkTree` covering every registered allocation, built lazily."""

    def __init__(self, registry: AllocationRegistry):
        self.registry = registry
        self.chunks: dict[tuple[int, int], ChunkTree] = {}

    def chunk_for(self, page: int) -> ChunkTree:
        alloc = self.registry.find(page)
        k = (page - alloc.base) // ROOT_SIZE
        key = (alloc.base, k)
        if key not in self.chunks:
            first = k * PAGES_PER_ROOT
            self.chunks[key] = ChunkTree(alloc.base + first * PAGE_SIZE, min(PAGES_PER_ROOT, alloc.n_pages - first))
        return self.chunks[key]


def tree_on_fault(tree: PrefetchTree, page_addr: int, residency: Container[int]) -> PrefetchRequest:
    page = page_of(page_addr)
    chunk = tree.chunk_for(page)
    chunk.sync(residency)
    if page in residency:
        return PrefetchRequest((), page, "tree")
    return PrefetchRequest(tuple(chunk.page_addr(j) for j in chunk.fault(page)), page, "tree")


# -- predictor-guided prefetcher ---------------------------------------------------


@dataclass
class PredictorState:
    """Per-cluster rings of recent accesses feeding a trained model (top-1 only)."""

    model: object  # uvmlab.model.Model; kept untyped to avoid an import cycle
    registry: AllocationRegistry
    key: ClusterKey = ClusterKey.SM_ID
    k: int = 1
    rings: dict[Hashable, deque] = field(default_factory=dict)

    @property
    def seq_len(self) -> int:
        return self.model.config.seq_len

    def observe(self, rec: AccessRecord) -> EnrichedRecord:
        """Enrich ``rec`` against its cluster's previous access and append it to the ring."""
        cluster = self.key.of(rec)
        ring = self.rings.setdefault(cluster, deque(maxlen=self.seq_len))
        prev = ring[-1] if ring else None
        e = enrich_record(rec, prev)
        ring.append(e)
        return e

    def predict_delta(self, cluster: Hashable) -> int | None:
        from .model.network import predict_topk

        window = list(self.rings.get(cluster, ()))
        return predict_topk(self.model, window, k=self.k, pad=True)[0][0]


def block_pages(page: int, registry: AllocationRegistry, residency: Container[int]) -> list[int]:
    alloc = registry.find(page)
    start = page - (page - alloc.base) % BLOCK_SIZE
    pages = (start + i * PAGE_SIZE for i in range(PAGES_PER_BLOCK))
    return [p for p in pages if p < alloc.end and p not in residency]


def cap_request(block: list[int], fault_page: int, extra: int | None) -> list[int]:
    """Block pages plus ``extra``, trimmed to 16 pages by dropping the block page farthest from the fault.

    Distance ties drop the higher address.
    """
    if extra is None or extra in block:
        return list(block)
    pages = list(block)
    while len(pages) + 1 > PREDICTOR_MAX_PAGES:
        far = max((p for p in pages if p != fault_page), key=lambda p: (abs(p - fault_page), p))
        pages.remove(far)
    return pages + [extra]


def predictor_on_fault(state: PredictorState, record: AccessRecord, residency: Container[int]) -> PrefetchRequest:
    """Fault pages of the 64KB block plus the page one predicted delta past the fault.

    ``record`` must already be observed (it is the ring's newest entry), so the
    model predicts the delta of the access that follows the fault.
    """
    page = page_of(record.vaddr)
    block = block_pages(page, state.registry, residency)
    if page in residency:
        return PrefetchRequest((), page, "predictor")
    delta = state.predict_delta(state.key.of(record))
    extra = None
    if delta is not None and delta != 0:
        target = page + delta * PAGE_SIZE
        if state.registry.contains(target) and target not in residency:
            extra = target
    return PrefetchRequest(tuple(cap_request(block, page, extra)), page, "predictor")


# -- policy objects used by the simulator -----------------------------------------


class Policy:
    name = "base"
    charges_prediction = False

    def observe(self, record: AccessRecord) -> None:
        """Called for every access, hits included, before any fault handling."""

    def on_fault(self, record: AccessRecord, residency: Container[int]) -> PrefetchRequest:
        raise NotImplementedError


class DemandPolicy(Policy):
    name = "none"

    def on_fault(self, record, residency):
        return demand_only(record.vaddr, residency)


class TreePolicy(Policy):
    name = "tree"

    def __init__(self, registry: AllocationRegistry):
        self.tree = PrefetchTree(registry)

    def on_fault(self, record, residency):
        return tree_on_fault(self.tree, record.vaddr, residency)


class PredictorPolicy(Policy):
    name = "predictor"
    charges_prediction = True

    def __init__(self, model, registry: AllocationRegistry, key: ClusterKey = ClusterKey.SM_ID):
        self.state = PredictorState(model, registry, key)

    def observe(self, record):
        self.state.observe(record)

    def on_fault(self, record, residency):
        return predictor_on_fault(self.state, record, residency)


POLICIES = ("none", "tree", "predictor")


def make_policy(name: str, registry: AllocationRegistry, model=None, key: ClusterKey = ClusterKey.SM_ID) -> Policy:
    if name == "none":
        return DemandPolicy()
    if name == "tree":
        return TreePolicy(registry)
    if name == "predictor":
        if model is None:
            raise ValueError("predictor policy needs a trained model")
        return PredictorPolicy(model, registry, key)
    raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")


def distinct_pages(records: Sequence[AccessRecord]) -> set[int]:
    return {page_of(r.vaddr) for r in records}
