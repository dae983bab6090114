"""Access-trace ingestion, enrichment, clustering and windowing.

A trace is a cycle-ordered list of :class:`AccessRecord`. Enrichment adds the
page / basic-block / root addresses and the per-cluster address deltas that
the predictor consumes; windowing turns a cluster stream into fixed-length
labeled sequences.
"""

from __future__ import annotations

import enum
import io
from collections import Counter
from dataclasses import dataclass, fields
from typing import Hashable, Iterable, Iterator, Sequence, TextIO

import numpy as np

PAGE_SIZE = 4096
BLOCK_SIZE = 65536
ROOT_SIZE = 2 * 1024 * 1024
PAGES_PER_BLOCK = BLOCK_SIZE // PAGE_SIZE

CSV_HEADER = "cycle,pc,sm,tpc,cta,warp,vaddr,alloc_base,hit"

# Token layout shared by datasets and the model's feature schema.
FEATURES = (
    "pc",
    "hit",
    "warp_id",
    "sm_id",
    "tpc_id",
    "cta_id",
    "page_addr",
    "bb_addr",
    "root_addr",
    "alloc_base",
    "delta_p",
    "delta_bb",
    "delta_r",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}


class TraceFormatError(ValueError):
    """Malformed or non-monotone trace input; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class AccessRecord:
    cycle: int
    pc: int
    sm_id: int
    tpc_id: int
    cta_id: int
    warp_id: int
    vaddr: int
    alloc_base: int
    hit: bool


@dataclass(frozen=True)
class EnrichedRecord(AccessRecord):
    page_addr: int
    bb_addr: int
    root_addr: int
    delta_p: int
    delta_bb: int
    delta_r: int

    def features(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, name)) for name in FEATURES)


_ACCESS_FIELDS = tuple(f.name for f in fields(AccessRecord))


class ClusterKey(enum.Enum):
    """How records are grouped into independent streams."""

    NONE = "none"
    PC = "pc"
    KERNEL_ID = "kernel"
    SM_ID = "sm"
    CTA_ID = "cta"
    WARP_ID = "warp"
    SM_WARP = "sm_warp"

    def of(self, rec: AccessRecord) -> Hashable:
        if self is ClusterKey.PC:
            return rec.pc
        if self is ClusterKey.SM_ID:
            return rec.sm_id
        if self is ClusterKey.CTA_ID:
            return rec.cta_id
        if self is ClusterKey.WARP_ID:
            return rec.warp_id
        if self is ClusterKey.SM_WARP:
            return (rec.sm_id, rec.warp_id)
        # Trace files hold a single kernel, so the kernel id is constant.
        return 0

    @classmethod
    def parse(cls, text: str) -> "ClusterKey":
        text = text.strip().lower().replace("-", "_")
        for key in cls:
            if text in (key.value, key.name.lower()):
                return key
        raise ValueError(f"unknown cluster key {text!r}")


# -- CSV ---------------------------------------------------------------------


def _parse_dec(text: str, lineno: int, name: str) -> int:
    if not text.isdigit():
        raise TraceFormatError(lineno, f"field {name!r}: expected unsigned decimal, got {text!r}")
    return int(text)


def _parse_hex(text: str, lineno: int, name: str) -> int:
    digits = text[2:]
    if not text.startswith("0x") or not digits or any(c not in "0123456789abcdef" for c in digits):
        raise TraceFormatError(lineno, f"field {name!r}: expected lowercase 0x-hex, got {text!r}")
    return int(digits, 16)


def _parse_line(line: str, lineno: int) -> AccessRecord:
    parts = line.split(",")
    if len(parts) != 9:
        raise TraceFormatError(lineno, f"expected 9 fields, got {len(parts)}")
    cycle = _parse_dec(parts[0], lineno, "cycle")
    pc = _parse_hex(parts[1], lineno, "pc")
    sm, tpc, cta, warp = (
        _parse_dec(parts[i], lineno, n) for i, n in zip(range(2, 6), ("sm", "tpc", "cta", "warp"))
    )
    vaddr = _parse_hex(parts[6], lineno, "vaddr")
    base = _parse_hex(parts[7], lineno, "alloc_base")
    if parts[8] not in ("0", "1"):
        raise TraceFormatError(lineno, f"field 'hit': expected 0 or 1, got {parts[8]!r}")
    if vaddr < base:
        raise TraceFormatError(lineno, "vaddr below alloc_base")
    return AccessRecord(cycle, pc, sm, tpc, cta, warp, vaddr, base, parts[8] == "1")


def ingest(source: str | TextIO | Iterable[str]) -> list[AccessRecord]:
    """Parse a trace CSV (text, open file, or iterable of lines)."""
    lines: Iterator[str]
    if isinstance(source, str):
        lines = iter(source.splitlines())
    else:
        lines = (ln[:-1] if ln.endswith("\n") else ln for ln in source)
    header = next(lines, None)
    if header != CSV_HEADER:
        raise TraceFormatError(1, f"expected header {CSV_HEADER!r}")
    records: list[AccessRecord] = []
    last_cycle = -1
    for lineno, line in enumerate(lines, start=2):
        rec = _parse_line(line, lineno)
        if rec.cycle < last_cycle:
            raise TraceFormatError(lineno, f"cycle {rec.cycle} decreases (previous {last_cycle})")
        last_cycle = rec.cycle
        records.append(rec)
    return records


def format_record(rec: AccessRecord) -> str:
    return (
        f"{rec.cycle},{rec.pc:#x},{rec.sm_id},{rec.tpc_id},{rec.cta_id},{rec.warp_id},"
        f"{rec.vaddr:#x},{rec.alloc_base:#x},{int(rec.hit)}"
    )


def write_trace(records: Iterable[AccessRecord], out: TextIO) -> None:
    out.write(CSV_HEADER + "\n")
    for rec in records:
        out.write(format_record(rec) + "\n")


def dumps(records: Iterable[AccessRecord]) -> str:
    buf = io.StringIO()
    write_trace(records, buf)
    return buf.getvalue()


# -- enrichment & clustering -------------------------------------------------


def enrich_record(rec: AccessRecord, prev: EnrichedRecord | None) -> EnrichedRecord:
    """Attach page/block/root addresses and the deltas versus ``prev`` (same cluster)."""
    page = rec.vaddr - rec.vaddr % PAGE_SIZE
    bb = rec.vaddr - rec.vaddr % BLOCK_SIZE
    root = rec.vaddr - rec.vaddr % ROOT_SIZE
    if prev is None:
        dp = dbb = dr = 0
    else:
        dp = (page - prev.page_addr) // PAGE_SIZE
        dbb = (bb - prev.bb_addr) // BLOCK_SIZE
        dr = (root - prev.root_addr) // ROOT_SIZE
    return EnrichedRecord(
        **{name: getattr(rec, name) for name in _ACCESS_FIELDS},
        page_addr=page,
        bb_addr=bb,
        root_addr=root,
        delta_p=dp,
        delta_bb=dbb,
        delta_r=dr,
    )


def enrich(records: Sequence[AccessRecord], key: ClusterKey) -> list[EnrichedRecord]:
    """Enrich records in their original order; deltas are taken per cluster stream."""
    last: dict[Hashable, EnrichedRecord] = {}
    out = []
    for rec in records:
        cid = key.of(rec)
        e = enrich_record(rec, last.get(cid))
        last[cid] = e
        out.append(e)
    return out


def enrich_and_cluster(
    records: Sequence[AccessRecord], key: ClusterKey
) -> dict[Hashable, list[EnrichedRecord]]:
    """Partition records by ``key``; clusters appear in order of first occurrence."""
    if not records:
        raise ValueError("cannot cluster an empty trace")
    clusters: dict[Hashable, list[EnrichedRecord]] = {}
    for rec in enrich(records, key):
        clusters.setdefault(key.of(rec), []).append(rec)
    return clusters


def merge_clusters(clusters: dict[Hashable, list[EnrichedRecord]]) -> list[EnrichedRecord]:
    """Merge cluster streams back into one cycle-ordered stream (stable per cluster)."""
    tagged = [
        (rec.cycle, ci, i, rec)
        for ci, stream in enumerate(clusters.values())
        for i, rec in enumerate(stream)
    ]
    tagged.sort(key=lambda t: t[:3])
    return [t[3] for t in tagged]


# -- vocabulary --------------------------------------------------------------


def _deltas(stream: Iterable[EnrichedRecord] | Iterable[int]) -> list[int]:
    return [r if isinstance(r, (int, np.integer)) else r.delta_p for r in stream]


@dataclass(frozen=True)
class DeltaVocabulary:
    """Signed page delta -> class id. The last class is UNKNOWN."""

    deltas: tuple[int, ...]
    counts: tuple[int, ...]
    unknown_count: int = 0

    @classmethod
    def from_counts(cls, counter: Counter) -> "DeltaVocabulary":
        ordered = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(int(d) for d, _ in ordered), tuple(int(c) for _, c in ordered))

    def __post_init__(self):
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.deltas)})

    @property
    def num_classes(self) -> int:
        return len(self.deltas) + 1

    @property
    def unknown_class_id(self) -> int:
        return len(self.deltas)

    @property
    def total_count(self) -> int:
        return sum(self.counts) + self.unknown_count

    @property
    def entries(self) -> dict[int, tuple[int, int]]:
        return {d: (i, c) for i, (d, c) in enumerate(zip(self.deltas, self.counts))}

    def class_of(self, delta: int) -> int:
        return self._index.get(int(delta), self.unknown_class_id)

    def delta_of(self, class_id: int) -> int | None:
        if 0 <= class_id < len(self.deltas):
            return self.deltas[class_id]
        return None


def build_vocabulary(stream: Iterable[EnrichedRecord] | Iterable[int]) -> DeltaVocabulary:
    deltas = _deltas(stream)
    if not deltas:
        raise ValueError("cannot build a vocabulary from an empty stream")
    return DeltaVocabulary.from_counts(Counter(deltas))


def convergence(stream: Iterable[EnrichedRecord] | Iterable[int]) -> float:
    """Fraction of records carrying the most frequent page delta."""
    deltas = _deltas(stream)
    if not deltas:
        raise ValueError("convergence of an empty stream is undefined")
    return max(Counter(deltas).values()) / len(deltas)


# -- windowing ---------------------------------------------------------------


@dataclass(frozen=True)
class LabeledSequence:
    tokens: np.ndarray  # (seq_len, len(FEATURES)) int64
    label: int


class SequenceDataset:
    """Array-backed collection of labeled windows.

    ``tokens`` has shape (N, seq_len, len(FEATURES)); ``labels`` has shape (N,).
    """

    def __init__(self, tokens: np.ndarray, labels: np.ndarray, vocab: DeltaVocabulary):
        self.tokens = tokens
        self.labels = labels
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledSequence:
        return LabeledSequence(self.tokens[i], int(self.labels[i]))

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, idx) -> "SequenceDataset":
        return SequenceDataset(self.tokens[idx], self.labels[idx], self.vocab)

    @classmethod
    def concat(cls, parts: Sequence["SequenceDataset"], vocab: DeltaVocabulary, seq_len: int):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, seq_len, len(FEATURES)), np.int64), np.zeros(0, np.int64), vocab)
        return cls(
            np.concatenate([p.tokens for p in parts]),
            np.concatenate([p.labels for p in parts]),
            vocab,
        )


def feature_matrix(stream: Sequence[EnrichedRecord]) -> np.ndarray:
    return np.array([r.features() for r in stream], dtype=np.int64).reshape(-1, len(FEATURES))


def make_dataset(
    stream: Sequence[EnrichedRecord], seq_len: int, distance: int, vocab: DeltaVocabulary
) -> SequenceDataset:
    """Slide a window over ``stream``.

    The label of window ``stream[t:t+seq_len]`` is the class of the page delta
    ``distance`` accesses after the window's last token.
    """
    if seq_len < 1 or distance < 1:
        raise ValueError("seq_len and distance must be >= 1")
    n = max(0, len(stream) - seq_len - distance + 1)
    feats = feature_matrix(stream)
    if n == 0:
        return SequenceDataset(np.zeros((0, seq_len, len(FEATURES)), np.int64), np.zeros(0, np.int64), vocab)
    windows = np.lib.stride_tricks.sliding_window_view(feats, seq_len, axis=0)[:n]
    tokens = np.ascontiguousarray(windows.transpose(0, 2, 1))
    dp = feats[:, FEATURE_INDEX["delta_p"]]
    targets = dp[seq_len - 1 + distance : seq_len - 1 + distance + n]
    labels = np.array([vocab.class_of(d) for d in targets], dtype=np.int64)
    return SequenceDataset(tokens, labels, vocab)


def split_datasets(
    clusters: dict[Hashable, list[EnrichedRecord]],
    seq_len: int,
    distance: int,
    train_fraction: float = 0.8,
    vocab: DeltaVocabulary | None = None,
) -> tuple[SequenceDataset, SequenceDataset, DeltaVocabulary]:
    """Chronological per-cluster split; the vocabulary sees training records only."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    heads, tails = [], []
    for stream in clusters.values():
        cut = int(round(len(stream) * train_fraction))
        heads.append(stream[:cut])
        tails.append(stream[cut:])
    if vocab is None:
        vocab = build_vocabulary([r for h in heads for r in h])
    train = SequenceDataset.concat([make_dataset(h, seq_len, distance, vocab) for h in heads], vocab, seq_len)
    val = SequenceDataset.concat([make_dataset(t, seq_len, distance, vocab) for t in tails], vocab, seq_len)
    return train, val, vocab


def shuffle_windows(dataset: SequenceDataset, rng: np.random.Generator) -> SequenceDataset:
    """Independently permute the token order inside every window."""
    n, s, _ = dataset.tokens.shape
    order = np.argsort(rng.random((n, s)), axis=1)
    tokens = np.take_along_axis(dataset.tokens, order[:, :, None], axis=1)
    return SequenceDataset(tokens, dataset.labels.copy(), dataset.vocab)
