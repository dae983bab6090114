"""Independent reference implementations used only by the tests.

They favour obviousness over speed and share no code with the package.
"""

from __future__ import annotations

import math

PAGE = 4096
PAGES_PER_BLOCK = 16


def tree_walk(valid_pages: set[int], fault_page: int, n_blocks: int) -> tuple[list[int], set[int]]:
    """Brute-force neighborhood-prefetch walk over a power-of-two block region.

    Pages are region-relative indices. Returns (requested pages in order, new valid set).
    """
    valid = set(valid_pages)
    block = fault_page // PAGES_PER_BLOCK
    requested = []
    for p in range(block * PAGES_PER_BLOCK, (block + 1) * PAGES_PER_BLOCK):
        if p not in valid:
            requested.append(p)
            valid.add(p)
    size = 2
    while size <= n_blocks:
        first_block = (block // size) * size
        pages = range(first_block * PAGES_PER_BLOCK, (first_block + size) * PAGES_PER_BLOCK)
        n_valid = sum(1 for p in pages if p in valid)
        if n_valid / len(pages) > 0.5:
            for p in pages:
                if p not in valid:
                    requested.append(p)
                    valid.add(p)
        size *= 2
    return requested, valid


def node_valid_counts(valid_pages: set[int], n_blocks: int) -> dict[tuple[int, int], int]:
    """(level, index) -> valid page count, recounted from scratch."""
    out = {}
    level, width = 0, 1
    while width <= n_blocks:
        for i in range(n_blocks // width):
            lo = i * width * PAGES_PER_BLOCK
            out[(level, i)] = sum(1 for p in range(lo, lo + width * PAGES_PER_BLOCK) if p in valid_pages)
        level += 1
        width *= 2
    return out


def softmax_row(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def attention_loops(Q, K, V):
    """softmax(QK^T/sqrt(d))V with explicit loops."""
    n, d = len(Q), len(Q[0])
    out = []
    for i in range(n):
        logits = [sum(Q[i][t] * K[j][t] for t in range(d)) / math.sqrt(d) for j in range(len(K))]
        w = softmax_row(logits)
        out.append([sum(w[j] * V[j][c] for j in range(len(V))) for c in range(len(V[0]))])
    return out


def weighted_f1_loops(preds, labels):
    classes = sorted(set(labels))
    total = 0.0
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        total += f1 * sum(1 for y in labels if y == c)
    return total / len(labels)
