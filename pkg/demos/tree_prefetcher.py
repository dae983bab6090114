"""
Tree-based neighborhood prefetching on a 512KB region
=====================================================

A managed allocation is cut into 64KB blocks that hang off a binary tree.
A fault migrates its whole block; any ancestor holding more than half of
its capacity then pulls in the rest of its pages.
"""

from uvmlab.prefetch import PrefetchTree, infer_allocations, tree_on_fault

BASE, PAGE = 0x10000000, 4096

# one 512KB allocation: eight blocks of sixteen pages
registry = infer_allocations([], {BASE: 8 * 16 * PAGE})
tree = PrefetchTree(registry)
resident = set()


def show(fault_block):
    req = tree_on_fault(tree, BASE + fault_block * 16 * PAGE, resident)
    resident.update(req.pages)
    blocks = sorted({(p - BASE) // (16 * PAGE) for p in req.pages})
    bar = "".join("#" if any(BASE + (b * 16 + i) * PAGE in resident for i in range(16)) else "." for b in range(8))
    print(f"fault in block {fault_block}: {len(req.pages):3d} pages from blocks {blocks}  [{bar}]")


# block 0 alone leaves its 128KB parent at exactly half: no promotion
show(0)
# block 1 fills that parent, then block 2 pushes the 256KB node to 75%
show(1)
show(2)
# the root sits at exactly half; one more block tips it and the rest follows
show(5)
