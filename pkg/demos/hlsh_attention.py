"""
Hamming-score attention pruning
===============================

Queries are hashed with random rotations. Each row is scored by the
geometric mean of its Hamming distances to a sample of other rows. Rows far
from everything are erased, near-duplicates share one computed output, and
the rest get ordinary attention.
"""

import numpy as np

from uvmlab.model.attention import HlshConfig, OpCounter, full_attention, hlsh_attention

rng = np.random.default_rng(0)
n, d = 30, 8
cfg = HlshConfig(n_hashes=10, n_buckets=4, seq_len=n, seed=1)

# three regimes: unrelated rows, one repeated token, and a few tight clusters
protos = rng.standard_normal((3, d))
inputs = {
    "random": rng.standard_normal((n, d)),
    "identical": np.tile(rng.standard_normal(d), (n, 1)),
    "clustered": protos[rng.integers(0, 3, size=n)] + 1e-3 * rng.standard_normal((n, d)),
}

for name, Q in inputs.items():
    hc, fc = OpCounter(), OpCounter()
    out, plan, _ = hlsh_attention(Q, Q, Q, cfg, counter=hc, return_plan=True)
    ref = full_attention(Q, Q, Q, counter=fc)
    print(f"{name:9s}  kept {len(plan.kept):2d}/{n}  erased {int(plan.erased.sum()):2d}  "
          f"shared {len(plan.duplicates):2d}  mults {hc.mults:6d} vs {fc.mults:6d}  "
          f"max |diff| {np.max(np.abs(out - ref)):.1e}")

# A single zero distance to any sampled row zeroes the geometric mean, so in
# the clustered input every row joins one record list and copies the first
# row's output. The saving is large; the approximation is only exact when the
# duplicates really are the same token.
