"""
Learning page deltas from an interleaved trace
==============================================

Four SMs each walk their own region with a private stride. Interleaved,
the merged stream looks noisy; split by SM id, each stream is a single
repeated delta. The same small encoder is trained on both views.
"""

from uvmlab import experiment as ex
from uvmlab.config import ExperimentConfig, with_overrides

base = {
    "seed": "2",
    "trace.pattern": "interleaved_multi_sm",
    "trace.n_records": "4000",
    "model.attention": "hlsh",
    "train.epochs": "4",
}

for key in ("sm", "none"):
    cfg = with_overrides(ExperimentConfig(), {**base, "data.cluster_key": key})
    res = ex.train_from_config(cfg, ex.training_trace(cfg))
    print(f"cluster by {key:4s}: convergence {res.convergence:.2f}, "
          f"{res.model.parameter_count()} params, held-out top-1 {res.scores['top1']:.3f}, "
          f"top-10 {res.scores['topk']:.3f}")
