"""
Demand paging, tree prefetching and a learned predictor
=======================================================

One SM streams through memory page by page while another jumps 40 pages
per access. The tree prefetcher only helps the first; a classifier trained
on an earlier run of the same program predicts the jumps as well.
"""

from uvmlab import experiment as ex
from uvmlab import synth
from uvmlab.config import ExperimentConfig, derive_seed, with_overrides

common = {
    "trace.pattern": "interleaved_multi_sm",
    "trace.n_sms": "2",
    "trace.sm_strides": "1,40",
    "trace.cycle_gap": "200000",
    "train.epochs": "5",
}

# train on one draw of the program
cfg = with_overrides(ExperimentConfig(), {**common, "seed": "10", "trace.n_records": "3000"})
model = ex.train_from_config(cfg, ex.training_trace(cfg)).model

# replay a fresh draw under each policy, sweeping the prediction latency
test = with_overrides(cfg, {"seed": "11", "trace.n_records": "1500"})
records = synth.generate(test.trace.synthetic(derive_seed(test.seed, "trace")))
runs = ex.simulate_policies(records, ("none", "tree", "predictor"), cfg.timing,
                            (1481, 2962, 7405, 14810), model, cfg.cluster_key)
print(ex.summary_csv(runs), end="")
