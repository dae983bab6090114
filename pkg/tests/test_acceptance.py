"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are printed at the end
of the pytest run (see conftest.py) and also when this file runs as a script.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import tree_walk
from uvmlab import experiment as ex
from uvmlab import synth
from uvmlab.config import ExperimentConfig, derive_seed, with_overrides
from uvmlab.metrics import unity
from uvmlab.model.attention import (
    HlshConfig,
    OpCounter,
    angular_lsh,
    full_attention,
    full_attention_logits,
    hamming_scores,
    hlsh_attention,
    hlsh_logits,
)
from uvmlab.model.features import FeatureSchema
from uvmlab.model.gradcheck import gradient_check
from uvmlab.model.network import Attention, ModelConfig, Quant, quantize
from uvmlab.model.train import evaluate_top1, train
from uvmlab.prefetch import DemandPolicy, PrefetchTree, TreePolicy, infer_allocations, tree_on_fault
from uvmlab.sim import replay
from uvmlab.trace import convergence, enrich_and_cluster, shuffle_windows, split_datasets

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str, started: float) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail} ({time.perf_counter() - started:.1f}s)"
    RESULTS[n] = line
    print(line)
    assert ok, line


def config(seed, epochs, **overrides) -> ExperimentConfig:
    items = {"seed": str(seed), "train.epochs": str(epochs)}
    items.update({k.replace("__", "."): str(v) for k, v in overrides.items()})
    return with_overrides(ExperimentConfig(), items).validate()


def datasets(cfg: ExperimentConfig, records):
    clusters = enrich_and_cluster(records, cfg.cluster_key)
    return split_datasets(clusters, cfg.data.seq_len, cfg.data.distance, cfg.train.train_fraction)


def fit(cfg: ExperimentConfig, train_set, val_set, attention):
    mcfg = cfg.model_config(train_set.vocab.num_classes, attention)
    model, history = train(train_set, mcfg, cfg.train_config(), val_set)
    return model, history


# the trained suites are shared by several criteria
_CACHE: dict[str, object] = {}


def dominant_suite():
    if "c5" not in _CACHE:
        cfg = config(1, 20, trace__pattern="dominant_delta", trace__n_records=3000, trace__purity=0.99,
                     model__attention="bypass")
        res = ex.train_from_config(cfg, ex.training_trace(cfg))
        _CACHE["c5"] = (cfg, res)
    return _CACHE["c5"]


def interleaved_suite():
    if "c6" not in _CACHE:
        common = dict(trace__pattern="interleaved_multi_sm", trace__n_records=4000, trace__n_sms=4,
                      model__attention="hlsh")
        out = {}
        for key in ("sm", "none"):
            cfg = config(2, 8, data__cluster_key=key, **common)
            out[key] = ex.train_from_config(cfg, ex.training_trace(cfg))
        _CACHE["c6"] = out
    return _CACHE["c6"]


# -- 1 -----------------------------------------------------------------------------------------

PUBLISHED_UNITY = [
    (1, 1, 0.78, 0.92), (0.89, 1, 0.98, 0.96), (0.81, 1, 0.73, 0.84), (0.99, 1, 0.94, 0.98),
    (0.56, 1, 0.61, 0.70), (0.51, 1, 0.50, 0.63), (0.99, 1, 0.99, 0.99), (0.99, 1, 0.59, 0.84),
    (0.79, 1, 0.86, 0.88), (0.51, 1, 0.56, 0.66), (0.99, 1, 0.81, 0.93),
    (1, 0.96, 0.94, 0.97), (0.90, 0.88, 0.98, 0.92), (0.87, 0.99, 0.96, 0.94), (0.99, 0.99, 0.99, 0.99),
    (0.68, 0.99, 0.84, 0.83), (0.88, 0.53, 0.51, 0.62), (0.99, 0.98, 0.99, 0.99), (0.99, 0.99, 0.99, 0.99),
    (0.87, 0.96, 0.94, 0.92), (0.68, 0.92, 0.68, 0.75), (0.97, 0.98, 0.95, 0.97),
]


def test_c01_unity_reproduction():
    t = time.perf_counter()
    errs = [abs(unity((a, c, h)) - u) for a, c, h, u in PUBLISHED_UNITY]
    record(1, len(errs) == 22 and max(errs) <= 0.005, f"22 published rows, max |error| {max(errs):.4f}", t)


# -- 2 -----------------------------------------------------------------------------------------


def test_c02_tree_oracle():
    t = time.perf_counter()
    base, page = 0x10000000, 4096
    reg = infer_allocations([], {base: 8 * 16 * page})
    agree = 0
    for mask in range(256):
        valid = {b * 16 + i for b in range(8) if mask >> b & 1 for i in range(16)}
        for block in range(8):
            fault = block * 16 + (mask * 7 + block) % 16
            req = tree_on_fault(PrefetchTree(reg), base + fault * page, {base + p * page for p in valid})
            got = [(p - base) // page for p in req.pages]
            want = [] if fault in valid else tree_walk(valid, fault, 8)[0]
            agree += got == want
    fresh = tree_on_fault(PrefetchTree(reg), base, set()).pages
    two = tree_on_fault(PrefetchTree(reg), base + 32 * page, {base + i * page for i in range(32)}).pages
    examples = fresh == tuple(base + i * page for i in range(16)) and two == tuple(base + i * page for i in range(32, 64))
    record(2, agree == 2048 and examples, f"{agree}/2048 cases agree, derived promotion examples {'hold' if examples else 'differ'}", t)


# -- 3 -----------------------------------------------------------------------------------------


def test_c03_gradient_check():
    t = time.perf_counter()
    cfg = ModelConfig(schema=FeatureSchema.build(("page_addr", "delta_p"), 8, buckets=5), num_classes=4,
                      seq_len=5, n_layers=2, n_heads=2, attention=Attention.FULL, ffn_hidden=8)
    err = gradient_check(cfg, epsilon=1e-5)
    control = gradient_check(cfg, epsilon=1e-5, corrupt="layer1.wqk")
    record(3, err < 1e-4 and control >= 1e-4, f"max rel error {err:.2e}, sign-flip control {control:.2e}", t)


# -- 4 -----------------------------------------------------------------------------------------


def test_c04_hlsh_regimes():
    t = time.perf_counter()
    # (a) mid-band scores: every row kept, logits equal full attention
    worst_a, found = 0.0, 0
    for seed in range(200):
        cfg = HlshConfig(n_hashes=10, n_buckets=4, seq_len=16, seed=seed)
        Q = np.random.default_rng(seed).standard_normal((16, 8))
        h = angular_lsh(Q, cfg)
        s = hamming_scores(h, h, cfg)
        if not np.all((s > cfg.hbot) & (s < cfg.htop)):
            continue
        _, plan, _ = hlsh_attention(Q, Q, Q, cfg, return_plan=True)
        worst_a = max(worst_a, float(np.max(np.abs(hlsh_logits(Q, Q, plan) - full_attention_logits(Q, Q)))))
        found += 1
    # (b) identical tokens
    worst_b = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 31))
        Q = np.tile(rng.standard_normal(8), (n, 1))
        V = np.tile(rng.standard_normal(8), (n, 1))
        out = hlsh_attention(Q, Q, V, HlshConfig(seq_len=n, seed=seed))
        worst_b = max(worst_b, float(np.max(np.abs(out - full_attention(Q, Q, V)))))
    # (c) multiply-count bound on mixed inputs
    bound_ok, inputs = True, 0
    rng = np.random.default_rng(0)
    for seed in range(300):
        n = int(rng.integers(2, 31))
        protos = rng.standard_normal((int(rng.integers(1, 5)), 8))
        Q = protos[rng.integers(0, len(protos), size=n)] + rng.choice([0.0, 0.3]) * rng.standard_normal((n, 8))
        V = rng.standard_normal((n, 8))
        hc, fc = OpCounter(), OpCounter()
        _, plan, _ = hlsh_attention(Q, Q, V, HlshConfig(seq_len=n, seed=seed), counter=hc, return_plan=True)
        full_attention(Q, Q, V, counter=fc)
        bound_ok &= hc.mults <= len(plan.kept) / n * fc.mults
        inputs += 1
    ok = found >= 20 and worst_a <= 1e-12 and worst_b <= 1e-9 and bound_ok
    record(4, ok, f"(a) {found} mid-band inputs, max diff {worst_a:.1e}; (b) max diff {worst_b:.1e}; "
                  f"(c) bound held on {inputs} inputs: {bound_ok}", t)


# -- 5 -----------------------------------------------------------------------------------------


def test_c05_dominant_delta_learnability():
    t = time.perf_counter()
    cfg, res = dominant_suite()
    conv = convergence([r for s in enrich_and_cluster(ex.training_trace(cfg), cfg.cluster_key).values() for r in s])
    best = max(h.val_top1 for h in res.history)
    first = next(h.epoch for h in res.history if h.val_top1 >= 0.98) if best >= 0.98 else None
    schema = res.model.config.schema
    ok = best >= 0.98 and res.attention is Attention.BYPASS and schema.model_dim == 12 and len(schema.names) == 3
    record(5, ok, f"convergence {conv:.3f}, bypass, held-out top-1 {res.history[-1].val_top1:.4f} "
                  f"(>= 0.98 from epoch {first})", t)


# -- 6 -----------------------------------------------------------------------------------------


def test_c06_clustering_effect():
    t = time.perf_counter()
    runs = interleaved_suite()
    sm, none = runs["sm"].scores["top1"], runs["none"].scores["top1"]
    record(6, sm - none >= 0.10, f"SM-clustered top-1 {sm:.4f} vs unclustered {none:.4f} "
                                 f"(+{100 * (sm - none):.1f} points)", t)


# -- 7 -----------------------------------------------------------------------------------------


def _ordered_vs_shuffled(cfg):
    train_set, val_set, _ = datasets(cfg, ex.training_trace(cfg))
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    ordered, _ = fit(cfg, train_set, val_set, Attention.HLSH)
    s_train, s_val = shuffle_windows(train_set, rng), shuffle_windows(val_set, rng)
    shuffled, _ = fit(cfg, s_train, s_val, Attention.HLSH)
    return evaluate_top1(ordered, val_set), evaluate_top1(shuffled, s_val)


def test_c07_shuffle_probe():
    t = time.perf_counter()
    dom = config(1, 3, trace__pattern="dominant_delta", trace__n_records=3000, trace__purity=0.99)
    d_ord, d_shuf = _ordered_vs_shuffled(dom)
    per = config(3, 10, trace__pattern="multi_stride_phases", trace__n_records=3000)
    recs = ex.training_trace(per)
    conv = convergence([r for s in enrich_and_cluster(recs, per.cluster_key).values() for r in s])
    p_ord, p_shuf = _ordered_vs_shuffled(per)
    ok = abs(d_ord - d_shuf) <= 0.01 and conv < 0.5 and p_ord - p_shuf >= 0.05
    record(7, ok, f"dominant ordered {d_ord:.4f} / shuffled {d_shuf:.4f}; periodic (convergence {conv:.2f}) "
                  f"ordered {p_ord:.4f} / shuffled {p_shuf:.4f}", t)


# -- 8 -----------------------------------------------------------------------------------------


def test_c08_quantization():
    t = time.perf_counter()
    _, dom = dominant_suite()
    suites = {"dominant": dom, "interleaved": interleaved_suite()["sm"]}
    deltas = {}
    for name, res in suites.items():
        clamped = quantize(res.model, Quant.CLAMP)
        deltas[name] = abs(evaluate_top1(clamped, res.val_set) - evaluate_top1(res.model, res.val_set))
    q4 = quantize(dom.model, Quant.CLAMP4)
    footprint = q4.parameter_bytes() == q4.parameter_count() / 2
    ok = all(d <= 0.02 for d in deltas.values()) and footprint
    detail = ", ".join(f"{k} top-1 shift {100 * v:.2f} points" for k, v in deltas.items())
    record(8, ok, f"{detail}; clamp4 footprint {q4.parameter_bytes():.0f} B for {q4.parameter_count()} params", t)


# -- 9 -----------------------------------------------------------------------------------------


def test_c09_simulator_conservation():
    t = time.perf_counter()
    bad = 0
    base, page = 0x10000000, 4096
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 60))
        pages = rng.integers(0, int(rng.integers(1, 200)), size=n)
        cycles = np.cumsum(rng.integers(0, 100_000, size=n))
        records = [synth.AccessRecord(int(c), 0x400, 0, 0, 0, 0, base + int(p) * page, base, False)
                   for p, c in zip(pages, cycles)]
        reg = infer_allocations(records)
        make = (lambda: DemandPolicy()) if seed % 2 else (lambda: TreePolicy(reg))
        a, b = replay(records, make(), registry=reg), replay(records, make(), registry=reg)
        migrated = a.pages_migrated_demand + a.pages_migrated_prefetch
        disjoint = all(x.end <= y.start for x, y in zip(a.transfers, a.transfers[1:]))
        ok = (a.hits + a.far_faults == a.demands == n and a.total_bytes == page * migrated and disjoint
              and a.to_json() == b.to_json() and a.transfers == b.transfers and a.events == b.events)
        bad += not ok
    record(9, bad == 0, f"1000 random traces, {bad} violations", t)


# -- 10 and 11 share a predictor trained on a jump-stride trace ------------------------------------


def jump_suite():
    if "c11" not in _CACHE:
        common = dict(trace__pattern="interleaved_multi_sm", trace__n_sms=2, trace__sm_strides="1,40",
                      trace__cycle_gap=200_000)
        cfg = config(10, 5, trace__n_records=3000, **common)
        res = ex.train_from_config(cfg, ex.training_trace(cfg))
        test_cfg = config(11, 5, trace__n_records=1500, **common)
        records = synth.generate(test_cfg.trace.synthetic(derive_seed(test_cfg.seed, "trace")))
        _CACHE["c11"] = (cfg, res, records)
    return _CACHE["c11"]


def test_c10_latency_sensitivity():
    t = time.perf_counter()
    cfg, res, records = jump_suite()
    lats = (1481, 2962, 7405, 14810)
    runs = ex.simulate_policies(records, ("predictor",), cfg.timing, lats, res.model, cfg.cluster_key)
    table = ex.summary_csv(runs).splitlines()[1:]
    stalls = [r.report.total_stall_cycles for r in runs]
    ok = len(table) == 4 and [r.latency for r in runs] == list(lats) and all(b >= a for a, b in zip(stalls, stalls[1:]))
    record(10, ok, "stall cycles " + " <= ".join(str(s) for s in stalls), t)


def test_c11_policy_ordering():
    t = time.perf_counter()
    cfg, res, records = jump_suite()
    runs = {r.policy: r for r in ex.simulate_policies(records, ("none", "tree", "predictor"), cfg.timing,
                                                      (1481,), res.model, cfg.cluster_key)}
    p, tr, nn = (runs[k].scores for k in ("predictor", "tree", "none"))
    ps, ts = runs["predictor"].report.total_stall_cycles, runs["tree"].report.total_stall_cycles
    ok = (p["page_hit_rate"] > tr["page_hit_rate"] > nn["page_hit_rate"] and ps < ts
          and runs["tree"].report.total_stall_cycles < runs["none"].report.total_stall_cycles
          and p["unity"] > tr["unity"])
    record(11, ok, f"hit rate predictor {p['page_hit_rate']:.3f} > tree {tr['page_hit_rate']:.3f} > none "
                   f"{nn['page_hit_rate']:.3f}; stall {ps} < {ts}; unity {p['unity']:.3f} > {tr['unity']:.3f}", t)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
