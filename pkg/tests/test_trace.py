import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmlab import synth
from uvmlab.trace import (
    CSV_HEADER,
    FEATURES,
    AccessRecord,
    ClusterKey,
    TraceFormatError,
    build_vocabulary,
    convergence,
    dumps,
    enrich,
    enrich_and_cluster,
    ingest,
    make_dataset,
    merge_clusters,
    shuffle_windows,
    split_datasets,
)

BASE = 0x10000000


def rec(cycle=0, vaddr=BASE, sm=0, warp=0, pc=0x400, cta=0, tpc=0, base=BASE, hit=False):
    return AccessRecord(cycle, pc, sm, tpc, cta, warp, vaddr, base, hit)


# -- ingest -------------------------------------------------------------------


def test_ingest_single_line():
    text = CSV_HEADER + "\n100,0x400,0,0,0,0,0x10000000,0x10000000,0\n"
    (r,) = ingest(text)
    assert r.cycle == 100 and r.vaddr == 0x10000000 and r.pc == 0x400 and r.hit is False


def test_ingest_header_only_is_empty():
    assert ingest(CSV_HEADER + "\n") == []


def test_ingest_decreasing_cycle_reports_line_3():
    text = CSV_HEADER + "\n50,0x400,0,0,0,0,0x1000,0x1000,0\n40,0x400,0,0,0,0,0x1000,0x1000,0\n"
    with pytest.raises(TraceFormatError) as err:
        ingest(text)
    assert err.value.lineno == 3


@pytest.mark.parametrize(
    "line",
    [
        "1,0x400,0,0,0,0,0x1000,0x1000",  # missing field
        "1,0x400,0,0,0,0,0x1000,0x1000,0,",  # trailing comma
        "1,0X400,0,0,0,0,0x1000,0x1000,0",  # uppercase prefix
        "1,0x4A0,0,0,0,0,0x1000,0x1000,0",  # uppercase digit
        "1,400,0,0,0,0,0x1000,0x1000,0",  # hex without prefix
        "1,0x400,0,0,0,0,0x1000,0x1000,2",  # hit outside {0,1}
        "-1,0x400,0,0,0,0,0x1000,0x1000,0",  # negative cycle
        "1,0x400,0,0,0,0,0x0fff,0x1000,0",  # vaddr below base
        "x,0x400,0,0,0,0,0x1000,0x1000,0",
    ],
)
def test_ingest_rejects_malformed(line):
    with pytest.raises(TraceFormatError) as err:
        ingest(CSV_HEADER + "\n" + line + "\n")
    assert err.value.lineno == 2


def test_ingest_rejects_bad_header():
    with pytest.raises(TraceFormatError):
        ingest("cycle,pc\n")


def test_csv_round_trip_and_file_objects():
    recs = synth.generate(synth.SyntheticSpec("interleaved_multi_sm", n_records=200, seed=4))
    text = dumps(recs)
    assert text.startswith(CSV_HEADER + "\n") and text.endswith("\n")
    assert ingest(io.StringIO(text)) == recs
    assert dumps(ingest(text)) == text


# -- enrichment and clustering -----------------------------------------------------


def test_one_page_step():
    (stream,) = enrich_and_cluster([rec(0, 0x0, base=0), rec(1, 0x1000, base=0)], ClusterKey.SM_ID).values()
    assert [r.delta_p for r in stream] == [0, 1]


def test_two_sms_make_two_singletons():
    clusters = enrich_and_cluster([rec(0, BASE, sm=0), rec(1, BASE + 0x5000, sm=1)], ClusterKey.SM_ID)
    assert len(clusters) == 2
    assert all(len(s) == 1 and s[0].delta_p == 0 for s in clusters.values())


def test_enrich_addresses_and_block_root_deltas():
    a, b = enrich([rec(0, BASE + 0x1234), rec(1, BASE + 0x250000 + 0x10)], ClusterKey.NONE)
    assert (a.page_addr, a.bb_addr, a.root_addr) == (BASE + 0x1000, BASE, BASE)
    assert b.delta_p == (0x250000 - 0x1000) // 4096
    assert b.delta_bb == 0x250000 // 65536
    assert b.delta_r == 1
    assert len(a.features()) == len(FEATURES)


def test_empty_trace_cannot_be_clustered():
    with pytest.raises(ValueError):
        enrich_and_cluster([], ClusterKey.SM_ID)


def test_interleaved_streams_separate_under_sm_clustering():
    spec = synth.SyntheticSpec("interleaved_multi_sm", n_records=600, n_sms=2, sm_strides=(1, 4), seed=5)
    recs = synth.generate(spec)
    # independent replay: walk each SM's own page sequence
    by_sm: dict[int, list[int]] = {}
    for r in recs:
        by_sm.setdefault(r.sm_id, []).append(r.vaddr // 4096)
    expected = {sm: [0] + list(np.diff(p)) for sm, p in by_sm.items()}
    clusters = enrich_and_cluster(recs, ClusterKey.SM_ID)
    assert {sm: [r.delta_p for r in s] for sm, s in clusters.items()} == expected
    assert set(expected[0][1:]) == {1} and set(expected[1][1:]) == {4}
    (mixed,) = enrich_and_cluster(recs, ClusterKey.NONE).values()
    assert len({r.delta_p for r in mixed[1:]}) > 2


def test_cluster_keys():
    r = rec(sm=3, warp=5, pc=0x800, cta=7)
    assert ClusterKey.SM_WARP.of(r) == (3, 5)
    assert ClusterKey.PC.of(r) == 0x800
    assert ClusterKey.CTA_ID.of(r) == 7
    assert ClusterKey.WARP_ID.of(r) == 5
    assert ClusterKey.KERNEL_ID.of(r) == ClusterKey.NONE.of(r) == 0
    assert ClusterKey.parse("sm-warp") is ClusterKey.SM_WARP
    assert ClusterKey.parse("sm") is ClusterKey.SM_ID
    with pytest.raises(ValueError):
        ClusterKey.parse("bogus")


records_strategy = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 1), st.integers(0, 40), st.integers(0, 4095)),
    min_size=1,
    max_size=60,
)


def _records(spec):
    return [rec(i, BASE + page * 4096 + off, sm=sm, warp=w) for i, (sm, w, page, off) in enumerate(spec)]


@settings(max_examples=100, deadline=None)
@given(records_strategy, st.sampled_from(list(ClusterKey)))
def test_partition_and_delta_round_trip(spec, key):
    recs = _records(spec)
    clusters = enrich_and_cluster(recs, key)
    merged = merge_clusters(clusters)
    strip = lambda r: AccessRecord(*(getattr(r, f) for f in AccessRecord.__dataclass_fields__))  # noqa: E731
    assert [strip(r) for r in merged] == recs
    for stream in clusters.values():
        assert (stream[0].delta_p, stream[0].delta_bb, stream[0].delta_r) == (0, 0, 0)
        page = stream[0].page_addr
        for r in stream:
            page += 4096 * r.delta_p
            assert page == r.page_addr
            assert r.page_addr <= r.vaddr < r.page_addr + 4096
            assert r.bb_addr <= r.vaddr < r.bb_addr + 65536
            assert r.root_addr <= r.vaddr < r.root_addr + 2097152


# -- vocabulary and convergence -----------------------------------------------------


def test_vocabulary_counts():
    v = build_vocabulary([1, 1, 1, 2])
    assert v.num_classes == 3 and v.unknown_class_id == 2
    assert v.entries == {1: (0, 3), 2: (1, 1)}
    assert v.total_count == 4
    assert v.class_of(99) == v.unknown_class_id and v.delta_of(v.unknown_class_id) is None
    assert build_vocabulary([7] * 5).num_classes == 2


def test_vocabulary_dense_ids_and_total():
    deltas = [3, -1, 3, 5, 5, 5, 0]
    v = build_vocabulary(deltas)
    assert sorted(i for i, _ in v.entries.values()) == list(range(v.num_classes - 1))
    assert v.total_count == len(deltas)
    assert [v.delta_of(v.class_of(d)) for d in deltas] == deltas


def test_empty_vocabulary_and_convergence_raise():
    with pytest.raises(ValueError):
        build_vocabulary([])
    with pytest.raises(ValueError):
        convergence([])


def test_convergence_dominant_count():
    stream = [16384] * 262077 + [1] * (264040 - 262077)
    assert convergence(stream) == pytest.approx(0.9926, abs=5e-5)


def test_convergence_simple_cases():
    assert convergence([4] * 10) == 1.0
    assert convergence([1, 2, 3, 4, 5]) == pytest.approx(0.2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=50))
def test_convergence_lower_bound(deltas):
    n = len(set(deltas))
    c = convergence(deltas)
    counts = set(Counter(deltas).values())
    assert c >= 1 / n - 1e-12
    assert (abs(c - 1 / n) < 1e-12) == (len(counts) == 1)


def test_generated_purity_matches_modal_fraction():
    recs = synth.generate(synth.SyntheticSpec("dominant_delta", n_records=20000, delta=4, purity=0.9926, seed=11))
    (stream,) = enrich_and_cluster(recs, ClusterKey.SM_ID).values()
    v = build_vocabulary(stream)
    assert v.deltas[0] == 4
    assert v.counts[0] / v.total_count == pytest.approx(0.9926, abs=0.003)


# -- windowing --------------------------------------------------------------------------


def _stream(n):
    return enrich([rec(i, BASE + (i * i % 97) * 4096) for i in range(n)], ClusterKey.NONE)


def test_dataset_examples():
    s = _stream(100)
    v = build_vocabulary(s)
    one = make_dataset(s[:31], 30, 1, v)
    assert len(one) == 1 and one.labels[0] == v.class_of(s[30].delta_p)
    assert len(make_dataset(s[:30], 30, 1, v)) == 0
    assert len(make_dataset(s, 30, 30, v)) == 41


def test_dataset_tokens_follow_stream_order():
    s = _stream(50)
    v = build_vocabulary(s)
    ds = make_dataset(s, 5, 3, v)
    for t in range(len(ds)):
        assert np.array_equal(ds.tokens[t], np.array([r.features() for r in s[t : t + 5]]))
        assert ds.labels[t] == v.class_of(s[t + 4 + 3].delta_p)


def test_dataset_count_formula_exhaustive():
    s = _stream(1000)
    v = build_vocabulary(s)
    for n in range(0, 61):
        for seq_len in range(1, 11):
            for dist in range(1, 11):
                assert len(make_dataset(s[:n], seq_len, dist, v)) == max(0, n - seq_len - dist + 1)
    for n in range(0, 1001, 7):
        for seq_len, dist in ((30, 1), (30, 30)):
            assert len(make_dataset(s[:n], seq_len, dist, v)) == max(0, n - seq_len - dist + 1)


def test_dataset_rejects_bad_lengths():
    s = _stream(10)
    with pytest.raises(ValueError):
        make_dataset(s, 0, 1, build_vocabulary(s))
    with pytest.raises(ValueError):
        make_dataset(s, 3, 0, build_vocabulary(s))


def test_unseen_deltas_become_unknown():
    train = enrich([rec(i, BASE + i * 4096) for i in range(40)], ClusterKey.NONE)
    v = build_vocabulary(train)
    test = enrich([rec(i, BASE + i * 3 * 4096) for i in range(40)], ClusterKey.NONE)
    ds = make_dataset(test, 5, 1, v)
    assert set(ds.labels) == {v.unknown_class_id}


def test_split_builds_vocabulary_from_training_part():
    pages = list(range(80)) + [80 + 7 * i for i in range(1, 21)]
    clusters = enrich_and_cluster([rec(i, BASE + p * 4096) for i, p in enumerate(pages)], ClusterKey.SM_ID)
    train, val, vocab = split_datasets(clusters, 5, 1, 0.8)
    assert 7 not in vocab.deltas
    assert len(train) == 80 - 5 and len(val) == 20 - 5
    assert set(val.labels) == {vocab.unknown_class_id}


def test_shuffle_windows_permutes_within_windows():
    s = _stream(60)
    ds = make_dataset(s, 10, 1, build_vocabulary(s))
    sh = shuffle_windows(ds, np.random.default_rng(0))
    assert np.array_equal(sh.labels, ds.labels)
    for a, b in zip(ds.tokens, sh.tokens):
        assert sorted(map(tuple, a)) == sorted(map(tuple, b))
    assert not np.array_equal(sh.tokens, ds.tokens)
