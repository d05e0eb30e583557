"""Trace sampling, labeling, oversampling and stratified splitting."""

from collections import Counter

import pytest

from provguard.events import EventType, Label
from provguard.graph import ProvGraph
from provguard.traces import (
    EventTrace,
    InsufficientGraph,
    MissingLabel,
    NoMinorityClass,
    label_trace,
    load_traces,
    oversample,
    sample_traces,
    save_traces,
    split,
    validate_trace,
)

from conftest import make_record, proc_create


def single_chain_graph():
    """One path: c0 -> c1 -> f1 (no branching)."""
    g = ProvGraph()
    g.insert_event(proc_create("c0", actor="boot", obj="p0", ts=10))
    g.insert_event(proc_create("c1", actor="p0", obj="p1", ts=20, parent_actor="p0"))
    g.insert_event(make_record("f1", EventType.FILE, "open", ts=30, actor="p1"))
    return g


def mk_traces(n_benign, n_apt):
    out = [EventTrace(f"b-{i:04d}", ("x", "y"), "benign") for i in range(n_benign)]
    out += [EventTrace(f"a-{i:04d}", ("x", "y"), "apt") for i in range(n_apt)]
    return out


# -- sampling -------------------------------------------------------------------

def test_single_chain_yields_the_only_walk():
    g = single_chain_graph()
    traces = sample_traces(g, l=3, n=5, seed=0)
    assert all(t.node_ids == ("c0", "c1", "f1") for t in traces)
    assert all(t.label == "benign" for t in traces)


def test_insufficient_depth_raises():
    g = single_chain_graph()
    with pytest.raises(InsufficientGraph):
        sample_traces(g, l=4, n=1, seed=0)


def test_length_below_two_rejected():
    g = single_chain_graph()
    with pytest.raises(ValueError):
        sample_traces(g, l=1, n=1, seed=0)


def test_sampling_is_deterministic(graph):
    a = sample_traces(graph, l=4, n=50, seed=11)
    b = sample_traces(graph, l=4, n=50, seed=11)
    assert a == b
    c = sample_traces(graph, l=4, n=50, seed=12)
    assert [t.node_ids for t in a] != [t.node_ids for t in c]


def test_sampled_walks_follow_parent_edges(graph):
    for trace in sample_traces(graph, l=4, n=100, seed=3):
        assert validate_trace(trace, graph)
        assert len(trace) == 4


def test_label_filter_restricts_class(graph):
    traces = sample_traces(graph, l=4, n=30, seed=5, label_filter="benign")
    assert all(t.label == "benign" for t in traces)


def test_validate_trace_rejects_non_edges(graph):
    good = sample_traces(graph, l=3, n=1, seed=0)[0]
    bad = EventTrace("bad", (good.node_ids[0], good.node_ids[2], good.node_ids[1]), "benign")
    assert not validate_trace(bad, graph)


# -- labeling -------------------------------------------------------------------

def test_any_malicious_event_taints_the_trace():
    g = ProvGraph()
    g.insert_event(proc_create("c0", actor="boot", obj="p0", ts=10))
    g.insert_event(
        make_record("f1", EventType.FILE, "open", ts=20, actor="p0", label=Label.MALICIOUS)
    )
    assert label_trace(["c0", "f1"], g) == "apt"
    assert label_trace(["c0"], g) == "benign"


def test_unlabeled_event_raises():
    g = ProvGraph()
    g.insert_event(proc_create("c0", actor="boot", obj="p0", ts=10))
    g.insert_event(make_record("f1", EventType.FILE, "open", ts=20, actor="p0", label=None))
    with pytest.raises(MissingLabel):
        label_trace(["c0", "f1"], g)


# -- oversampling ----------------------------------------------------------------

def test_oversample_duplicates_minority_to_target():
    balanced = oversample(mk_traces(90, 10), 0.5, seed=0)
    counts = Counter(t.label for t in balanced)
    assert counts["benign"] == 90
    assert counts["apt"] == 90


def test_oversample_adds_no_new_content():
    data = mk_traces(90, 10)
    out = oversample(data, 0.5, seed=0)
    original_ids = {t.trace_id for t in data}
    assert {t.trace_id for t in out} == original_ids
    # every original trace still present exactly as often or more
    base = Counter(t.trace_id for t in data)
    after = Counter(t.trace_id for t in out)
    assert all(after[tid] >= n for tid, n in base.items())


def test_oversample_already_balanced_is_identity_up_to_order():
    data = mk_traces(50, 50)
    out = oversample(data, 0.5, seed=0)
    assert Counter(t.trace_id for t in out) == Counter(t.trace_id for t in data)


def test_oversample_without_minority_class():
    with pytest.raises(NoMinorityClass):
        oversample(mk_traces(10, 0), 0.5, seed=0)


@pytest.mark.parametrize("ratio", [0.0, 0.6, -0.1])
def test_oversample_ratio_bounds(ratio):
    with pytest.raises(ValueError):
        oversample(mk_traces(9, 1), ratio, seed=0)


# -- splitting -------------------------------------------------------------------

def test_split_is_stratified():
    train, test = split(mk_traces(80, 20), 0.8, seed=0)
    assert Counter(t.label for t in train) == {"benign": 64, "apt": 16}
    assert Counter(t.label for t in test) == {"benign": 16, "apt": 4}
    assert {t.trace_id for t in train}.isdisjoint({t.trace_id for t in test})


def test_split_full_fraction_keeps_everything_in_train():
    train, test = split(mk_traces(10, 2), 1.0, seed=0)
    assert len(train) == 12 and test == []


def test_split_deterministic_under_seed():
    data = mk_traces(40, 10)
    assert split(data, 0.8, seed=4) == split(data, 0.8, seed=4)
    assert split(data, 0.8, seed=4) != split(data, 0.8, seed=5)


def test_split_fraction_bounds():
    with pytest.raises(ValueError):
        split(mk_traces(5, 5), 0.0, seed=0)


# -- files -----------------------------------------------------------------------

def test_trace_file_round_trip(tmp_path):
    data = mk_traces(3, 2)
    path = tmp_path / "traces.jsonl"
    save_traces(data, path)
    assert load_traces(path) == data
