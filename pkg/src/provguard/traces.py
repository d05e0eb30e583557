"""Fixed-length parent-child event traces: sampling, labeling, balancing."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .events import Label
from .graph import ProvGraph


class InsufficientGraph(Exception):
    pass


class MissingLabel(Exception):
    pass


class NoMinorityClass(Exception):
    pass


TRACE_BENIGN = "benign"
TRACE_APT = "apt"


@dataclass(frozen=True)
class EventTrace:
    """An l-length walk along parent-child edges; node_ids[i] is the graph
    parent of node_ids[i+1]."""

    trace_id: str
    node_ids: Tuple[str, ...]
    label: str  # TRACE_BENIGN or TRACE_APT

    def __len__(self) -> int:
        return len(self.node_ids)


def validate_trace(trace: EventTrace, graph: ProvGraph) -> bool:
    """True iff consecutive nodes are parent and child in the graph."""
    for a, b in zip(trace.node_ids, trace.node_ids[1:]):
        if graph.nodes[b].parent != a:
            return False
    return True


def label_trace(node_ids: Sequence[str], graph: ProvGraph) -> str:
    """APT iff any member event carries a Malicious ground-truth label."""
    label = TRACE_BENIGN
    for nid in node_ids:
        record_label = graph.nodes[nid].record.label
        if record_label is None:
            raise MissingLabel(f"event {nid!r} has no ground-truth label")
        if record_label is Label.MALICIOUS:
            label = TRACE_APT
    return label


# Rejection sampling on realistic graphs succeeds on the order of once per
# thousand attempts (most children are leaf events), so the per-trace budget
# needs ample headroom; it exists only to turn a hopeless graph into a clear
# error instead of a hang.
MAX_RETRIES_PER_TRACE = 20_000


def sample_traces(
    graph: ProvGraph,
    l: int,
    n: int,
    seed: int,
    start_nodes: Optional[Sequence[str]] = None,
    id_prefix: str = "trace",
    label_filter: Optional[str] = None,
) -> List[EventTrace]:
    """Sample ``n`` walks of exact length ``l``.

    Start node is drawn uniformly from the internal (process-creation) nodes,
    then each step picks a uniform child. Walks that dead-end before reaching
    length ``l`` are rejected and resampled. ``start_nodes`` restricts the
    start-node pool (used to hit rare subgraphs) and ``label_filter`` keeps
    only walks of one class; sampling stays deterministic under ``seed``.
    """
    if l < 2:
        raise ValueError("trace length must be >= 2")
    if n < 1:
        raise ValueError("must request at least one trace")
    rng = random.Random(seed)
    if start_nodes is None:
        starts = graph.internal_node_ids()
    else:
        starts = sorted(start_nodes)
    if not starts:
        raise InsufficientGraph("graph has no internal nodes to start from")

    traces: List[EventTrace] = []
    budget = MAX_RETRIES_PER_TRACE * n
    while len(traces) < n:
        walk = None
        while walk is None:
            if budget <= 0:
                raise InsufficientGraph(
                    f"no walk of length {l} found within retry budget"
                )
            budget -= 1
            walk = _try_walk(graph, rng.choice(starts), l, rng)
        label = label_trace(walk, graph)
        if label_filter is not None and label != label_filter:
            continue
        traces.append(
            EventTrace(
                trace_id=f"{id_prefix}-{len(traces):06d}",
                node_ids=tuple(walk),
                label=label,
            )
        )
    return traces


def _try_walk(graph: ProvGraph, start: str, l: int, rng: random.Random):
    walk = [start]
    current = start
    for _ in range(l - 1):
        kids = graph.children_of(current)
        if not kids:
            return None
        current = rng.choice(kids)
        walk.append(current)
    return walk


def oversample(
    dataset: Sequence[EventTrace], target_ratio: float, seed: int
) -> List[EventTrace]:
    """Duplicate APT traces (with replacement) until their fraction reaches
    ``target_ratio``; benign traces are untouched; result order shuffled."""
    if not 0.0 < target_ratio <= 0.5:
        raise ValueError("target_ratio must be in (0, 0.5]")
    apt = [t for t in dataset if t.label == TRACE_APT]
    benign = [t for t in dataset if t.label == TRACE_BENIGN]
    if not apt:
        raise NoMinorityClass("dataset contains no APT traces")
    rng = random.Random(seed)
    out = list(dataset)
    n_apt = len(apt)
    while n_apt / (n_apt + len(benign)) < target_ratio:
        out.append(rng.choice(apt))
        n_apt += 1
    rng.shuffle(out)
    return out


def split(
    dataset: Sequence[EventTrace], fraction: float, seed: int
) -> Tuple[List[EventTrace], List[EventTrace]]:
    """Stratified train/test split, deterministic under seed."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = random.Random(seed)
    train: List[EventTrace] = []
    test: List[EventTrace] = []
    for label in (TRACE_BENIGN, TRACE_APT):
        group = [t for t in dataset if t.label == label]
        rng.shuffle(group)
        cut = int(round(fraction * len(group)))
        train.extend(group[:cut])
        test.extend(group[cut:])
    rng.shuffle(train)
    rng.shuffle(test)
    return train, test


def save_traces(traces: Sequence[EventTrace], path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(
                json.dumps(
                    {"trace_id": t.trace_id, "node_ids": list(t.node_ids), "label": t.label},
                    sort_keys=True,
                )
                + "\n"
            )


def load_traces(path) -> List[EventTrace]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                EventTrace(
                    trace_id=obj["trace_id"],
                    node_ids=tuple(obj["node_ids"]),
                    label=obj["label"],
                )
            )
    return out
