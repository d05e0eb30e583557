"""Trace encoders: contextual (l x d1) and Poisson-neighborhood (l x d2).

Both encoders are pure functions of the trace and the immutable neighborhood
snapshots stored on graph nodes, so identical inputs give identical matrices.
Ephemeral record fields (pid/ppid/sid) are never read here.
"""

from __future__ import annotations

import math
import zlib
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .events import EventType, Principal
from .graph import NS_PER_SEC, EventNode, NeighborhoodSnapshot, ProvGraph
from .traces import EventTrace

FEATURE_LAYOUT_VERSION = 1

# Context-row layout: 4 one-hot event type, 8 one-hot action bucket,
# 1 log-scaled seconds-from-parent, 16 one-hot hashed parent image, 1
# principal flag.
N_TYPE_SLOTS = 4
ACTION_BUCKETS = ("create", "open", "modify", "delete", "terminate", "connect", "send", "command")
N_ACTION_SLOTS = len(ACTION_BUCKETS)
N_IMAGE_BUCKETS = 16
D1 = N_TYPE_SLOTS + N_ACTION_SLOTS + 1 + N_IMAGE_BUCKETS + 1

_ACTION_INDEX = {a: i for i, a in enumerate(ACTION_BUCKETS)}
# Unmapped actions share the last bucket; telemetry outside the fixed
# vocabulary is rare once pruning has run.
_OTHER_ACTION_SLOT = N_ACTION_SLOTS - 1

# Per-type component orders within a neighborhood row.
D_ORDER = (EventType.PROCESS, EventType.FILE, EventType.FLOW, EventType.SHELL)
P_ORDER = (EventType.FILE, EventType.PROCESS, EventType.FLOW, EventType.SHELL)
ALL_TYPES = D_ORDER


def d2_for_types(types: Sequence[EventType]) -> int:
    return 2 * len(types)


def action_bucket(action: str) -> int:
    return _ACTION_INDEX.get(action, _OTHER_ACTION_SLOT)


def image_bucket(image_path: str) -> int:
    """Stable non-cryptographic 16-way hash of a binary name+location."""
    return zlib.crc32(image_path.encode("utf-8")) % N_IMAGE_BUCKETS


# -- Poisson waiting-time probabilities -------------------------------------

def waiting_prob_leq(lam: float, dt: float) -> float:
    """P(waiting time <= dt) for an exponential inter-arrival at rate lam."""
    if lam <= 0:
        raise ValueError("rate must be positive")
    if dt < 0:
        raise ValueError("waiting time must be non-negative")
    return 1.0 - math.exp(-lam * dt)


def waiting_prob_gt(lam: float, dt: float) -> float:
    """P(waiting time > dt); complement of waiting_prob_leq."""
    if lam <= 0:
        raise ValueError("rate must be positive")
    if dt < 0:
        raise ValueError("waiting time must be non-negative")
    return math.exp(-lam * dt)


def deviation_vector(
    snapshot: NeighborhoodSnapshot,
    now: int,
    types: Sequence[EventType] = ALL_TYPES,
    rates: Optional[Dict[EventType, float]] = None,
) -> np.ndarray:
    """Per-type expected-minus-actual sibling counts.

    Expected count is rate * elapsed seconds; ``rates`` overrides the
    snapshot's own estimator (used by tests and ablations).
    """
    elapsed = snapshot.elapsed_seconds(now)
    out = np.empty(len(types))
    for i, t in enumerate(_ordered(D_ORDER, types)):
        lam = rates[t] if rates is not None else snapshot.rate(t, now)
        out[i] = lam * elapsed - snapshot.counts[t]
    return out


def p_event_vector(
    node: EventNode,
    snapshot: Optional[NeighborhoodSnapshot] = None,
    types: Sequence[EventType] = ALL_TYPES,
    rates: Optional[Dict[EventType, float]] = None,
) -> np.ndarray:
    """Per-type waiting probabilities at the node's timestamp.

    The node's own event type uses P(waiting <= dt); every other type, still
    waiting to occur, uses P(waiting > dt).
    """
    if snapshot is None:
        snapshot = node.snapshot
    now = node.record.timestamp
    own = node.record.event_type
    out = np.empty(len(types))
    for i, t in enumerate(_ordered(P_ORDER, types)):
        lam = rates[t] if rates is not None else snapshot.rate(t, now)
        dt = snapshot.waiting_seconds(t, now)
        out[i] = waiting_prob_leq(lam, dt) if t is own else waiting_prob_gt(lam, dt)
    return out


def _ordered(order: Tuple[EventType, ...], types: Sequence[EventType]):
    chosen = set(types)
    return [t for t in order if t in chosen]


# -- matrix encoders ---------------------------------------------------------

def encode_context(trace: EventTrace, graph: ProvGraph) -> np.ndarray:
    """Encode a trace's causal/contextual information as an (l, d1) matrix."""
    rows = np.zeros((len(trace), D1))
    for i, nid in enumerate(trace.node_ids):
        node = graph.nodes[nid]
        record = node.record
        offset = 0
        rows[i, offset + int(record.event_type)] = 1.0
        offset += N_TYPE_SLOTS
        rows[i, offset + action_bucket(record.action)] = 1.0
        offset += N_ACTION_SLOTS
        if node.parent is not None:
            parent_ts = graph.nodes[node.parent].record.timestamp
            dt = max(record.timestamp - parent_ts, 0) / NS_PER_SEC
            rows[i, offset] = math.log1p(dt)
        offset += 1
        parent_image = ""
        if node.parent is not None:
            parent_image = graph.nodes[node.parent].record.image_path or ""
        rows[i, offset + image_bucket(parent_image)] = 1.0
        offset += N_IMAGE_BUCKETS
        rows[i, offset] = 1.0 if record.principal is Principal.SYSTEM else 0.0
    return rows


def encode_neighborhood(
    trace: EventTrace, graph: ProvGraph, types: Sequence[EventType] = ALL_TYPES
) -> np.ndarray:
    """Encode a trace's neighborhood information as an (l, d2) matrix.

    Each row concatenates the deviation vector D and the waiting-probability
    vector P computed from the event's stored pre-insertion snapshot.
    """
    d2 = d2_for_types(types)
    rows = np.zeros((len(trace), d2))
    half = d2 // 2
    for i, nid in enumerate(trace.node_ids):
        node = graph.nodes[nid]
        now = node.record.timestamp
        rows[i, :half] = deviation_vector(node.snapshot, now, types)
        rows[i, half:] = p_event_vector(node, types=types)
    return rows


def encode_trace(trace, graph, types: Sequence[EventType] = ALL_TYPES):
    return encode_context(trace, graph), encode_neighborhood(trace, graph, types)


# -- encoded dataset files ----------------------------------------------------

LABEL_TO_INT = {"benign": 0, "apt": 1}
INT_TO_LABEL = {v: k for k, v in LABEL_TO_INT.items()}


def encode_dataset(traces, graph, types: Sequence[EventType] = ALL_TYPES):
    """Encode a list of traces into stacked arrays.

    Returns (context (N,l,d1), neighborhood (N,l,d2), labels (N,), trace_ids).
    """
    if not traces:
        raise ValueError("no traces to encode")
    ctx = np.stack([encode_context(t, graph) for t in traces])
    nbr = np.stack([encode_neighborhood(t, graph, types) for t in traces])
    labels = np.array([LABEL_TO_INT[t.label] for t in traces], dtype=np.int64)
    ids = np.array([t.trace_id for t in traces])
    return ctx, nbr, labels, ids


def save_dataset(path, ctx, nbr, labels, ids, types: Sequence[EventType] = ALL_TYPES):
    np.savez(
        path,
        context=ctx,
        neighborhood=nbr,
        labels=labels,
        trace_ids=ids,
        layout_version=np.array(FEATURE_LAYOUT_VERSION),
        l=np.array(ctx.shape[1]),
        d1=np.array(ctx.shape[2]),
        d2=np.array(nbr.shape[2]),
        types=np.array([int(t) for t in types]),
    )


def load_dataset(path):
    data = np.load(path, allow_pickle=False)
    version = int(data["layout_version"])
    if version != FEATURE_LAYOUT_VERSION:
        raise ValueError(f"unsupported feature layout version {version}")
    return {
        "context": data["context"],
        "neighborhood": data["neighborhood"],
        "labels": data["labels"],
        "trace_ids": data["trace_ids"],
        "l": int(data["l"]),
        "d1": int(data["d1"]),
        "d2": int(data["d2"]),
        "types": [EventType(int(t)) for t in data["types"]],
    }
