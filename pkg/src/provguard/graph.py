"""Provenance DAG with per-neighborhood event statistics.

Internal nodes are process-creation events; the children of a process node
are the events that process emitted, in timestamp order. Each node stores an
immutable snapshot of its parent neighborhood's statistics taken *before* the
node itself was counted, so the snapshot reflects only prior siblings.
"""

from __future__ import annotations

import bisect
import json
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .events import EventRecord, EventType, Label, Principal

NS_PER_SEC = 1_000_000_000

# Flow control noise removed before graph construction.
PRUNED_FLOW_ACTIONS = {"icmp_ping", "tcp_syn", "tcp_syn_ack", "tcp_ack"}
# Inbound mirror of an already-seen outbound flow.
INBOUND_FLOW_ACTION = "recv"

ORPHAN_QUEUE_CAPACITY = 10_000
ORPHAN_TIMEOUT_NS = 60 * NS_PER_SEC


class OrphanEvent(Exception):
    pass


@dataclass(frozen=True)
class NeighborhoodSnapshot:
    """Frozen per-type statistics of a neighborhood at some instant.

    ``counts[t]`` is the number of type-t siblings inserted before the
    snapshot was taken; ``last_ts[t]`` the timestamp of the most recent one
    (None if there was none); ``origin_ts`` the creation time of the owning
    process node.
    """

    origin_ts: int
    counts: Tuple[int, int, int, int]
    last_ts: Tuple[Optional[int], Optional[int], Optional[int], Optional[int]]

    def elapsed_seconds(self, now: int) -> float:
        return max(now - self.origin_ts, 0) / NS_PER_SEC

    def rate(self, etype: EventType, now: int) -> float:
        """Smoothed per-second event rate, (count + 1) / (elapsed + 1).

        The +1 terms keep the rate strictly positive and defined at
        neighborhood birth.
        """
        return (self.counts[etype] + 1.0) / (self.elapsed_seconds(now) + 1.0)

    def waiting_seconds(self, etype: EventType, now: int) -> float:
        """Time since the last same-type sibling, or since the neighborhood
        origin when no such sibling exists."""
        prev = self.last_ts[etype]
        if prev is None:
            prev = self.origin_ts
        return max(now - prev, 0) / NS_PER_SEC

    def to_json(self) -> dict:
        return {
            "origin_ts": self.origin_ts,
            "counts": list(self.counts),
            "last_ts": list(self.last_ts),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NeighborhoodSnapshot":
        return cls(
            origin_ts=obj["origin_ts"],
            counts=tuple(obj["counts"]),
            last_ts=tuple(obj["last_ts"]),
        )


class NeighborhoodStats:
    """Mutable per-type counters for the children of one process node."""

    __slots__ = ("origin_ts", "counts", "last_ts")

    def __init__(self, origin_ts: int):
        self.origin_ts = origin_ts
        self.counts = [0, 0, 0, 0]
        self.last_ts: List[Optional[int]] = [None, None, None, None]

    def observe(self, etype: EventType, ts: int):
        self.counts[etype] += 1
        self.last_ts[etype] = ts

    def snapshot(self) -> NeighborhoodSnapshot:
        return NeighborhoodSnapshot(
            origin_ts=self.origin_ts,
            counts=tuple(self.counts),
            last_ts=tuple(self.last_ts),
        )


@dataclass
class EventNode:
    record: EventRecord
    parent: Optional[str]
    snapshot: NeighborhoodSnapshot


class PruneFilter:
    """Stateful keep/drop filter applied before graph insertion.

    Drops ICMP pings and TCP handshake control messages outright, and inbound
    flow events that mirror an already-seen flow between the same actor and
    endpoint.
    """

    def __init__(self):
        self._seen_flows = set()
        self.dropped = 0

    def keep(self, record: EventRecord) -> bool:
        if record.event_type is EventType.FLOW:
            if record.action in PRUNED_FLOW_ACTIONS:
                self.dropped += 1
                return False
            key = (record.actor_id, record.object_id)
            if record.action == INBOUND_FLOW_ACTION and key in self._seen_flows:
                self.dropped += 1
                return False
            self._seen_flows.add(key)
        return True


class ProvGraph:
    """Single-writer provenance DAG keyed by event id."""

    CHECKPOINT_VERSION = 1

    def __init__(self, retention_depth: int = 8):
        if retention_depth < 1:
            raise ValueError("retention_depth must be >= 1")
        self.retention_depth = retention_depth
        self.nodes: Dict[str, EventNode] = {}
        self.children: Dict[str, List[str]] = {}
        self.process_index: Dict[str, str] = {}
        self._stats: Dict[str, NeighborhoodStats] = {}
        self._orphans: deque = deque()
        self._max_seen_ts = 0
        self.orphans_dropped = 0
        self.inserted = 0

    # -- insertion ---------------------------------------------------------

    def insert_event(self, record: EventRecord) -> Optional[str]:
        """Insert one pruned-in record. Returns the node id, or None when the
        record was parked in (or dropped from) the orphan queue."""
        self._max_seen_ts = max(self._max_seen_ts, record.timestamp)
        node_id = self._try_insert(record)
        if node_id is None:
            self._enqueue_orphan(record)
        else:
            self._flush_orphans()
        return node_id

    def _try_insert(self, record: EventRecord) -> Optional[str]:
        if record.id in self.nodes:
            raise ValueError(f"duplicate event id {record.id!r}")
        parent_id = self.process_index.get(record.actor_id)
        if parent_id is None:
            if record.is_process_create and record.parent_actor_id is None:
                return self._attach(record, None)
            return None
        return self._attach(record, parent_id)

    def _attach(self, record: EventRecord, parent_id: Optional[str]) -> str:
        if parent_id is None:
            # Root process: its neighborhood snapshot is empty by definition.
            snapshot = NeighborhoodStats(record.timestamp).snapshot()
        else:
            stats = self._stats[parent_id]
            snapshot = stats.snapshot()
            stats.observe(record.event_type, record.timestamp)
        node_id = record.id
        self.nodes[node_id] = EventNode(record=record, parent=parent_id, snapshot=snapshot)
        if parent_id is not None:
            siblings = self.children.setdefault(parent_id, [])
            # Stream order is normally timestamp order; orphan flushes may
            # arrive late, so keep the list sorted (stable on ties).
            if siblings and self.nodes[siblings[-1]].record.timestamp > record.timestamp:
                keys = [self.nodes[s].record.timestamp for s in siblings]
                siblings.insert(bisect.bisect_right(keys, record.timestamp), node_id)
            else:
                siblings.append(node_id)
        if record.is_process_create:
            self.process_index[record.object_id] = node_id
            self._stats[node_id] = NeighborhoodStats(record.timestamp)
        self.inserted += 1
        return node_id

    def _enqueue_orphan(self, record: EventRecord):
        if len(self._orphans) >= ORPHAN_QUEUE_CAPACITY:
            self._orphans.popleft()
            self.orphans_dropped += 1
        self._orphans.append(record)

    def _flush_orphans(self):
        progressed = True
        while progressed and self._orphans:
            progressed = False
            remaining: deque = deque()
            while self._orphans:
                record = self._orphans.popleft()
                if record.timestamp < self._max_seen_ts - ORPHAN_TIMEOUT_NS:
                    self.orphans_dropped += 1
                    continue
                if self._try_insert(record) is None:
                    remaining.append(record)
                else:
                    progressed = True
            self._orphans = remaining

    # -- queries -----------------------------------------------------------

    def node(self, node_id: str) -> EventNode:
        return self.nodes[node_id]

    def children_of(self, node_id: str) -> List[str]:
        return self.children.get(node_id, [])

    def internal_node_ids(self) -> List[str]:
        """Ids of process-creation nodes, in insertion-stable sorted order."""
        return sorted(self.process_index.values())

    def ancestors(self, node_id: str, limit: Optional[int] = None) -> List[str]:
        out = []
        cur = self.nodes[node_id].parent
        while cur is not None and (limit is None or len(out) < limit):
            out.append(cur)
            cur = self.nodes[cur].parent
        return out

    # -- eviction ----------------------------------------------------------

    def evict(self, frontier_time: int) -> int:
        """Drop nodes that are both older than ``frontier_time`` and more than
        ``retention_depth`` ancestor steps away from every live node.

        Returns the number of nodes evicted. Live nodes and their nearest
        ``retention_depth`` ancestors are always retained, so walks ending at
        any live leaf keep their context.
        """
        keep = set()
        for node_id, node in self.nodes.items():
            if node.record.timestamp >= frontier_time:
                keep.add(node_id)
                cur = node.parent
                steps = 0
                while cur is not None and steps < self.retention_depth:
                    keep.add(cur)
                    cur = self.nodes[cur].parent
                    steps += 1
        evicted = [nid for nid in self.nodes if nid not in keep]
        for nid in evicted:
            node = self.nodes.pop(nid)
            self.children.pop(nid, None)
            self._stats.pop(nid, None)
            if node.record.is_process_create:
                self.process_index.pop(node.record.object_id, None)
        for nid in keep:
            node = self.nodes[nid]
            if node.parent is not None and node.parent not in self.nodes:
                node.parent = None
            kids = self.children.get(nid)
            if kids:
                self.children[nid] = [k for k in kids if k in self.nodes]
        return len(evicted)

    # -- introspection -----------------------------------------------------

    def memory_bytes(self) -> int:
        """Rough in-memory footprint of the retained graph."""
        total = sys.getsizeof(self.nodes) + sys.getsizeof(self.children)
        for node_id, node in self.nodes.items():
            total += sys.getsizeof(node_id)
            total += sys.getsizeof(node)
            total += sys.getsizeof(node.record)
            total += sys.getsizeof(node.snapshot)
            total += 2 * 8 * (len(node.snapshot.counts) + len(node.snapshot.last_ts))
        for kids in self.children.values():
            total += sys.getsizeof(kids)
        return total

    # -- checkpointing -----------------------------------------------------

    def to_checkpoint(self) -> dict:
        nodes = []
        for node_id in self.nodes:
            node = self.nodes[node_id]
            nodes.append(
                {
                    "record": node.record.to_wire(),
                    "parent": node.parent,
                    "snapshot": node.snapshot.to_json(),
                }
            )
        stats = {
            nid: {"origin_ts": s.origin_ts, "counts": s.counts, "last_ts": s.last_ts}
            for nid, s in self._stats.items()
        }
        return {
            "version": self.CHECKPOINT_VERSION,
            "retention_depth": self.retention_depth,
            "nodes": nodes,
            "children": self.children,
            "process_index": self.process_index,
            "stats": stats,
        }

    @classmethod
    def from_checkpoint(cls, obj: dict) -> "ProvGraph":
        if obj.get("version") != cls.CHECKPOINT_VERSION:
            raise ValueError(f"unsupported graph checkpoint version {obj.get('version')!r}")
        graph = cls(retention_depth=obj["retention_depth"])
        from .events import parse_event_line  # round-trip through the wire schema

        for entry in obj["nodes"]:
            record = parse_event_line(json.dumps(entry["record"]))
            graph.nodes[record.id] = EventNode(
                record=record,
                parent=entry["parent"],
                snapshot=NeighborhoodSnapshot.from_json(entry["snapshot"]),
            )
        graph.children = {k: list(v) for k, v in obj["children"].items()}
        graph.process_index = dict(obj["process_index"])
        for nid, s in obj["stats"].items():
            stats = NeighborhoodStats(s["origin_ts"])
            stats.counts = list(s["counts"])
            stats.last_ts = list(s["last_ts"])
            graph._stats[nid] = stats
        graph.inserted = len(graph.nodes)
        graph._max_seen_ts = max(
            (n.record.timestamp for n in graph.nodes.values()), default=0
        )
        return graph

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "ProvGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh))


def build_graph(records, retention_depth: int = 8,
                evict_interval: Optional[int] = None,
                evict_window_ns: Optional[int] = None):
    """Construct a graph from an iterable of parsed records.

    Applies the prune filter, tracks peak retained memory, and (optionally)
    evicts stale subtrees every ``evict_interval`` insertions using a frontier
    ``evict_window_ns`` behind the newest timestamp.

    Returns (graph, info dict).
    """
    graph = ProvGraph(retention_depth=retention_depth)
    prune = PruneFilter()
    peak_memory = 0
    evicted_total = 0
    seen = 0
    for record in records:
        if not prune.keep(record):
            continue
        graph.insert_event(record)
        seen += 1
        if evict_interval and seen % evict_interval == 0:
            frontier = graph._max_seen_ts - (evict_window_ns or 0)
            evicted_total += graph.evict(frontier)
            peak_memory = max(peak_memory, graph.memory_bytes())
    peak_memory = max(peak_memory, graph.memory_bytes())
    info = {
        "inserted": graph.inserted,
        "pruned": prune.dropped,
        "orphans_dropped": graph.orphans_dropped,
        "orphans_pending": len(graph._orphans),
        "evicted": evicted_total,
        "peak_memory_bytes": peak_memory,
    }
    return graph, info
