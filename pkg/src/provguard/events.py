"""Parsing of newline-delimited JSON host telemetry into typed event records.

Wire schema (one JSON object per line, UTF-8):
    required: id, type, action, ts, actor, object
    optional: parent_actor, image, principal, label, pid, ppid, sid

``type`` is one of process/file/flow/shell; anything else is skipped by the
stream parser and counted. ``pid``, ``ppid`` and ``sid`` are ephemeral and are
kept in a side map that downstream encoders never read.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional


class EventType(enum.IntEnum):
    """The four modeled event types. The integer order fixes vector layout."""

    PROCESS = 0
    FILE = 1
    FLOW = 2
    SHELL = 3

    @property
    def wire_name(self) -> str:
        return self.name.lower()


_WIRE_TO_TYPE = {t.wire_name: t for t in EventType}

EPHEMERAL_KEYS = ("pid", "ppid", "sid")


class Principal(enum.Enum):
    SYSTEM = "system"
    USER = "user"


class Label(enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"


class ParseError(Exception):
    """Base class for per-line parse failures."""


class MalformedJson(ParseError):
    pass


class MissingField(ParseError):
    def __init__(self, name: str):
        super().__init__(f"missing required field {name!r}")
        self.name = name


class UnknownEventType(ParseError):
    def __init__(self, wire_type: str):
        super().__init__(f"unknown event type {wire_type!r}")
        self.wire_type = wire_type


@dataclass(frozen=True)
class EventRecord:
    """One parsed telemetry event."""

    id: str
    event_type: EventType
    action: str
    timestamp: int  # nanoseconds since epoch
    actor_id: str
    object_id: str
    parent_actor_id: Optional[str] = None
    image_path: Optional[str] = None
    principal: Principal = Principal.USER
    label: Optional[Label] = None
    ephemeral: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("event id must be non-empty")
        if self.timestamp <= 0:
            raise ValueError("timestamp must be > 0")

    @property
    def is_process_create(self) -> bool:
        return self.event_type is EventType.PROCESS and self.action == "create"

    def to_wire(self) -> dict:
        """Serialize back to the NDJSON schema (inverse of parse_event_line)."""
        out = {
            "id": self.id,
            "type": self.event_type.wire_name,
            "action": self.action,
            "ts": self.timestamp,
            "actor": self.actor_id,
            "object": self.object_id,
        }
        if self.parent_actor_id is not None:
            out["parent_actor"] = self.parent_actor_id
        if self.image_path is not None:
            out["image"] = self.image_path
        out["principal"] = self.principal.value
        if self.label is not None:
            out["label"] = self.label.value
        out.update(self.ephemeral)
        return out


_REQUIRED = ("id", "type", "action", "ts", "actor", "object")


def parse_event_line(line: str) -> EventRecord:
    """Parse a single NDJSON line into an EventRecord.

    Raises MalformedJson, MissingField or UnknownEventType; callers that
    iterate a stream should count these rather than abort.
    """
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise MalformedJson(str(err)) from err
    if not isinstance(obj, dict):
        raise MalformedJson("line is not a JSON object")
    for key in _REQUIRED:
        if key not in obj:
            raise MissingField(key)
    wire_type = str(obj["type"]).lower()
    if wire_type not in _WIRE_TO_TYPE:
        raise UnknownEventType(wire_type)

    principal = Principal(str(obj.get("principal", "user")).lower())
    label = obj.get("label")
    if label is not None:
        label = Label(str(label).lower())
    ephemeral = {k: obj[k] for k in EPHEMERAL_KEYS if k in obj}
    try:
        return EventRecord(
            id=str(obj["id"]),
            event_type=_WIRE_TO_TYPE[wire_type],
            action=str(obj["action"]),
            timestamp=int(obj["ts"]),
            actor_id=str(obj["actor"]),
            object_id=str(obj["object"]),
            parent_actor_id=obj.get("parent_actor"),
            image_path=obj.get("image"),
            principal=principal,
            label=label,
            ephemeral=ephemeral,
        )
    except ValueError as err:
        raise MalformedJson(str(err)) from err


@dataclass
class ParseStats:
    parsed: int = 0
    skipped: int = 0
    skipped_by_reason: dict = field(default_factory=dict)

    def count_skip(self, err: ParseError):
        self.skipped += 1
        reason = type(err).__name__
        self.skipped_by_reason[reason] = self.skipped_by_reason.get(reason, 0) + 1


def parse_stream(source: IO, stats: Optional[ParseStats] = None) -> Iterator[EventRecord]:
    """Yield EventRecords from a line-oriented text or byte stream.

    Per-line failures are counted in ``stats`` and never raised; I/O errors
    propagate. Blank lines are ignored.
    """
    if stats is None:
        stats = ParseStats()
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        if not line.strip():
            continue
        try:
            record = parse_event_line(line)
        except ParseError as err:
            stats.count_skip(err)
            continue
        stats.parsed += 1
        yield record
