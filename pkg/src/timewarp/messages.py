"""Message envelope, antimessage pairing and the canonical wire encoding.

Every interaction between logical processes (and the GVT controller) is a
``Message``.  Events and antimessages carry a model payload; acks reference
the message they acknowledge; control messages (kind tags >= 16) drive the
GVT protocol and run lifecycle over the same encoding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

__all__ = [
    "ENVIRONMENT_LP",
    "MessageKind",
    "Message",
    "LpSummary",
    "make_antimessage",
    "make_ack",
    "annihilates",
    "encode_message",
    "decode_message",
]

# Sender id reserved for events injected at startup; never appears on the wire.
ENVIRONMENT_LP = 0xFFFFFFFF


class MessageKind(IntEnum):
    """Message type tag.  Values < 16 are simulation data, >= 16 control."""

    EVENT = 0
    ACK = 1
    MARKED_ACK = 2
    ANTIMESSAGE = 3
    # Control plane (reserved tags, same wire encoding).
    GVT_REQUEST = 16
    GVT_REPORT = 17
    GVT_CLOSE = 18
    GVT_CLOSE_REPORT = 19
    GVT_BROADCAST = 20
    STOP = 21
    SUMMARY = 22
    REGISTER = 23


@dataclass(frozen=True, slots=True)
class Message:
    """Immutable timestamped envelope.

    ``(lp_sender, seq_number)`` uniquely identifies an event for its whole
    lifetime; the matching antimessage carries the identical pair, and acks
    reference the pair of the message they acknowledge.
    """

    kind: MessageKind
    seq_number: int
    lp_sender: int
    lp_receiver: int
    timestamp: float
    payload: Any = None

    @property
    def identity(self) -> tuple[int, int]:
        return (self.lp_sender, self.seq_number)

    def __repr__(self) -> str:  # compact, for logs and assertion output
        return (
            f"Message({self.kind.name}, seq={self.seq_number}, "
            f"{self.lp_sender}->{self.lp_receiver}, ts={self.timestamp!r})"
        )


def make_antimessage(m: Message) -> Message:
    """Negative copy of an event: same identity, timestamp and payload.

    The payload is kept for debuggability; annihilation matching ignores it.
    """
    if m.kind is not MessageKind.EVENT:
        raise ValueError(f"can only negate events, got {m.kind.name}")
    return Message(MessageKind.ANTIMESSAGE, m.seq_number, m.lp_sender,
                   m.lp_receiver, m.timestamp, m.payload)


def make_ack(m: Message, me: int, marked: bool) -> Message:
    """Acknowledgement for a received event/antimessage.

    Echoes the acknowledged message's identity and timestamp so the sender
    can clear its unacked ledger and the GVT accounting stays exact.
    """
    kind = MessageKind.MARKED_ACK if marked else MessageKind.ACK
    return Message(kind, m.seq_number, me, m.lp_sender, m.timestamp)


def annihilates(a: Message, b: Message) -> bool:
    """True iff one is an event, the other an antimessage, same identity."""
    if {a.kind, b.kind} != {MessageKind.EVENT, MessageKind.ANTIMESSAGE}:
        return False
    return a.lp_sender == b.lp_sender and a.seq_number == b.seq_number


# --------------------------------------------------------------------------
# Canonical binary encoding (used by the TCP transport).
#
# Fixed little-endian header {kind:u8, seq:u64, sender:u32, receiver:u32,
# timestamp:f64, payload_len:u32} followed by payload bytes.  Bit-exact
# across hosts: timestamps travel as raw IEEE-754 doubles.
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<BQIIdI")
HEADER_SIZE = _HEADER.size

_F64 = struct.Struct("<d")
_TRACE_ENTRY = struct.Struct("<dIIq")
_SUMMARY_HEAD = struct.Struct("<IQQQQQ")
_COUNT = struct.Struct("<I")
_PAIR = struct.Struct("<IQ")

_FLOAT_PAYLOAD_KINDS = frozenset(
    {
        MessageKind.GVT_REQUEST,
        MessageKind.GVT_REPORT,
        MessageKind.GVT_CLOSE,
        MessageKind.GVT_CLOSE_REPORT,
        MessageKind.GVT_BROADCAST,
        MessageKind.STOP,
    }
)


@dataclass(frozen=True)
class LpSummary:
    """Per-LP termination report collected by the controller."""

    lp: int
    rollbacks: int
    events_processed: int
    peak_history: int
    sent_local: int
    sent_remote: int
    # committed executions: (timestamp, entity, entity_sender, value)
    trace: tuple[tuple[float, int, int, int], ...] = ()
    sent_to: dict[int, int] = field(default_factory=dict)
    received_from: dict[int, int] = field(default_factory=dict)
    model_summary: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LpSummary):
            return NotImplemented
        return self._key() == other._key()

    def _key(self):
        return (
            self.lp,
            self.rollbacks,
            self.events_processed,
            self.peak_history,
            self.sent_local,
            self.sent_remote,
            self.trace,
            sorted(self.sent_to.items()),
            sorted(self.received_from.items()),
            json.dumps(self.model_summary, sort_keys=True),
        )


def _pack_counter(counts: dict[int, int]) -> bytes:
    parts = [_COUNT.pack(len(counts))]
    for key in sorted(counts):
        parts.append(_PAIR.pack(key, counts[key]))
    return b"".join(parts)


def _unpack_counter(data: bytes, off: int) -> tuple[dict[int, int], int]:
    (n,) = _COUNT.unpack_from(data, off)
    off += _COUNT.size
    counts = {}
    for _ in range(n):
        key, val = _PAIR.unpack_from(data, off)
        off += _PAIR.size
        counts[key] = val
    return counts, off


def pack_summary(s: LpSummary) -> bytes:
    parts = [
        _SUMMARY_HEAD.pack(
            s.lp,
            s.rollbacks,
            s.events_processed,
            s.peak_history,
            s.sent_local,
            s.sent_remote,
        ),
        _COUNT.pack(len(s.trace)),
    ]
    for ts, entity, sender, value in s.trace:
        parts.append(_TRACE_ENTRY.pack(ts, entity, sender, value))
    parts.append(_pack_counter(s.sent_to))
    parts.append(_pack_counter(s.received_from))
    blob = json.dumps(s.model_summary, sort_keys=True).encode("utf-8")
    parts.append(_COUNT.pack(len(blob)))
    parts.append(blob)
    return b"".join(parts)


def unpack_summary(data: bytes) -> LpSummary:
    lp, rollbacks, processed, peak, local, remote = _SUMMARY_HEAD.unpack_from(data, 0)
    off = _SUMMARY_HEAD.size
    (n,) = _COUNT.unpack_from(data, off)
    off += _COUNT.size
    trace = []
    for _ in range(n):
        ts, entity, sender, value = _TRACE_ENTRY.unpack_from(data, off)
        off += _TRACE_ENTRY.size
        trace.append((ts, entity, sender, value))
    sent_to, off = _unpack_counter(data, off)
    received_from, off = _unpack_counter(data, off)
    (blob_len,) = _COUNT.unpack_from(data, off)
    off += _COUNT.size
    model_summary = json.loads(data[off : off + blob_len].decode("utf-8"))
    return LpSummary(
        lp=lp,
        rollbacks=rollbacks,
        events_processed=processed,
        peak_history=peak,
        sent_local=local,
        sent_remote=remote,
        trace=tuple(trace),
        sent_to=sent_to,
        received_from=received_from,
        model_summary=model_summary,
    )


def _encode_control_payload(kind: MessageKind, payload: Any) -> bytes:
    if payload is None:
        return b""
    if kind in _FLOAT_PAYLOAD_KINDS:
        return _F64.pack(payload)
    if kind is MessageKind.SUMMARY:
        return pack_summary(payload)
    if kind is MessageKind.REGISTER:
        return str(payload).encode("utf-8")
    raise ValueError(f"{kind.name} carries no payload, got {payload!r}")


def _decode_control_payload(kind: MessageKind, data: bytes) -> Any:
    if not data:
        return None
    if kind in _FLOAT_PAYLOAD_KINDS:
        return _F64.unpack(data)[0]
    if kind is MessageKind.SUMMARY:
        return unpack_summary(data)
    if kind is MessageKind.REGISTER:
        return data.decode("utf-8")
    raise ValueError(f"unexpected payload bytes for {kind.name}")


def encode_message(m: Message, payload_codec=None) -> bytes:
    """Serialize to the canonical encoding.

    ``payload_codec`` (the model's codec, with ``encode_payload`` /
    ``decode_payload``) is consulted only for events and antimessages.
    """
    if m.kind in (MessageKind.EVENT, MessageKind.ANTIMESSAGE):
        if payload_codec is None:
            raise ValueError("events need a payload codec for the wire")
        body = payload_codec.encode_payload(m.payload)
    else:
        body = _encode_control_payload(m.kind, m.payload)
    header = _HEADER.pack(
        int(m.kind), m.seq_number, m.lp_sender, m.lp_receiver, m.timestamp, len(body)
    )
    return header + body


def decode_message(data: bytes, payload_codec=None) -> Message:
    """Inverse of :func:`encode_message`; exact round-trip for all kinds."""
    kind_val, seq, sender, receiver, ts, body_len = _HEADER.unpack_from(data, 0)
    kind = MessageKind(kind_val)
    body = data[HEADER_SIZE : HEADER_SIZE + body_len]
    if len(body) != body_len:
        raise ValueError("truncated message body")
    if kind in (MessageKind.EVENT, MessageKind.ANTIMESSAGE):
        if payload_codec is None:
            raise ValueError("events need a payload codec for the wire")
        payload = payload_codec.decode_payload(body)
    else:
        payload = _decode_control_payload(kind, body)
    return Message(kind, seq, sender, receiver, ts, payload)
