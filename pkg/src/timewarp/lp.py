"""The Time Warp logical process.

Each LP is a single-threaded reactor that owns its state exclusively and
talks to the world only through the transport.  One ``tick`` drains a
bounded batch of transport messages, then speculatively executes queued
events in timestamp order.  Execution never blocks on other LPs: arriving
stragglers and antimessages trigger rollback to repair causality after the
fact.

Rollback correctness hinges on three ledgers kept in lockstep with the
inbox: ``history`` (pre-execution state snapshot per executed event, in
nondecreasing timestamp order), ``proc_messages`` (what each execution
emitted, so it can be unsent), and ``to_ack_messages`` (sent but
unacknowledged messages, which is what makes in-flight traffic visible to
the GVT computation).
"""

from __future__ import annotations

import bisect
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from operator import attrgetter
from typing import Any, Optional

from .errors import ModelError, ProtocolError
from .event_queue import EventQueue
from .messages import (
    LpSummary,
    Message,
    MessageKind,
    make_ack,
    make_antimessage,
)
from .model import ModelCallbacks

__all__ = ["LpStatus", "LogicalProcess"]

log = logging.getLogger(__name__)

_BY_TS = attrgetter("timestamp")


class LpStatus(Enum):
    RUNNING = "running"
    TERMINATING = "terminating"


@dataclass
class HistoryEntry:
    """One processed event: its timestamp, the model state snapshot taken
    immediately before execution, and the message itself."""

    timestamp: float
    state: Any
    msg: Message


class LogicalProcess:
    """One Time Warp LP bound to a transport endpoint.

    ``end_time`` only clips the committed trace; it does not stop
    speculation.  The LP keeps executing until the controller's Stop
    message arrives (GVT has passed ``end_time``).
    """

    def __init__(self, my_id: int, model: ModelCallbacks, transport,
                 controller: int, end_time: float,
                 max_received_messages: int = 64,
                 optimism_window: Optional[float] = None) -> None:
        self.my_id = my_id
        self.model = model
        self.transport = transport
        self.controller = controller
        self.end_time = end_time
        self.max_received_messages = max_received_messages
        # Optimism throttle: when set, events with timestamps beyond
        # gvt + optimism_window wait until GVT catches up.  Purely a
        # scheduling policy — rollback and GVT are unaffected — but it
        # stops runaway speculation from flooding queues on large runs.
        self.optimism_window = optimism_window

        self.inbox_messages = EventQueue()
        self.received_messages: deque[Message] = deque()
        self.proc_messages: dict[tuple[int, int], list[Message]] = {}
        self.to_ack_messages: list[Message] = []  # sorted by timestamp
        self.history: list[HistoryEntry] = []  # sorted by timestamp
        self.anti_messages: dict[tuple[int, int], Message] = {}
        self.current_event: Optional[Message] = None
        self.model_state = model.init(my_id)
        self.timestamp = 0.0  # LVT
        self.gvt = 0.0
        self.rollbacks = 0
        self.samadi_find_mode = False
        self.samadi_marked_messages_min: Optional[float] = None
        self.message_seq_number = 0
        self.status = LpStatus.RUNNING

        # Fossil base: newest below-GVT entry, kept out of history so the
        # "history entries >= gvt" invariant stays simple.
        self.restoration_base: Optional[HistoryEntry] = None

        self.events_processed = 0
        self.peak_history = 0
        self.sent_local = 0
        self.sent_remote = 0
        self.antis_sent = 0
        self.sent_to: dict[int, int] = {}
        self.received_from: dict[int, int] = {}
        self.committed: list[tuple] = []  # (ts, *digest) below end_time
        self.summary: Optional[LpSummary] = None

        self._hist_ids: set[tuple[int, int]] = set()

    # -- reactor entry point --------------------------------------------

    def tick(self, max_steps: int = 8) -> bool:
        """One scheduling turn: drain, then up to ``max_steps`` executions.
        Returns True if any message was consumed or event executed."""
        if self.status is not LpStatus.RUNNING:
            # late traffic (acks, post-stop speculation) is dropped
            self.transport.receive_batch(self.my_id, self.max_received_messages)
            return False
        did = self.drain_transport()
        steps = 0
        while steps < max_steps and self.status is LpStatus.RUNNING:
            if self.optimism_window is not None:
                nxt = self.inbox_messages.min_timestamp()
                if nxt is None or nxt > self.gvt + self.optimism_window:
                    break
            if not self.step():
                break
            steps += 1
        return did or steps > 0

    # -- intake ----------------------------------------------------------

    def drain_transport(self) -> bool:
        batch = self.transport.receive_batch(self.my_id, self.max_received_messages)
        if not batch:
            return False
        self.received_messages.extend(batch)
        while self.received_messages:
            m = self.received_messages.popleft()
            kind = m.kind
            if kind is MessageKind.EVENT:
                self._receive_event(m)
            elif kind is MessageKind.ANTIMESSAGE:
                self._send_ack(m)
                self.handle_antimessage(m)
            elif kind is MessageKind.ACK or kind is MessageKind.MARKED_ACK:
                self._receive_ack(m)
            elif kind is MessageKind.GVT_REQUEST:
                self._on_gvt_request(m)
            elif kind is MessageKind.GVT_CLOSE:
                self._on_gvt_close(m)
            elif kind is MessageKind.GVT_BROADCAST:
                self._on_gvt_broadcast(m)
            elif kind is MessageKind.STOP:
                self._on_stop(m)
                break
            else:
                raise ProtocolError(f"LP {self.my_id} cannot handle {m!r}")
        return True

    def _receive_event(self, m: Message) -> None:
        self._send_ack(m)
        self.received_from[m.lp_sender] = self.received_from.get(m.lp_sender, 0) + 1
        if self.anti_messages.pop(m.identity, None) is not None:
            return  # annihilated against a buffered antimessage
        if m.identity in self.inbox_messages:
            raise ProtocolError(f"duplicate delivery of {m!r}")
        self.inbox_messages.insert(m)

    def _send_ack(self, m: Message) -> None:
        self.transport.send(make_ack(m, self.my_id, marked=self.samadi_find_mode))

    def _receive_ack(self, m: Message) -> None:
        if m.kind is MessageKind.MARKED_ACK:
            cur = self.samadi_marked_messages_min
            if cur is None or m.timestamp < cur:
                self.samadi_marked_messages_min = m.timestamp
        if self._remove_to_ack(m):
            return
        if m.timestamp < self.gvt:
            return  # ledger entry was fossil-collected; ack is moot
        raise ProtocolError(f"LP {self.my_id}: unmatched ack {m!r}")

    def _remove_to_ack(self, ack: Message) -> bool:
        # an ack names the acked message by (receiver-of-ack, seq): the
        # original sender is us
        acked = (ack.lp_receiver, ack.seq_number)
        lst = self.to_ack_messages
        i = bisect.bisect_left(lst, ack.timestamp, key=_BY_TS)
        while i < len(lst) and lst[i].timestamp == ack.timestamp:
            if lst[i].identity == acked:
                del lst[i]
                return True
            i += 1
        return False

    # -- speculative execution --------------------------------------------

    def step(self) -> bool:
        """Pop and execute the minimum-timestamp event, rolling back first
        if it is a straggler.  Returns False when the inbox is empty."""
        if not self.inbox_messages:
            return False
        msg = self.inbox_messages.pop_min_deterministic()
        if msg.timestamp < self.gvt:
            raise ProtocolError(
                f"LP {self.my_id}: event {msg!r} below GVT {self.gvt!r}"
            )
        if msg.timestamp < self.timestamp:
            self.rollback(msg.timestamp)
            # Re-enqueue: rollback may have re-inserted equal-timestamp
            # events that order before this one deterministically.
            self.inbox_messages.insert(msg)
            return True
        self._execute(msg)
        return True

    def _execute(self, msg: Message) -> None:
        self.current_event = msg
        snapshot = self.model.copy_state(self.model_state)
        emissions: list[tuple[int, Any, float]] = []

        def emit(entity: int, payload: Any, ts: float) -> None:
            emissions.append((entity, payload, ts))

        self.model_state = self.model.handle_event(
            self.model_state, msg.payload, msg.timestamp, emit
        )
        self.history.append(HistoryEntry(msg.timestamp, snapshot, msg))
        self._hist_ids.add(msg.identity)
        outs = []
        for entity, payload, ts in emissions:
            if not ts > msg.timestamp:
                raise ModelError(
                    f"emission at {ts!r} not after current event {msg.timestamp!r}"
                )
            dest = self.model.entity_map.route(entity)
            self.message_seq_number += 1
            outs.append(Message(
                MessageKind.EVENT, self.message_seq_number, self.my_id,
                dest, ts, payload,
            ))
        for out in outs:
            self._send_event(out)
        self.proc_messages[msg.identity] = outs
        self.timestamp = msg.timestamp
        self.events_processed += 1
        if len(self.history) > self.peak_history:
            self.peak_history = len(self.history)
        self.current_event = None

    def _send_event(self, out: Message) -> None:
        if out.lp_receiver == self.my_id:
            self.inbox_messages.insert(out)  # no ack ledger for self-sends
            self.sent_local += 1
        else:
            bisect.insort(self.to_ack_messages, out, key=_BY_TS)
            self.transport.send(out)
            self.sent_remote += 1
            self.sent_to[out.lp_receiver] = self.sent_to.get(out.lp_receiver, 0) + 1

    # -- rollback ----------------------------------------------------------

    def rollback(self, t: float) -> None:
        """Undo every processed event with timestamp >= t: restore the
        earliest undone snapshot, unsend emissions via antimessages, and
        re-enqueue the undone input events for in-order re-execution."""
        if t < self.gvt:
            raise ProtocolError(
                f"LP {self.my_id}: rollback to {t!r} below GVT {self.gvt!r}"
            )
        idx = bisect.bisect_left(self.history, t, key=_BY_TS)
        undone = self.history[idx:]
        if not undone:
            return
        del self.history[idx:]
        self.model_state = undone[0].state
        self_antis = []
        for entry in undone:
            self._hist_ids.discard(entry.msg.identity)
            for out in self.proc_messages.pop(entry.msg.identity, ()):
                anti = make_antimessage(out)
                if anti.lp_receiver == self.my_id:
                    self_antis.append(anti)
                else:
                    bisect.insort(self.to_ack_messages, anti, key=_BY_TS)
                    self.transport.send(anti)
                    self.antis_sent += 1
            self.inbox_messages.insert(entry.msg)
        for anti in self_antis:
            # A self-sent event never crosses the transport, so its victim
            # is guaranteed local: still queued, or re-inserted just above.
            if not self.inbox_messages.remove_matching(anti):
                raise ProtocolError(
                    f"LP {self.my_id}: local annihilation missed {anti!r}"
                )
        self.timestamp = self.history[-1].timestamp if self.history else 0.0
        self.rollbacks += 1

    def handle_antimessage(self, anti: Message) -> None:
        if anti.identity in self.inbox_messages:
            self.inbox_messages.remove_matching(anti)
            return
        if anti.identity in self._hist_ids:
            self.rollback(anti.timestamp)
            if not self.inbox_messages.remove_matching(anti):
                raise ProtocolError(
                    f"LP {self.my_id}: victim of {anti!r} lost in rollback"
                )
            return
        if anti.identity in self.anti_messages:
            raise ProtocolError(f"duplicate antimessage {anti!r}")
        self.anti_messages[anti.identity] = anti  # event not seen yet

    # -- GVT protocol ------------------------------------------------------

    def local_min_report(self) -> float:
        """Four-way local minimum: LVT, queued events, unacked sends, and
        marked-ack timestamps.  Floored at the last known GVT: rollback can
        legally park the LVT below GVT (all history at GVT collected), and
        an unfloored report would look like GVT regression upstream."""
        candidates = [self.timestamp]
        ts = self.inbox_messages.min_timestamp()
        if ts is not None:
            candidates.append(ts)
        if self.to_ack_messages:
            candidates.append(self.to_ack_messages[0].timestamp)
        if self.samadi_marked_messages_min is not None:
            candidates.append(self.samadi_marked_messages_min)
        return max(min(candidates), self.gvt)

    def _control(self, kind: MessageKind, value: float) -> Message:
        self.message_seq_number += 1
        return Message(kind, self.message_seq_number, self.my_id,
                       self.controller, float(value), float(value))

    def _advance_gvt(self, value: Optional[float]) -> None:
        # Control messages can arrive out of order; only ever move forward.
        if value is not None and value > self.gvt:
            self.fossil_collect(value)

    def _on_gvt_request(self, m: Message) -> None:
        self._advance_gvt(m.payload)
        self.samadi_find_mode = True
        self.transport.send(self._control(MessageKind.GVT_REPORT,
                                          self.local_min_report()))
        self.samadi_marked_messages_min = None

    def _on_gvt_close(self, m: Message) -> None:
        self._advance_gvt(m.payload)
        self.transport.send(self._control(MessageKind.GVT_CLOSE_REPORT,
                                          self.local_min_report()))
        self.samadi_marked_messages_min = None
        # find mode stays on until the broadcast: acks sent between the
        # close report and the round's end must still be marked, or their
        # messages could escape both this round's ledgers.

    def _on_gvt_broadcast(self, m: Message) -> None:
        self._advance_gvt(m.payload)
        self.samadi_find_mode = False

    # -- fossil collection and shutdown -------------------------------------

    def _commit(self, entry: HistoryEntry) -> None:
        if entry.timestamp < self.end_time:
            digest = self.model.trace_digest(entry.msg.payload)
            if digest is not None:
                self.committed.append((entry.timestamp, *digest))

    def fossil_collect(self, new_gvt: float) -> None:
        """Advance GVT and release everything strictly older: history
        snapshots (committing their trace digests), emission records, and
        unacked-ledger entries whose acks can no longer matter."""
        if new_gvt < self.gvt:
            raise ProtocolError(
                f"LP {self.my_id}: GVT regression {self.gvt!r} -> {new_gvt!r}"
            )
        self.gvt = new_gvt
        idx = bisect.bisect_left(self.history, new_gvt, key=_BY_TS)
        if idx > 0:
            dropped = self.history[:idx]
            del self.history[:idx]
            for entry in dropped:
                self._commit(entry)
                self._hist_ids.discard(entry.msg.identity)
                self.proc_messages.pop(entry.msg.identity, None)
            if not (self.history and self.history[0].timestamp == new_gvt):
                # keep the newest pre-GVT snapshot so a rollback to exactly
                # GVT stays restorable
                self.restoration_base = dropped[-1]
        cut = bisect.bisect_left(self.to_ack_messages, new_gvt, key=_BY_TS)
        if cut > 0:
            del self.to_ack_messages[:cut]

    def _on_stop(self, m: Message) -> None:
        if m.payload is not None and m.payload > self.gvt:
            self.gvt = m.payload
        for entry in self.history:
            self._commit(entry)
        self.history.clear()
        self._hist_ids.clear()
        self.proc_messages.clear()
        self.restoration_base = None
        model_summary = self.model.terminate(self.model_state)
        self.summary = LpSummary(
            lp=self.my_id,
            rollbacks=self.rollbacks,
            events_processed=self.events_processed,
            peak_history=self.peak_history,
            sent_local=self.sent_local,
            sent_remote=self.sent_remote,
            trace=tuple(sorted(self.committed)),
            sent_to=dict(self.sent_to),
            received_from=dict(self.received_from),
            model_summary=model_summary,
        )
        self.message_seq_number += 1
        self.transport.send(Message(
            MessageKind.SUMMARY, self.message_seq_number, self.my_id,
            self.controller, self.timestamp, self.summary,
        ))
        self.status = LpStatus.TERMINATING
