"""GVT controller: periodic global-virtual-time rounds and run shutdown.

The controller is a coordination endpoint on the same transport as the LPs;
it hosts no entities.  A round is a two-phase exchange built on Samadi's
marked acknowledgments:

1. GvtRequest (carrying the controller's current GVT) puts every LP in find
   mode and solicits a local-minimum report.
2. Once all L reports are in, GvtClose solicits a second report; LPs keep
   marking acks until the final broadcast.

The new GVT is the minimum over both report waves.  The second wave closes
the window where a message and its marked ack both complete their round
trip between an LP's report and the round's end, which an unordered
transport can otherwise arrange; with it, every in-flight message is pinned
by its sender's unacked ledger or the marked-ack minimum of one wave.

Rounds never overlap.  Both trigger styles are supported: wall-clock period
(the normal mode) and an every-N-ticks trigger, which makes runs
reproducible under the deterministic in-process scheduler.
"""

from __future__ import annotations

import logging
import time
from enum import Enum
from typing import Callable, Iterable, Optional

from .errors import ProtocolError
from .messages import LpSummary, Message, MessageKind

__all__ = ["GvtPhase", "GvtController"]

log = logging.getLogger(__name__)


class GvtPhase(Enum):
    IDLE = "idle"
    COLLECTING = "collecting"
    STOPPING = "stopping"
    DONE = "done"


class GvtController:
    def __init__(self, transport, num_lps: int, end_time: float,
                 period: float = 1.0,
                 every_ticks: Optional[int] = None,
                 expected_nodes: Iterable[str] = (),
                 on_round_close: Optional[Callable[["GvtController"], None]] = None,
                 clock: Callable[[], float] = time.monotonic) -> None:
        if num_lps < 1:
            raise ProtocolError("controller needs at least one LP")
        self.transport = transport
        self.num_lps = num_lps
        self.my_id = num_lps  # controller endpoint sits just above the LPs
        self.end_time = end_time
        self.period = period
        self.every_ticks = every_ticks
        self.on_round_close = on_round_close

        self.phase = GvtPhase.IDLE
        self.reports: dict[int, float] = {}
        self.close_reports: dict[int, float] = {}
        self._close_sent = False
        self.current_gvt = 0.0
        self.gvt_trace: list[float] = []
        self.rounds_completed = 0
        self.summaries: dict[int, LpSummary] = {}

        self.expected_nodes = set(expected_nodes)
        self.registered_nodes: set[str] = set()

        self._clock = clock
        self._last_round_end = clock()
        self._ticks_since_round = 0
        self._seq = 0

    # -- scheduling ------------------------------------------------------

    @property
    def round_active(self) -> bool:
        return self.phase is GvtPhase.COLLECTING

    @property
    def done(self) -> bool:
        return self.phase is GvtPhase.DONE

    def tick(self) -> bool:
        did = self._drain()
        if self.phase is GvtPhase.IDLE and self._nodes_ready() and self._due():
            self.start_round()
            did = True
        return did

    def _nodes_ready(self) -> bool:
        return self.expected_nodes <= self.registered_nodes

    def _due(self) -> bool:
        if self.every_ticks is not None:
            self._ticks_since_round += 1
            return self._ticks_since_round >= self.every_ticks
        return self._clock() - self._last_round_end >= self.period

    # -- round protocol ----------------------------------------------------

    def start_round(self) -> None:
        if self.phase is not GvtPhase.IDLE:
            raise ProtocolError(f"GVT round already active (phase {self.phase})")
        self.phase = GvtPhase.COLLECTING
        self.reports = {}
        self.close_reports = {}
        self._close_sent = False
        self._broadcast(MessageKind.GVT_REQUEST, self.current_gvt)

    def _broadcast(self, kind: MessageKind, value: float) -> None:
        for lp in range(self.num_lps):
            self._seq += 1
            self.transport.send(Message(
                kind, self._seq, self.my_id, lp, float(value), float(value)
            ))

    def _drain(self) -> bool:
        batch = self.transport.receive_batch(self.my_id, 64)
        for m in batch:
            if m.kind is MessageKind.GVT_REPORT:
                self._collect(self.reports, m)
            elif m.kind is MessageKind.GVT_CLOSE_REPORT:
                self._collect(self.close_reports, m)
            elif m.kind is MessageKind.SUMMARY:
                self._on_summary(m)
            elif m.kind is MessageKind.REGISTER:
                self.registered_nodes.add(str(m.payload))
            else:
                raise ProtocolError(f"controller cannot handle {m!r}")
        return bool(batch)

    def _collect(self, into: dict[int, float], m: Message) -> None:
        if self.phase is not GvtPhase.COLLECTING:
            raise ProtocolError(f"{m!r} outside an active round")
        if m.lp_sender in into:
            raise ProtocolError(f"duplicate report {m!r}")
        into[m.lp_sender] = float(m.payload)
        if not self._close_sent and len(self.reports) == self.num_lps:
            self._close_sent = True
            self._broadcast(MessageKind.GVT_CLOSE, self.current_gvt)
        if self._close_sent and len(self.close_reports) == self.num_lps:
            self._finish_round()

    def _finish_round(self) -> None:
        new_gvt = min(min(self.reports.values()), min(self.close_reports.values()))
        if new_gvt < self.current_gvt:
            raise ProtocolError(
                f"GVT regression {self.current_gvt!r} -> {new_gvt!r} "
                f"(reports {self.reports}, close {self.close_reports})"
            )
        self.current_gvt = new_gvt
        self.gvt_trace.append(new_gvt)
        self.rounds_completed += 1
        if self.on_round_close is not None:
            self.on_round_close(self)
        if new_gvt >= self.end_time:
            self.phase = GvtPhase.STOPPING
            self._broadcast(MessageKind.STOP, new_gvt)
        else:
            self._broadcast(MessageKind.GVT_BROADCAST, new_gvt)
            self.phase = GvtPhase.IDLE
            self._last_round_end = self._clock()
            self._ticks_since_round = 0

    def _on_summary(self, m: Message) -> None:
        if self.phase is not GvtPhase.STOPPING:
            raise ProtocolError(f"{m!r} before stop broadcast")
        s = m.payload
        if s.lp in self.summaries:
            raise ProtocolError(f"duplicate summary from LP {s.lp}")
        self.summaries[s.lp] = s
        if len(self.summaries) == self.num_lps:
            self.phase = GvtPhase.DONE
