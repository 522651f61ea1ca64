"""Logical process mechanics, unit-level: straggler rollback, antimessage
handling, fossil collection, ack bookkeeping, and commit clipping.  Uses a
scripted deterministic model so every scenario is a hand-checkable trace."""

import pytest

from timewarp.errors import ProtocolError
from timewarp.lp import LogicalProcess, LpStatus
from timewarp.messages import Message, MessageKind, make_antimessage
from timewarp.model import EntityMap, ModelCallbacks
from timewarp.transport import InProcTransport


class ScriptModel(ModelCallbacks):
    """Payloads are string tags.  Handling an event appends (timestamp, tag)
    to the state's log and emits whatever the script lists for that tag as
    (entity, emitted_tag, absolute_timestamp) triples."""

    def __init__(self, num_lps, script=None):
        # one entity per LP: entity i lives on LP i
        self.entity_map = EntityMap(num_lps, num_lps)
        self.script = dict(script or {})
        self._ids = {}

    def init(self, lp):
        return {"applied": []}

    def handle_event(self, state, payload, timestamp, emit):
        state["applied"].append((timestamp, payload))
        for entity, tag, ts in self.script.get(payload, ()):
            emit(entity, tag, ts)
        return state

    def copy_state(self, state):
        return {"applied": list(state["applied"])}

    def trace_digest(self, payload):
        # stable small integers per tag so commits are comparable
        ident = self._ids.setdefault(payload, len(self._ids))
        return (0, 0, ident)


def make_lp(num_lps=2, my_id=0, end_time=100.0, script=None):
    endpoints = list(range(num_lps)) + [num_lps]  # LPs plus controller
    transport = InProcTransport(endpoints)
    model = ScriptModel(num_lps, script)
    lp = LogicalProcess(my_id, model, transport, controller=num_lps,
                        end_time=end_time)
    return lp, transport


def feed(lp, transport, ts, tag, sender=1, seq=None):
    """Deliver one event to the LP as if a peer had sent it."""
    if seq is None:
        feed.counter += 1
        seq = feed.counter
    transport.send(Message(MessageKind.EVENT, seq, sender, lp.my_id, ts, tag))
    return seq


feed.counter = 1000


def sent_to(transport, endpoint, kind=None):
    out = [m for e, m in transport.pending_messages() if e == endpoint]
    if kind is not None:
        out = [m for m in out if m.kind is kind]
    return out


# -- plain execution ---------------------------------------------------------


def test_execute_advances_lvt_and_history():
    lp, tr = make_lp()
    feed(lp, tr, 5.0, "a")
    assert lp.tick(10)
    assert lp.timestamp == 5.0
    assert [h.timestamp for h in lp.history] == [5.0]
    assert lp.model_state["applied"] == [(5.0, "a")]
    assert lp.events_processed == 1
    assert lp.rollbacks == 0
    # every received event is acknowledged to its sender
    acks = sent_to(tr, 1, MessageKind.ACK)
    assert len(acks) == 1 and acks[0].timestamp == 5.0


def test_equal_timestamp_is_not_a_straggler():
    lp, tr = make_lp()
    feed(lp, tr, 5.0, "a")
    lp.tick(10)
    feed(lp, tr, 5.0, "b")  # == LVT: strict < rule says process normally
    lp.tick(10)
    assert lp.rollbacks == 0
    assert lp.model_state["applied"] == [(5.0, "a"), (5.0, "b")]


def test_idle_step_is_a_noop():
    lp, _ = make_lp()
    assert not lp.step()
    assert lp.timestamp == 0.0 and lp.history == []


def test_emissions_are_routed_sent_and_ledgered():
    lp, tr = make_lp(script={"a": [(1, "x", 7.0), (0, "y", 6.0)]})
    feed(lp, tr, 4.0, "a")
    lp.tick(10)
    # remote emission to LP 1 is on the wire and awaiting its ack
    events = sent_to(tr, 1, MessageKind.EVENT)
    assert [(m.timestamp, m.payload) for m in events] == [(7.0, "x")]
    assert [m.timestamp for m in lp.to_ack_messages] == [7.0]
    assert lp.sent_remote == 1
    # the self-send skipped the transport and executed locally
    assert lp.sent_local == 1
    assert (6.0, "y") in lp.model_state["applied"]


# -- straggler rollback ------------------------------------------------------


def _history_abc(script=None):
    """The worked example: three processed events at ts 0, 4, 9."""
    lp, tr = make_lp(script=script)
    seqs = {}
    for ts, tag in [(0.0, "a"), (4.0, "b"), (9.0, "c")]:
        seqs[tag] = feed(lp, tr, ts, tag)
        lp.tick(10)
    assert lp.timestamp == 9.0
    assert [h.timestamp for h in lp.history] == [0.0, 4.0, 9.0]
    return lp, tr, seqs


def test_straggler_rolls_back_to_pre_straggler_state():
    lp, tr, _ = _history_abc(script={"c": [(1, "c-out", 11.0)]})
    assert lp.to_ack_messages  # c's emission is unacked

    feed(lp, tr, 5.0, "s")
    lp.drain_transport()
    assert lp.step()  # pops the straggler, rolls back, re-enqueues it

    # entries with ts >= 5 (just c) are undone; LVT returns to 4
    assert lp.rollbacks == 1
    assert lp.timestamp == 4.0
    assert [h.timestamp for h in lp.history] == [0.0, 4.0]
    assert lp.model_state["applied"] == [(0.0, "a"), (4.0, "b")]
    # c's emission was unsent via an antimessage with the same identity
    antis = sent_to(tr, 1, MessageKind.ANTIMESSAGE)
    assert [(m.timestamp, m.payload) for m in antis] == [(11.0, "c-out")]
    # both the straggler and c wait in the inbox for in-order re-execution
    assert sorted(m.timestamp for m in lp.inbox_messages) == [5.0, 9.0]

    lp.tick(10)
    assert lp.model_state["applied"] == [(0.0, "a"), (4.0, "b"), (5.0, "s"),
                                         (9.0, "c")]
    assert lp.timestamp == 9.0
    assert lp.rollbacks == 1  # one straggler, one rollback episode


def test_straggler_equal_to_processed_timestamp_undoes_ties():
    lp, tr, _ = _history_abc()
    feed(lp, tr, 4.0, "s", sender=1, seq=2000)
    lp.drain_transport()
    lp.step()
    # the >= rule undoes b and c, not just c
    assert [h.timestamp for h in lp.history] == [0.0]
    assert lp.timestamp == 0.0
    assert lp.rollbacks == 1
    lp.tick(10)
    # ties replay in (sender, seq) order: b was fed before s, lower seq
    applied = lp.model_state["applied"]
    assert applied[0] == (0.0, "a")
    assert {applied[1], applied[2]} == {(4.0, "b"), (4.0, "s")}
    assert applied[1] == (4.0, "b")
    assert applied[3] == (9.0, "c")


def test_rollback_of_k_events_restores_initial_state():
    lp, tr = make_lp()
    for ts in (1.0, 2.0, 3.0, 4.0, 5.0):
        feed(lp, tr, ts, f"e{ts}")
    lp.tick(10)
    assert len(lp.history) == 5
    lp.rollback(0.5)  # everything goes
    assert lp.model_state == {"applied": []}
    assert lp.history == []
    assert lp.timestamp == 0.0
    assert len(lp.inbox_messages) == 5  # all undone events await re-execution


def test_rollback_below_gvt_is_fatal():
    lp, tr, _ = _history_abc()
    lp.fossil_collect(4.0)
    with pytest.raises(ProtocolError):
        lp.rollback(2.0)


def test_rollback_sends_antis_for_every_undone_emission():
    script = {"b": [(1, "b-out", 6.0)], "c": [(1, "c-out", 12.0)]}
    lp, tr, _ = _history_abc(script=script)
    feed(lp, tr, 2.0, "s")
    lp.drain_transport()
    lp.step()
    antis = sent_to(tr, 1, MessageKind.ANTIMESSAGE)
    assert sorted(m.payload for m in antis) == ["b-out", "c-out"]
    # the unsent emissions no longer await acks, the antimessages do
    assert sorted(m.payload for m in lp.to_ack_messages) == [
        "b-out", "b-out", "c-out", "c-out"]


def test_self_emission_rollback_annihilates_locally():
    # event a at ts 2 emits to the LP's own entity at ts 8; a straggler at
    # ts 1 undoes a, and the local emission must vanish without any wire
    # traffic
    lp, tr = make_lp(script={"a": [(0, "a-out", 8.0)]})
    feed(lp, tr, 2.0, "a")
    lp.tick(1)  # execute a only; a-out sits in the inbox
    assert sorted(m.timestamp for m in lp.inbox_messages) == [8.0]
    feed(lp, tr, 1.0, "s")
    lp.drain_transport()
    lp.step()
    assert lp.rollbacks == 1
    assert sent_to(tr, 1, MessageKind.ANTIMESSAGE) == []
    # inbox holds the straggler and a, but a-out is gone
    assert sorted(m.timestamp for m in lp.inbox_messages) == [1.0, 2.0]
    lp.tick(10)
    assert lp.model_state["applied"] == [(1.0, "s"), (2.0, "a"),
                                         (8.0, "a-out")]


# -- antimessages ------------------------------------------------------------


def test_anti_annihilates_unprocessed_inbox_event():
    lp, tr = make_lp()
    seq = feed(lp, tr, 50.0, "v")  # too far in the future to execute yet
    lp.drain_transport()
    assert len(lp.inbox_messages) == 1
    victim = Message(MessageKind.EVENT, seq, 1, 0, 50.0, "v")
    tr.send(make_antimessage(victim))
    lp.drain_transport()
    assert len(lp.inbox_messages) == 0
    assert lp.rollbacks == 0
    # the antimessage is acknowledged like any other received message
    assert len(sent_to(tr, 1, MessageKind.ACK)) == 2


def test_anti_for_processed_event_rolls_back_without_reexecution():
    lp, tr, seqs = _history_abc()
    feed(lp, tr, 12.0, "d")
    lp.tick(10)
    assert lp.timestamp == 12.0

    victim = Message(MessageKind.EVENT, seqs["c"], 1, 0, 9.0, "c")
    tr.send(make_antimessage(victim))
    lp.drain_transport()
    assert lp.rollbacks == 1
    assert lp.timestamp == 4.0
    # c is gone for good; d waits to re-execute
    assert sorted(m.timestamp for m in lp.inbox_messages) == [12.0]
    lp.tick(10)
    assert lp.model_state["applied"] == [(0.0, "a"), (4.0, "b"), (12.0, "d")]


def test_anti_before_event_is_buffered_then_annihilates():
    lp, tr = make_lp()
    victim = Message(MessageKind.EVENT, 777, 1, 0, 30.0, "v")
    tr.send(make_antimessage(victim))
    lp.drain_transport()
    assert len(lp.anti_messages) == 1
    tr.send(victim)
    lp.drain_transport()
    assert len(lp.anti_messages) == 0
    assert len(lp.inbox_messages) == 0  # silently cancelled on arrival
    lp.tick(10)
    assert lp.model_state["applied"] == []


def test_duplicate_antimessage_is_a_protocol_error():
    lp, tr = make_lp()
    anti = make_antimessage(Message(MessageKind.EVENT, 778, 1, 0, 30.0, "v"))
    tr.send(anti)
    lp.drain_transport()
    tr.send(anti)
    with pytest.raises(ProtocolError):
        lp.drain_transport()


def test_duplicate_event_delivery_is_a_protocol_error():
    lp, tr = make_lp()
    event = Message(MessageKind.EVENT, 779, 1, 0, 40.0, "v")
    tr.send(event)
    lp.drain_transport()
    tr.send(event)
    with pytest.raises(ProtocolError):
        lp.drain_transport()


# -- fossil collection -------------------------------------------------------


def _history_128():
    lp, tr = make_lp(end_time=50.0)
    for ts, tag in [(1.0, "a"), (2.0, "b"), (8.0, "c")]:
        feed(lp, tr, ts, tag)
    lp.tick(10)
    assert [h.timestamp for h in lp.history] == [1.0, 2.0, 8.0]
    return lp, tr


def test_fossil_collect_drops_strictly_below_gvt():
    lp, _ = _history_128()
    lp.fossil_collect(5.0)
    assert lp.gvt == 5.0
    assert [h.timestamp for h in lp.history] == [8.0]
    # the newest pre-GVT snapshot is retained as the restoration base
    assert lp.restoration_base is not None
    assert lp.restoration_base.timestamp == 2.0
    # dropped entries became committed trace (all below end_time here)
    assert [entry[0] for entry in lp.committed] == [1.0, 2.0]


def test_fossil_collect_at_zero_drops_nothing():
    lp, _ = _history_128()
    lp.fossil_collect(0.0)
    assert [h.timestamp for h in lp.history] == [1.0, 2.0, 8.0]
    assert lp.committed == []


def test_fossil_collect_beyond_all_history():
    lp, _ = _history_128()
    lp.fossil_collect(100.0)
    assert lp.history == []
    assert lp.restoration_base.timestamp == 8.0
    assert [entry[0] for entry in lp.committed] == [1.0, 2.0, 8.0]


def test_fossil_collect_regression_is_fatal():
    lp, _ = _history_128()
    lp.fossil_collect(5.0)
    with pytest.raises(ProtocolError):
        lp.fossil_collect(4.0)


def test_fossil_collect_prunes_ack_ledger():
    lp, tr = make_lp(script={"a": [(1, "x", 3.0)], "c": [(1, "y", 9.0)]})
    for ts, tag in [(1.0, "a"), (8.0, "c")]:
        feed(lp, tr, ts, tag)
    lp.tick(10)
    assert [m.timestamp for m in lp.to_ack_messages] == [3.0, 9.0]
    lp.fossil_collect(5.0)
    # the ts=3 send can never matter to a future GVT round again
    assert [m.timestamp for m in lp.to_ack_messages] == [9.0]


def test_commit_clips_at_end_time():
    lp, tr = make_lp(end_time=5.0)
    for ts, tag in [(1.0, "a"), (4.0, "b"), (8.0, "c")]:
        feed(lp, tr, ts, tag)
    lp.tick(10)
    lp.fossil_collect(100.0)
    # c executed speculatively past end_time: processed but never committed
    assert [entry[0] for entry in lp.committed] == [1.0, 4.0]


# -- acknowledgements and GVT hooks -----------------------------------------


def test_ack_clears_the_ledger():
    endpoints = [0, 1, 2]
    tr = InProcTransport(endpoints)
    model = ScriptModel(2, {"a": [(1, "x", 7.0)]})
    lp0 = LogicalProcess(0, model, tr, controller=2, end_time=100.0)
    lp1 = LogicalProcess(1, ScriptModel(2), tr, controller=2, end_time=100.0)

    feed(lp0, tr, 4.0, "a", sender=2)  # injected by the controller endpoint
    lp0.tick(10)
    assert len(lp0.to_ack_messages) == 1
    lp1.tick(10)  # receives x, acks it
    lp0.tick(10)  # consumes the ack
    assert lp0.to_ack_messages == []
    assert lp1.model_state["applied"] == [(7.0, "x")]


def test_unmatched_ack_is_a_protocol_error():
    lp, tr = make_lp()
    bogus = Message(MessageKind.ACK, 999, 1, 0, 50.0)
    tr.send(bogus)
    with pytest.raises(ProtocolError):
        lp.drain_transport()


def test_stale_ack_below_gvt_is_ignored():
    lp, tr = make_lp()
    lp.fossil_collect(10.0)
    stale = Message(MessageKind.ACK, 999, 1, 0, 3.0)
    tr.send(stale)
    lp.drain_transport()  # no error: its ledger entry was fossil-collected


def test_local_min_report_four_way_minimum():
    lp, tr = make_lp(script={"a": [(1, "x", 6.0)]})
    feed(lp, tr, 4.0, "a")
    feed(lp, tr, 10.0, "z")
    lp.tick(10)
    assert lp.timestamp == 10.0
    # unacked send at ts 6 is the minimum
    assert lp.local_min_report() == 6.0
    # a queued event below that wins
    feed(lp, tr, 2.5, "later")
    lp.drain_transport()
    assert lp.local_min_report() == 2.5
    # marked-ack minimum wins when lower still
    lp.samadi_marked_messages_min = 1.25
    assert lp.local_min_report() == 1.25
    # and the report never dips below the known GVT
    lp.samadi_marked_messages_min = None
    lp.gvt = 3.0
    assert lp.local_min_report() == 3.0


def test_idle_lp_reports_its_lvt():
    lp, tr = make_lp()
    feed(lp, tr, 7.0, "a")
    lp.tick(10)
    tr.receive_batch(1, 64)  # clear the ack so nothing else pends
    assert lp.local_min_report() == 7.0


def test_gvt_request_sets_find_mode_and_reports():
    lp, tr = make_lp()
    feed(lp, tr, 7.0, "a")
    lp.tick(10)
    tr.send(Message(MessageKind.GVT_REQUEST, 1, 2, 0, 0.0, 0.0))
    lp.tick(0)
    assert lp.samadi_find_mode
    reports = sent_to(tr, 2, MessageKind.GVT_REPORT)
    assert [m.payload for m in reports] == [7.0]
    # acks sent while in find mode are marked
    feed(lp, tr, 9.0, "b")
    lp.tick(0)
    assert len(sent_to(tr, 1, MessageKind.MARKED_ACK)) == 1
    # the round's broadcast clears find mode and advances GVT
    tr.send(Message(MessageKind.GVT_BROADCAST, 2, 2, 0, 0.0, 7.0))
    lp.tick(0)
    assert not lp.samadi_find_mode
    assert lp.gvt == 7.0


def test_gvt_piggyback_advances_stale_lps():
    lp, tr = make_lp()
    feed(lp, tr, 9.0, "a")
    lp.tick(10)
    # this LP missed earlier broadcasts; the request itself carries GVT
    tr.send(Message(MessageKind.GVT_REQUEST, 1, 2, 0, 0.0, 6.5))
    lp.tick(0)
    assert lp.gvt == 6.5


def test_stop_commits_history_and_reports_summary():
    lp, tr = make_lp(end_time=10.0)
    for ts, tag in [(1.0, "a"), (4.0, "b")]:
        feed(lp, tr, ts, tag)
    lp.tick(10)
    tr.send(Message(MessageKind.STOP, 1, 2, 0, 0.0, 12.0))
    lp.tick(0)
    assert lp.status is LpStatus.TERMINATING
    assert lp.summary is not None
    assert [entry[0] for entry in lp.summary.trace] == [1.0, 4.0]
    summaries = sent_to(tr, 2, MessageKind.SUMMARY)
    assert len(summaries) == 1 and summaries[0].payload == lp.summary
    # a terminating LP drops late traffic instead of processing it
    feed(lp, tr, 20.0, "late")
    assert not lp.tick(10)
    assert len(lp.inbox_messages) == 0


def test_event_below_gvt_is_fatal():
    lp, tr = make_lp()
    lp.fossil_collect(10.0)
    feed(lp, tr, 3.0, "old")
    lp.drain_transport()
    with pytest.raises(ProtocolError):
        lp.step()
