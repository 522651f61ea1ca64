"""Sequential reference simulator.

One future event list, one process, no speculation: the plain discrete
event loop the optimistic engine must agree with.  Because PHOLD keeps all
randomness in per-entity streams, the set of executions committed by a
Time Warp run (any L, any delivery order) must equal this loop's trace;
tests compare the two after canonical sorting.

Executions at identical timestamps commute unless they touch the same
entity, which would make the trajectory depend on tie-breaking order.  The
loop watches for same-(timestamp, entity) collisions and reports them so
callers know when an equivalence comparison would be meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

from .event_queue import EventQueue
from .messages import Message, MessageKind
from .model import ModelCallbacks
from .phold import PholdConfig, PholdModel, init_events

__all__ = [
    "OracleResult",
    "run_sequential",
    "canonical_trace",
    "save_trace",
    "load_trace",
]

TraceEntry = tuple[float, int, int, int]  # (timestamp, entity, entity_sender, value)


@dataclass(frozen=True)
class OracleResult:
    # trace is in execution order: nondecreasing timestamps, ties broken by
    # the same (timestamp, sender, seq) rule the concurrent engine uses.
    trace: tuple[TraceEntry, ...]
    events_executed: int
    population: int
    tie_detected: bool
    model_summary: dict


def canonical_trace(entries) -> tuple[TraceEntry, ...]:
    """Order-independent form for comparing traces across partitions."""
    return tuple(sorted(entries))


def run_sequential(cfg: PholdConfig, model: ModelCallbacks | None = None) -> OracleResult:
    """Run the model to ``cfg.end_time`` with a single event list.

    Events are executed in nondecreasing timestamp order; the loop stops
    before executing the first event at or beyond the end time.  The
    returned trace lists one digest per executed event.
    """
    if model is None:
        model = PholdModel(
            PholdConfig(
                num_entities=cfg.num_entities,
                num_lps=1,
                end_time=cfg.end_time,
                base_seed=cfg.base_seed,
                rho=cfg.rho,
                mean_increment=cfg.mean_increment,
                workload_fpops=cfg.workload_fpops,
                rng_mode=cfg.rng_mode,
            )
        )
    state = model.init(0)
    fel = EventQueue()
    # lp_receiver is irrelevant here; rehome every initial event to LP 0.
    for m in init_events(cfg):
        fel.insert(Message(m.kind, m.seq_number, m.lp_sender, 0, m.timestamp, m.payload))

    seq = 0
    pending: list[tuple[int, object, float]] = []

    def emit(entity: int, payload, timestamp: float) -> None:
        pending.append((entity, payload, timestamp))

    trace: list[TraceEntry] = []
    seen: set[tuple[float, int]] = set()
    tie = False
    executed = 0
    stopped_early = 0
    while fel:
        msg = fel.pop_min_deterministic()
        if msg.timestamp >= cfg.end_time:
            stopped_early = 1  # popped but not executed; still in the population
            break
        digest = model.trace_digest(msg.payload)
        if digest is not None:
            key = (msg.timestamp, digest[0])
            if key in seen:
                tie = True
            seen.add(key)
            trace.append((msg.timestamp, *digest))
        pending.clear()
        state = model.handle_event(state, msg.payload, msg.timestamp, emit)
        for entity, payload, ts in pending:
            if ts <= msg.timestamp:
                raise ValueError(
                    f"emission at {ts!r} not after current time {msg.timestamp!r}"
                )
            seq += 1
            fel.insert(Message(MessageKind.EVENT, seq, 0, 0, ts, payload))
        executed += 1

    return OracleResult(
        trace=tuple(trace),
        events_executed=executed,
        population=len(fel) + stopped_early,
        tie_detected=tie,
        model_summary=model.terminate(state),
    )


def save_trace(path: str, trace) -> None:
    """Write one ``timestamp entity sender value`` line per entry; the
    timestamp is repr-formatted so it round-trips exactly."""
    with open(path, "w", encoding="utf-8") as f:
        for ts, entity, sender, value in trace:
            f.write(f"{ts!r} {entity} {sender} {value}\n")


def load_trace(path: str) -> tuple[TraceEntry, ...]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            ts, entity, sender, value = line.split()
            out.append((float(ts), int(entity), int(sender), int(value)))
    return canonical_trace(out)
