"""Experiment driver: configuration, run loops, metrics, CSV output.

A run is parameterized by a flat key-value config file::

    seed 12345
    L 4
    E 840
    rho 0.5
    workload 1000
    mean_increment 5.0
    end_time 1000
    gvt_period 1.0
    repetitions 30
    node 127.0.0.1:9001 0-1
    node 127.0.0.1:9002 2-3

``node`` lines (host:port plus an inclusive LP range) describe the TCP
topology and are ignored by the in-process backend.  The controller lives
on the first node.  ``gvt_every_ticks`` can replace the wall-clock
``gvt_period`` to make in-process runs fully deterministic.

The in-process backend drives every LP and the controller from one
cooperative loop, so a whole run is a deterministic function of the config
(plus the optional delivery-shuffle seed).  The TCP backend runs each node
in its own OS process; operators start one runner per node, or
``run_tcp_all`` spawns them all locally.
"""

from __future__ import annotations

import csv
import logging
import pickle
import time
from dataclasses import dataclass
from typing import Callable, Optional

import multiprocessing as mp

from .errors import ConfigError, ProtocolError, TransportError
from .gvt import GvtController
from .lp import LogicalProcess, LpStatus
from .messages import LpSummary, Message, MessageKind
from .oracle import canonical_trace
from .phold import PholdConfig, PholdModel, init_events
from .transport import InProcTransport, NodeSpec, TcpTransport, Topology

__all__ = [
    "RunConfig",
    "RunMetrics",
    "ExperimentResult",
    "parse_config",
    "format_config",
    "run_inproc",
    "run_tcp_node",
    "run_tcp_all",
    "run_experiment",
    "speedup_table",
    "write_csv",
    "inspect_safety",
    "drain_and_count_events",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_WALL = 120.0


@dataclass(frozen=True)
class RunConfig:
    phold: PholdConfig
    gvt_period: float = 1.0
    gvt_every_ticks: Optional[int] = None
    repetitions: int = 1
    nodes: tuple[NodeSpec, ...] = ()
    steps_per_tick: int = 8
    max_wall: float = DEFAULT_MAX_WALL
    window: Optional[float] = None  # optimism throttle (virtual-time units)

    def __post_init__(self) -> None:
        if self.gvt_period <= 0:
            raise ConfigError(f"gvt_period must be positive, got {self.gvt_period}")
        if self.gvt_every_ticks is not None and self.gvt_every_ticks < 1:
            raise ConfigError("gvt_every_ticks must be >= 1")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.steps_per_tick < 1:
            raise ConfigError("steps_per_tick must be >= 1")
        if self.window is not None and self.window <= 0:
            raise ConfigError(f"window must be positive, got {self.window}")

    def topology(self) -> Topology:
        if not self.nodes:
            raise ConfigError("config has no node lines; TCP backend needs them")
        return Topology(self.nodes, self.phold.num_lps)


@dataclass(frozen=True)
class RunMetrics:
    """Everything observable from one completed run."""

    wall_clock_seconds: float
    total_rollbacks: int
    per_lp_rollbacks: tuple[int, ...]
    events_committed: int
    gvt_trace: tuple[float, ...]
    final_gvt: float
    trace: tuple  # merged committed trace, canonically ordered
    summaries: tuple[LpSummary, ...]

    @property
    def gvt_rounds(self) -> int:
        return len(self.gvt_trace)


@dataclass(frozen=True)
class ExperimentResult:
    config: RunConfig
    backend: str
    runs: tuple[RunMetrics, ...]

    @property
    def mean_wall(self) -> float:
        return sum(r.wall_clock_seconds for r in self.runs) / len(self.runs)

    @property
    def mean_rollbacks(self) -> float:
        return sum(r.total_rollbacks for r in self.runs) / len(self.runs)


# -- configuration ---------------------------------------------------------

_REQUIRED_KEYS = ("seed", "L", "E", "end_time")


def parse_config(text: str) -> RunConfig:
    """Parse the flat key-value format; unknown keys are errors."""
    values: dict[str, str] = {}
    nodes: list[NodeSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "node":
            if len(parts) != 3:
                raise ConfigError(
                    f"line {lineno}: expected 'node host:port a-b', got {raw!r}"
                )
            nodes.append(_parse_node(parts[1], parts[2], lineno))
            continue
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected 'key value', got {raw!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parts[1]

    for key in _REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing required config key {key!r}")

    def take(key: str, conv, default):
        if key not in values:
            return default
        raw = values.pop(key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc

    phold = PholdConfig(
        num_entities=take("E", int, None),
        num_lps=take("L", int, None),
        end_time=take("end_time", float, None),
        base_seed=take("seed", int, None),
        rho=take("rho", float, 0.5),
        mean_increment=take("mean_increment", float, 5.0),
        workload_fpops=take("workload", int, 0),
        rng_mode=take("rng_mode", str, "entity"),
    )
    cfg = RunConfig(
        phold=phold,
        gvt_period=take("gvt_period", float, 1.0),
        gvt_every_ticks=take("gvt_every_ticks", int, None),
        repetitions=take("repetitions", int, 1),
        nodes=tuple(nodes),
        steps_per_tick=take("steps_per_tick", int, 8),
        max_wall=take("max_wall", float, DEFAULT_MAX_WALL),
        window=take("window", float, None),
    )
    if values:
        raise ConfigError(f"unknown config keys: {sorted(values)}")
    return cfg


def _parse_node(addr: str, lp_range: str, lineno: int) -> NodeSpec:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"line {lineno}: node address must be host:port, got {addr!r}")
    try:
        port_num = int(port)
        if "-" in lp_range:
            lo_s, hi_s = lp_range.split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
        else:
            lo = hi = int(lp_range)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad node line") from exc
    if hi < lo:
        raise ConfigError(f"line {lineno}: empty LP range {lp_range!r}")
    return NodeSpec(name=addr, host=host, port=port_num, lps=tuple(range(lo, hi + 1)))


def format_config(cfg: RunConfig) -> str:
    p = cfg.phold
    lines = [
        f"seed {p.base_seed}",
        f"L {p.num_lps}",
        f"E {p.num_entities}",
        f"rho {p.rho!r}",
        f"workload {p.workload_fpops}",
        f"mean_increment {p.mean_increment!r}",
        f"end_time {p.end_time!r}",
        f"rng_mode {p.rng_mode}",
        f"gvt_period {cfg.gvt_period!r}",
        f"repetitions {cfg.repetitions}",
        f"steps_per_tick {cfg.steps_per_tick}",
        f"max_wall {cfg.max_wall!r}",
    ]
    if cfg.gvt_every_ticks is not None:
        lines.append(f"gvt_every_ticks {cfg.gvt_every_ticks}")
    if cfg.window is not None:
        lines.append(f"window {cfg.window!r}")
    for n in cfg.nodes:
        lo, hi = min(n.lps), max(n.lps)
        lines.append(f"node {n.host}:{n.port} {lo}-{hi}")
    return "\n".join(lines) + "\n"


# -- inspection helpers ------------------------------------------------------

_DATA_KINDS = (MessageKind.EVENT, MessageKind.ANTIMESSAGE)


def inspect_safety(lps, transport, gvt: float) -> list[str]:
    """GVT safety predicate at a round close: no queued or in-flight event
    or antimessage anywhere may sit below the freshly computed GVT.
    Returns human-readable violations (empty list = safe)."""
    bad = []
    for receiver, m in transport.pending_messages():
        if m.kind in _DATA_KINDS and m.timestamp < gvt:
            bad.append(f"in flight to {receiver}: {m!r} < GVT {gvt!r}")
    for lp in lps:
        for m in lp.inbox_messages:
            if m.timestamp < gvt:
                bad.append(f"LP {lp.my_id} inbox: {m!r} < GVT {gvt!r}")
        for m in lp.anti_messages.values():
            if m.timestamp < gvt:
                bad.append(f"LP {lp.my_id} anti buffer: {m!r} < GVT {gvt!r}")
        for m in lp.received_messages:
            if m.kind in _DATA_KINDS and m.timestamp < gvt:
                bad.append(f"LP {lp.my_id} staging: {m!r} < GVT {gvt!r}")
    return bad


def drain_and_count_events(lps, transport, max_sweeps: int = 100_000) -> int:
    """Deliver everything in flight without executing any event, then count
    queued events.  At such a quiescent cut each live event sits in exactly
    one inbox (annihilations and ack bookkeeping have settled), so for PHOLD
    the count must equal the initial population."""
    for _ in range(max_sweeps):
        moved = False
        for lp in lps:
            moved = lp.tick(max_steps=0) or moved
        if not moved and transport.pending_count() == 0:
            break
    else:
        raise ProtocolError("system failed to quiesce while draining")
    return sum(len(lp.inbox_messages) for lp in lps)


# -- in-process backend ------------------------------------------------------

def run_inproc(cfg: RunConfig,
               shuffle_seed: Optional[int] = None,
               on_round_close: Optional[Callable] = None,
               check_delivery: bool = True) -> RunMetrics:
    """Run to completion on the deterministic cooperative scheduler.

    ``on_round_close(controller, lps, transport)`` fires after each GVT
    computation, before the result reaches the LPs: the whole system is
    frozen for inspection at exactly the instant the Safety invariant
    speaks about.
    """
    p = cfg.phold
    model = PholdModel(p)
    endpoints = list(range(p.num_lps + 1))
    transport = InProcTransport(endpoints, shuffle_seed=shuffle_seed)
    lps = [
        LogicalProcess(i, model, transport, controller=p.num_lps,
                       end_time=p.end_time, optimism_window=cfg.window)
        for i in range(p.num_lps)
    ]

    hook = None
    if on_round_close is not None:
        def hook(controller: GvtController) -> None:
            on_round_close(controller, lps, transport)

    every_ticks = cfg.gvt_every_ticks
    controller = GvtController(
        transport, p.num_lps, p.end_time,
        period=cfg.gvt_period, every_ticks=every_ticks,
        on_round_close=hook,
    )
    for m in init_events(p):
        lps[m.lp_receiver].inbox_messages.insert(m)

    start = time.perf_counter()
    deadline = start + cfg.max_wall
    while not controller.done:
        controller.tick()
        for lp in lps:
            lp.tick(cfg.steps_per_tick)
        if time.perf_counter() > deadline:
            raise TimeoutError(_stall_diagnostic(cfg, controller, lps))
    wall = time.perf_counter() - start

    if check_delivery:
        # flush residual traffic (late acks and speculative leftovers) and
        # verify the exactly-once accounting
        for _ in range(200_000):
            if transport.pending_count() == 0:
                break
            for lp in lps:
                lp.tick(max_steps=0)
            controller_leftover = transport.receive_batch(controller.my_id, 64)
            del controller_leftover
        if transport.total_sent != transport.total_delivered:
            raise TransportError(
                f"delivery imbalance: sent {transport.total_sent}, "
                f"delivered {transport.total_delivered}"
            )
    return _collect_metrics(controller, wall)


def _stall_diagnostic(cfg: RunConfig, controller: GvtController, lps) -> str:
    lines = [
        f"run exceeded max_wall={cfg.max_wall}s; "
        f"controller phase={controller.phase.value} gvt={controller.current_gvt!r} "
        f"rounds={controller.rounds_completed}",
    ]
    for lp in lps:
        lines.append(
            f"  LP {lp.my_id}: status={lp.status.value} lvt={lp.timestamp!r} "
            f"inbox={len(lp.inbox_messages)} unacked={len(lp.to_ack_messages)} "
            f"rollbacks={lp.rollbacks}"
        )
    return "\n".join(lines)


def _collect_metrics(controller: GvtController, wall: float) -> RunMetrics:
    summaries = tuple(controller.summaries[lp] for lp in sorted(controller.summaries))
    merged: list = []
    for s in summaries:
        merged.extend(s.trace)
    trace = canonical_trace(merged)
    return RunMetrics(
        wall_clock_seconds=wall,
        total_rollbacks=sum(s.rollbacks for s in summaries),
        per_lp_rollbacks=tuple(s.rollbacks for s in summaries),
        events_committed=len(trace),
        gvt_trace=tuple(controller.gvt_trace),
        final_gvt=controller.current_gvt,
        trace=trace,
        summaries=summaries,
    )


# -- TCP backend --------------------------------------------------------------

_LINGER_SECONDS = 0.5
_IDLE_SLEEP = 0.0002


def run_tcp_node(cfg: RunConfig, node_name: str) -> Optional[RunMetrics]:
    """Run one node of a distributed run; blocks until the run ends.

    Returns metrics on the controller node (the first node line), None on
    the others.
    """
    topology = cfg.topology()
    p = cfg.phold
    model = PholdModel(p)
    node = topology.node_named(node_name)
    is_controller_node = node is topology.nodes[0]

    transport = TcpTransport(topology, node_name, payload_codec=model)
    transport.start()
    try:
        lps = [
            LogicalProcess(i, model, transport, controller=topology.controller,
                           end_time=p.end_time, optimism_window=cfg.window)
            for i in node.lps
        ]
        controller = None
        if is_controller_node:
            others = {n.name for n in topology.nodes[1:]}
            controller = GvtController(
                transport, p.num_lps, p.end_time,
                period=cfg.gvt_period, every_ticks=cfg.gvt_every_ticks,
                expected_nodes=others,
            )
        else:
            transport.send(Message(
                MessageKind.REGISTER, 0, node.lps[0], topology.controller,
                0.0, node_name,
            ))
        for m in init_events(p):
            if m.lp_receiver in set(node.lps):
                lps[node.lps.index(m.lp_receiver)].inbox_messages.insert(m)

        start = time.perf_counter()
        deadline = start + cfg.max_wall
        while True:
            did = False
            if controller is not None:
                did = controller.tick() or did
            for lp in lps:
                did = lp.tick(cfg.steps_per_tick) or did
            transport.check_error()
            if controller is not None:
                if controller.done:
                    break
            elif all(lp.status is LpStatus.TERMINATING for lp in lps):
                break
            if not did:
                time.sleep(_IDLE_SLEEP)
            if time.perf_counter() > deadline:
                raise TimeoutError(
                    f"node {node_name}: run exceeded max_wall={cfg.max_wall}s"
                )
        wall = time.perf_counter() - start

        # Linger: peers may still be dispatching their last acks and
        # stop-time stragglers; keep draining so their sends cannot fail.
        linger_until = time.monotonic() + _LINGER_SECONDS
        while time.monotonic() < linger_until:
            for lp in lps:
                lp.tick(max_steps=0)
            if controller is not None:
                transport.receive_batch(controller.my_id, 64)
            time.sleep(0.01)

        if controller is not None:
            return _collect_metrics(controller, wall)
        return None
    finally:
        transport.close()


def _node_entry(cfg_text: str, node_name: str, result_path: Optional[str]) -> None:
    cfg = parse_config(cfg_text)
    metrics = run_tcp_node(cfg, node_name)
    if metrics is not None and result_path:
        with open(result_path, "wb") as f:
            pickle.dump(metrics, f)


def run_tcp_all(cfg: RunConfig, result_path: str,
                join_timeout: float = 120.0) -> RunMetrics:
    """Spawn every topology node as a local OS process and collect the
    controller's metrics.  Convenience path for tests and single-machine
    experiments; real distributed runs start `run --node` per machine."""
    topology = cfg.topology()  # validate before spawning anything
    ctx = mp.get_context("spawn")
    text = format_config(cfg)
    procs = []
    for node in topology.nodes:
        out = result_path if node is topology.nodes[0] else None
        proc = ctx.Process(target=_node_entry, args=(text, node.name, out),
                           name=f"tw-node-{node.name}")
        proc.start()
        procs.append(proc)
    failed = []
    for node, proc in zip(topology.nodes, procs):
        proc.join(timeout=join_timeout)
        if proc.is_alive():
            proc.terminate()
            proc.join()
            failed.append(f"{node.name}: timed out")
        elif proc.exitcode != 0:
            failed.append(f"{node.name}: exit code {proc.exitcode}")
    if failed:
        raise TransportError("TCP run failed: " + "; ".join(failed))
    with open(result_path, "rb") as f:
        return pickle.load(f)


# -- experiments ---------------------------------------------------------------

def run_experiment(cfg: RunConfig, backend: str = "inproc",
                   result_dir: Optional[str] = None) -> ExperimentResult:
    """Execute ``cfg.repetitions`` identical runs and aggregate them."""
    runs = []
    for rep in range(cfg.repetitions):
        try:
            if backend == "inproc":
                runs.append(run_inproc(cfg))
            elif backend == "tcp":
                base = result_dir or "."
                path = f"{base}/tw_result_rep{rep}.pkl"
                runs.append(run_tcp_all(cfg, path))
            else:
                raise ConfigError(f"unknown backend {backend!r}")
        except (ProtocolError, TransportError, TimeoutError) as exc:
            raise type(exc)(f"repetition {rep}: {exc}") from exc
    return ExperimentResult(config=cfg, backend=backend, runs=tuple(runs))


def speedup_table(baseline: ExperimentResult,
                  others: list[ExperimentResult]) -> list[tuple[int, float, float, float]]:
    """Rows of (L, mean wall seconds, speedup S_L, efficiency Eff_L)."""
    if baseline.config.phold.num_lps != 1:
        raise ConfigError("speedup baseline must be an L=1 experiment")
    t1 = baseline.mean_wall
    rows = [(1, t1, 1.0, 1.0)]
    for res in others:
        lp_count = res.config.phold.num_lps
        tl = res.mean_wall
        s = t1 / tl
        rows.append((lp_count, tl, s, s / lp_count))
    return rows


_CSV_FIELDS = [
    "run", "backend", "L", "E", "rho", "workload", "seed",
    "wall_clock_seconds", "total_rollbacks", "events_committed",
    "gvt_rounds", "final_gvt", "per_lp_rollbacks",
]


def write_csv(result: ExperimentResult, path: str) -> None:
    """One row per run plus a mean row; deterministic fields are
    byte-stable for identical inputs."""
    p = result.config.phold
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=_CSV_FIELDS)
        w.writeheader()
        base = {
            "backend": result.backend,
            "L": p.num_lps,
            "E": p.num_entities,
            "rho": repr(p.rho),
            "workload": p.workload_fpops,
            "seed": p.base_seed,
        }
        for i, r in enumerate(result.runs):
            w.writerow(base | {
                "run": i,
                "wall_clock_seconds": repr(r.wall_clock_seconds),
                "total_rollbacks": r.total_rollbacks,
                "events_committed": r.events_committed,
                "gvt_rounds": r.gvt_rounds,
                "final_gvt": repr(r.final_gvt),
                "per_lp_rollbacks": ";".join(map(str, r.per_lp_rollbacks)),
            })
        n = len(result.runs)
        w.writerow(base | {
            "run": "mean",
            "wall_clock_seconds": repr(result.mean_wall),
            "total_rollbacks": repr(result.mean_rollbacks),
            "events_committed": repr(
                sum(r.events_committed for r in result.runs) / n),
            "gvt_rounds": repr(sum(r.gvt_rounds for r in result.runs) / n),
            "final_gvt": "",
            "per_lp_rollbacks": "",
        })
