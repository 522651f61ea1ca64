"""Optimistic parallel discrete event simulation on the Time Warp protocol.

Logical processes execute speculatively and repair causality violations by
rolling back; a coordinator computes global virtual time (GVT) so memory
can be reclaimed and runs can stop.  Models plug in through three
callbacks, transports are swappable (in-process queues or a TCP mesh), and
a sequential reference simulator provides the correctness oracle: the
committed trace of any partitioning must match it exactly.
"""

from .errors import ConfigError, ModelError, ProtocolError, TransportError
from .event_queue import EventQueue
from .gvt import GvtController, GvtPhase
from .lp import LogicalProcess, LpStatus
from .messages import (
    ENVIRONMENT_LP,
    LpSummary,
    Message,
    MessageKind,
    annihilates,
    decode_message,
    encode_message,
    make_ack,
    make_antimessage,
)
from .model import EntityMap, ModelCallbacks
from .oracle import OracleResult, canonical_trace, load_trace, run_sequential, save_trace
from .phold import PholdConfig, PholdModel, PholdPayload, init_events, workload_loop
from .rng import next_exponential, next_int, next_uniform, seed_for_entity
from .runner import (
    ExperimentResult,
    RunConfig,
    RunMetrics,
    drain_and_count_events,
    format_config,
    inspect_safety,
    parse_config,
    run_experiment,
    run_inproc,
    run_tcp_all,
    run_tcp_node,
    speedup_table,
    write_csv,
)
from .transport import InProcTransport, NodeSpec, TcpTransport, Topology, pick_free_ports

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ModelError", "ProtocolError", "TransportError",
    "EventQueue",
    "GvtController", "GvtPhase",
    "LogicalProcess", "LpStatus",
    "ENVIRONMENT_LP", "LpSummary", "Message", "MessageKind",
    "annihilates", "decode_message", "encode_message", "make_ack",
    "make_antimessage",
    "EntityMap", "ModelCallbacks",
    "OracleResult", "canonical_trace", "load_trace", "run_sequential",
    "save_trace",
    "PholdConfig", "PholdModel", "PholdPayload", "init_events",
    "workload_loop",
    "next_exponential", "next_int", "next_uniform", "seed_for_entity",
    "ExperimentResult", "RunConfig", "RunMetrics", "drain_and_count_events",
    "format_config", "inspect_safety", "parse_config", "run_experiment",
    "run_inproc", "run_tcp_all", "run_tcp_node", "speedup_table", "write_csv",
    "InProcTransport", "NodeSpec", "TcpTransport", "Topology",
    "pick_free_ports",
    "__version__",
]
