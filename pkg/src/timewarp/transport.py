"""Message transports.

Both backends present the same two-call surface: ``send(message)`` routes by
``lp_receiver`` and ``receive_batch(me, max)`` drains pending messages
without blocking.  Delivery is exactly-once and unordered by contract; the
engine must not rely on FIFO behavior, and the in-process backend can be
seeded to reorder and delay deliveries aggressively to enforce that.

The TCP backend runs one OS process per node.  Every node owns one
listening socket and dials one outbound connection to each peer node, so an
L-LP run over N nodes uses a full mesh of N*(N-1) simplex links.  Frames
are a 4-byte little-endian length followed by the canonical message
encoding.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import TransportError
from .messages import Message, MessageKind, decode_message, encode_message

__all__ = [
    "InProcTransport",
    "NodeSpec",
    "Topology",
    "TcpTransport",
    "pick_free_ports",
]

log = logging.getLogger(__name__)


class InProcTransport:
    """Shared mailbox transport for single-process runs.

    With ``shuffle_seed`` set, each ``receive_batch`` call delivers every
    pending message only with probability one half and shuffles whatever it
    does deliver, which breaks FIFO order even between a fixed sender and
    receiver.  A message passed over ``force_after`` times is delivered
    unconditionally so the delay stays bounded and runs terminate.
    """

    def __init__(self, endpoints: Iterable[int], shuffle_seed: Optional[int] = None,
                 force_after: int = 16) -> None:
        self._queues: dict[int, deque] = {e: deque() for e in endpoints}
        if len(self._queues) == 0:
            raise TransportError("transport needs at least one endpoint")
        self._lock = threading.Lock()
        self._rand = random.Random(shuffle_seed) if shuffle_seed is not None else None
        self._force_after = force_after
        self.total_sent = 0
        self.total_delivered = 0

    def send(self, msg: Message) -> None:
        with self._lock:
            q = self._queues.get(msg.lp_receiver)
            if q is None:
                raise TransportError(f"unknown receiver {msg.lp_receiver} for {msg!r}")
            q.append([0, msg])
            self.total_sent += 1

    def receive_batch(self, me: int, max_messages: int) -> list[Message]:
        with self._lock:
            q = self._queues.get(me)
            if q is None:
                raise TransportError(f"unknown endpoint {me}")
            if self._rand is None:
                out = []
                while q and len(out) < max_messages:
                    out.append(q.popleft()[1])
                self.total_delivered += len(out)
                return out
            delivered: list[Message] = []
            held: list[list] = []
            for item in q:
                if len(delivered) >= max_messages:
                    held.append(item)
                elif item[0] >= self._force_after or self._rand.random() < 0.5:
                    delivered.append(item[1])
                else:
                    item[0] += 1
                    held.append(item)
            q.clear()
            q.extend(held)
            self._rand.shuffle(delivered)
            self.total_delivered += len(delivered)
            return delivered

    def pending_count(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())

    def pending_messages(self) -> list[tuple[int, Message]]:
        """Snapshot of undelivered traffic, for invariant checks."""
        with self._lock:
            return [(e, item[1]) for e, q in self._queues.items() for item in q]

    def check_error(self) -> None:
        pass

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    host: str
    port: int
    lps: tuple[int, ...]


@dataclass(frozen=True)
class Topology:
    """Placement of LPs (and the controller) onto named nodes.

    The controller endpoint id is ``num_lps`` by convention and always
    lives on the first node.
    """

    nodes: tuple[NodeSpec, ...]
    num_lps: int

    def __post_init__(self) -> None:
        if not self.nodes:
            raise TransportError("topology needs at least one node")
        seen: set[int] = set()
        for n in self.nodes:
            for lp in n.lps:
                if lp in seen:
                    raise TransportError(f"LP {lp} assigned to two nodes")
                seen.add(lp)
        if seen != set(range(self.num_lps)):
            missing = set(range(self.num_lps)) - seen
            extra = seen - set(range(self.num_lps))
            raise TransportError(
                f"node LP sets must partition 0..{self.num_lps - 1}; "
                f"missing {sorted(missing)}, extra {sorted(extra)}"
            )
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise TransportError(f"duplicate node names in {names}")

    @property
    def controller(self) -> int:
        return self.num_lps

    def node_named(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise TransportError(f"no node named {name!r}")

    def node_of(self, endpoint: int) -> NodeSpec:
        if endpoint == self.controller:
            return self.nodes[0]
        for n in self.nodes:
            if endpoint in n.lps:
                return n
        raise TransportError(f"no node hosts endpoint {endpoint}")

    def endpoints_of(self, name: str) -> tuple[int, ...]:
        n = self.node_named(name)
        eps = n.lps
        if n is self.nodes[0]:
            eps = eps + (self.controller,)
        return eps


_FRAME_LEN = struct.Struct("<I")
_MAX_FRAME = 16 * 1024 * 1024

_CONNECT_ATTEMPTS = 3
_CONNECT_TIMEOUT = 3.0
_CONNECT_BACKOFF = 0.5  # doubles after each failed attempt


def pick_free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    """Reserve ephemeral ports by binding and releasing them."""
    socks = []
    try:
        for _ in range(count):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class TcpTransport:
    """Full-mesh TCP transport for one node of a distributed run.

    ``start`` brings up the listener, dials every peer with bounded
    retries, and returns once all outbound links exist.  Sends to endpoints
    hosted on this node bypass the network entirely.  Reader threads
    deposit decoded messages into per-endpoint inboxes; errors they hit are
    surfaced on the next ``check_error`` call rather than killing the run
    silently.
    """

    def __init__(self, topology: Topology, node_name: str, payload_codec=None) -> None:
        self.topology = topology
        self.node = topology.node_named(node_name)
        self._codec = payload_codec
        self._local = set(topology.endpoints_of(node_name))
        self._queues: dict[int, deque] = {e: deque() for e in self._local}
        self._lock = threading.Lock()
        self._out: dict[str, socket.socket] = {}
        self._out_locks: dict[str, threading.Lock] = {}
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._closing = threading.Event()
        self._error: Optional[Exception] = None
        self.total_sent = 0
        self.total_delivered = 0

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        self._listen()
        for peer in self.topology.nodes:
            if peer.name != self.node.name:
                self._dial(peer)

    def _listen(self) -> None:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.node.host, self.node.port))
        s.listen(len(self.topology.nodes) + 4)
        s.settimeout(0.2)
        self._listener = s
        t = threading.Thread(target=self._accept_loop, daemon=True,
                             name=f"tw-accept-{self.node.name}")
        t.start()
        self._threads.append(t)

    def _dial(self, peer: NodeSpec) -> None:
        delay = _CONNECT_BACKOFF
        last: Optional[Exception] = None
        for attempt in range(_CONNECT_ATTEMPTS):
            try:
                sock = socket.create_connection(
                    (peer.host, peer.port), timeout=_CONNECT_TIMEOUT
                )
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._out[peer.name] = sock
                self._out_locks[peer.name] = threading.Lock()
                return
            except OSError as exc:
                last = exc
                if attempt + 1 < _CONNECT_ATTEMPTS:
                    time.sleep(delay)
                    delay *= 2
        raise TransportError(
            f"{self.node.name}: cannot reach {peer.name} at "
            f"{peer.host}:{peer.port} after {_CONNECT_ATTEMPTS} attempts: {last}"
        )

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._closing.is_set():
            try:
                conn, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._reader_loop, args=(conn,), daemon=True,
                                 name=f"tw-read-{self.node.name}")
            t.start()
            self._threads.append(t)

    def _reader_loop(self, conn: socket.socket) -> None:
        try:
            while not self._closing.is_set():
                head = _recv_exact(conn, _FRAME_LEN.size)
                if head is None:
                    return
                (n,) = _FRAME_LEN.unpack(head)
                if n > _MAX_FRAME:
                    raise TransportError(f"frame of {n} bytes exceeds limit")
                body = _recv_exact(conn, n)
                if body is None:
                    raise TransportError("connection dropped mid-frame")
                msg = decode_message(body, self._codec)
                self._deposit(msg)
        except Exception as exc:  # surfaced via check_error
            if not self._closing.is_set() and self._error is None:
                self._error = exc
        finally:
            conn.close()

    def _deposit(self, msg: Message) -> None:
        with self._lock:
            q = self._queues.get(msg.lp_receiver)
            if q is None:
                raise TransportError(
                    f"{self.node.name} received message for foreign endpoint "
                    f"{msg.lp_receiver}: {msg!r}"
                )
            q.append(msg)

    # -- data path -----------------------------------------------------

    def send(self, msg: Message) -> None:
        self.total_sent += 1
        if msg.lp_receiver in self._local:
            self._deposit(msg)
            return
        peer = self.topology.node_of(msg.lp_receiver)
        sock = self._out.get(peer.name)
        if sock is None:
            raise TransportError(f"no link to node {peer.name} (not started?)")
        body = encode_message(msg, self._codec)
        frame = _FRAME_LEN.pack(len(body)) + body
        try:
            with self._out_locks[peer.name]:
                sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send to {peer.name} failed: {exc}") from exc

    def receive_batch(self, me: int, max_messages: int) -> list[Message]:
        with self._lock:
            q = self._queues.get(me)
            if q is None:
                raise TransportError(f"endpoint {me} is not hosted on this node")
            out = []
            while q and len(out) < max_messages:
                out.append(q.popleft())
            self.total_delivered += len(out)
            return out

    def check_error(self) -> None:
        if self._error is not None:
            raise TransportError(f"transport failure: {self._error}") from self._error

    def close(self) -> None:
        self._closing.set()
        if self._listener is not None:
            self._listener.close()
        for sock in self._out.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        for t in self._threads:
            t.join(timeout=1.0)
