"""Minimal topic-based publish/subscribe middleware.

Two interchangeable transports:

- ``InProcessBus``: all nodes in one process, delivery into per-subscription
  queues under a single lock.
- ``Broker`` + ``TcpBusClient``: a star topology where one hub process routes
  every envelope between TCP clients.

Both transports speak the same envelope model and are observationally
equivalent in lossless mode: the same publish sequence produces the same
delivery sequence.

Wire framing (big-endian throughout):

    [u32 body length][u16 topic length][topic utf-8][u64 seq][u64 timestamp_ns][payload]

The body length counts everything after the 4-byte prefix. Frames are capped
at 16 MiB. Subscribe/unsubscribe requests ride the same framing on reserved
``$ctl/...`` topics that the broker consumes and never routes.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")
_BODY_FIXED = struct.Struct(">H")  # topic length; seq/timestamp packed after topic
_SEQ_TS = struct.Struct(">QQ")

CTL_SUBSCRIBE = "$ctl/subscribe"
CTL_UNSUBSCRIBE = "$ctl/unsubscribe"


class BusError(Exception):
    """Transport-level failure (disconnected, bind failure, bad QoS)."""


class EnvelopeDecodeError(BusError):
    """A frame failed to decode; the message names the offending field."""


@dataclass(frozen=True)
class Envelope:
    """One routed message: topic, per-publisher sequence, scenario-clock time, payload."""

    topic: str
    seq: int
    timestamp_ns: int
    payload: bytes

    def validate(self) -> None:
        if not self.topic:
            raise BusError("topic: must be non-empty")
        if any(ord(c) < 0x20 or ord(c) == 0x7F for c in self.topic):
            raise BusError("topic: control characters not allowed")
        if not (0 <= self.seq < 2**64):
            raise BusError("seq: out of unsigned 64-bit range")
        if not (0 <= self.timestamp_ns < 2**64):
            raise BusError("timestamp_ns: out of unsigned 64-bit range")


@dataclass(frozen=True)
class TopicQos:
    """Delivery policy for one subscription.

    ``keep_last`` bounds the undelivered backlog to ``depth`` envelopes per
    topic (oldest dropped); ``lossless`` never drops.
    """

    mode: str = "lossless"
    depth: int = 1

    def __post_init__(self):
        if self.mode not in ("keep_last", "lossless"):
            raise BusError(f"qos mode: unknown mode {self.mode!r}")
        if self.mode == "keep_last" and self.depth < 1:
            raise BusError("qos depth: keep_last depth must be >= 1")

    @property
    def maxlen(self) -> int | None:
        return self.depth if self.mode == "keep_last" else None


KEEP_LAST_1 = TopicQos("keep_last", 1)
LOSSLESS = TopicQos("lossless")


def encode_envelope(env: Envelope) -> bytes:
    """Serialize an envelope to one length-prefixed frame."""
    env.validate()
    topic_bytes = env.topic.encode("utf-8")
    if len(topic_bytes) > 0xFFFF:
        raise BusError("topic: longer than 65535 bytes")
    body_len = _BODY_FIXED.size + len(topic_bytes) + _SEQ_TS.size + len(env.payload)
    if body_len > MAX_FRAME_BYTES:
        raise BusError(f"frame: body {body_len} exceeds {MAX_FRAME_BYTES} bytes")
    return b"".join(
        (
            _HEADER.pack(body_len),
            _BODY_FIXED.pack(len(topic_bytes)),
            topic_bytes,
            _SEQ_TS.pack(env.seq, env.timestamp_ns),
            env.payload,
        )
    )


def decode_envelope(frame: bytes) -> Envelope:
    """Parse one full frame (including the 4-byte prefix) back to an Envelope.

    Raises EnvelopeDecodeError naming the offending field on any malformed
    input; never raises anything else regardless of the byte string.
    """
    if len(frame) < _HEADER.size:
        raise EnvelopeDecodeError("frame: truncated before length prefix")
    (body_len,) = _HEADER.unpack_from(frame, 0)
    if body_len > MAX_FRAME_BYTES:
        raise EnvelopeDecodeError(f"frame: declared body {body_len} exceeds {MAX_FRAME_BYTES} bytes")
    if len(frame) != _HEADER.size + body_len:
        raise EnvelopeDecodeError(
            f"frame: declared body {body_len} bytes but got {len(frame) - _HEADER.size}"
        )
    off = _HEADER.size
    if body_len < _BODY_FIXED.size:
        raise EnvelopeDecodeError("topic: truncated topic length")
    (topic_len,) = _BODY_FIXED.unpack_from(frame, off)
    off += _BODY_FIXED.size
    if body_len < _BODY_FIXED.size + topic_len + _SEQ_TS.size:
        raise EnvelopeDecodeError("frame: body too short for declared topic length")
    try:
        topic = frame[off : off + topic_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EnvelopeDecodeError(f"topic: invalid UTF-8 ({exc.reason})") from exc
    off += topic_len
    seq, timestamp_ns = _SEQ_TS.unpack_from(frame, off)
    off += _SEQ_TS.size
    env = Envelope(topic=topic, seq=seq, timestamp_ns=timestamp_ns, payload=frame[off:])
    try:
        env.validate()
    except BusError as exc:
        raise EnvelopeDecodeError(str(exc)) from exc
    return env


class SubscriptionHandle:
    """Receiving end of one subscription. Delivers envelopes serially."""

    def __init__(self, topic: str, qos: TopicQos, on_close=None):
        self.topic = topic
        self.qos = qos
        self._queue: deque[Envelope] = deque(maxlen=qos.maxlen)
        self._cond = threading.Condition()
        self._closed = False
        self._on_close = on_close

    def _push(self, env: Envelope) -> None:
        with self._cond:
            if self._closed:
                return
            self._queue.append(env)  # deque maxlen enforces the keep-last bound
            self._cond.notify()

    def receive(self, timeout: float | None = None) -> Envelope | None:
        """Next envelope in delivery order; None on timeout or after close."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                if self._closed:
                    return None
                if deadline is None:
                    self._cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return None
                    self._cond.wait(remaining)
            return self._queue.popleft()

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        with self._cond:
            if self._closed:
                return
            self._closed = True
            self._queue.clear()
            self._cond.notify_all()
        if self._on_close is not None:
            self._on_close(self)

    def __iter__(self):
        while True:
            env = self.receive()
            if env is None:
                return
            yield env


class _TopicState:
    __slots__ = ("retained", "subscribers")

    def __init__(self):
        self.retained: Envelope | None = None
        self.subscribers: list = []


class InProcessBus:
    """Single-process transport. Create one bus, then one client per node."""

    def __init__(self):
        self._lock = threading.Lock()
        self._topics: dict[str, _TopicState] = {}

    def client(self) -> "InProcessClient":
        return InProcessClient(self)

    def _topic(self, name: str) -> _TopicState:
        state = self._topics.get(name)
        if state is None:
            state = self._topics[name] = _TopicState()
        return state

    def _route(self, env: Envelope) -> None:
        with self._lock:
            state = self._topic(env.topic)
            state.retained = env
            subs = list(state.subscribers)
        for sub in subs:
            sub._push(env)

    def _subscribe(self, topic: str, qos: TopicQos) -> SubscriptionHandle:
        with self._lock:
            state = self._topic(topic)
            handle = SubscriptionHandle(topic, qos, on_close=self._drop)
            retained = state.retained
            state.subscribers.append(handle)
        if retained is not None:
            handle._push(retained)
        return handle

    def _drop(self, handle: SubscriptionHandle) -> None:
        with self._lock:
            state = self._topics.get(handle.topic)
            if state is not None and handle in state.subscribers:
                state.subscribers.remove(handle)


class InProcessClient:
    """One node's handle on an InProcessBus; owns its per-topic seq counters."""

    def __init__(self, bus: InProcessBus):
        self._bus = bus
        self._seq: dict[str, int] = {}
        self._lock = threading.Lock()
        self._closed = False

    def publish(self, topic: str, payload: bytes, timestamp_ns: int) -> Envelope:
        if self._closed:
            raise BusError("publish: client closed")
        with self._lock:
            seq = self._seq.get(topic, 0)
            env = Envelope(topic=topic, seq=seq, timestamp_ns=timestamp_ns, payload=bytes(payload))
            env.validate()
            self._bus._route(env)
            self._seq[topic] = seq + 1
        return env

    def subscribe(self, topic: str, qos: TopicQos = LOSSLESS) -> SubscriptionHandle:
        if self._closed:
            raise BusError("subscribe: client closed")
        return self._bus._subscribe(topic, qos)

    def close(self) -> None:
        self._closed = True


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if remaining == n:
                return None
            raise EnvelopeDecodeError("frame: connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> Envelope | None:
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    (body_len,) = _HEADER.unpack(header)
    if body_len > MAX_FRAME_BYTES:
        raise EnvelopeDecodeError(f"frame: declared body {body_len} exceeds {MAX_FRAME_BYTES} bytes")
    body = _recv_exact(sock, body_len)
    if body is None:
        raise EnvelopeDecodeError("frame: connection closed mid-frame")
    return decode_envelope(header + body)


class _BrokerConnection:
    """Broker-side state for one client socket."""

    def __init__(self, sock: socket.socket, peer):
        self.sock = sock
        self.peer = peer
        # topic -> (qos, deque); deque maxlen enforces the keep-last bound
        self.queues: dict[str, tuple[TopicQos, deque]] = {}
        self.order: list[str] = []
        self.cond = threading.Condition()
        self.alive = True

    def enqueue(self, env: Envelope) -> None:
        with self.cond:
            entry = self.queues.get(env.topic)
            if entry is None or not self.alive:
                return
            entry[1].append(env)
            self.cond.notify()

    def stop(self) -> None:
        with self.cond:
            self.alive = False
            self.cond.notify_all()


class Broker:
    """Hub process routing every envelope to the current subscribers of its topic."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as exc:
            self._listener.close()
            raise BusError(f"broker: cannot bind {host}:{port}: {exc}") from exc
        self._listener.listen(64)
        self.host, self.port = self._listener.getsockname()[:2]
        self._lock = threading.Lock()
        self._connections: list[_BrokerConnection] = []
        self._subscribers: dict[str, list[_BrokerConnection]] = {}
        self._retained: dict[str, Envelope] = {}
        self._running = False
        self._accept_thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "Broker":
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True, name="broker-accept")
        self._accept_thread.start()
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            while self._running:
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._connections)
        for conn in conns:
            self._disconnect(conn)

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _BrokerConnection(sock, peer)
            with self._lock:
                self._connections.append(conn)
            threading.Thread(target=self._reader_loop, args=(conn,), daemon=True).start()
            threading.Thread(target=self._writer_loop, args=(conn,), daemon=True).start()

    def _reader_loop(self, conn: _BrokerConnection) -> None:
        try:
            while True:
                env = _read_frame(conn.sock)
                if env is None:
                    break
                if env.topic == CTL_SUBSCRIBE:
                    self._handle_subscribe(conn, env.payload)
                elif env.topic == CTL_UNSUBSCRIBE:
                    self._handle_unsubscribe(conn, env.payload)
                else:
                    self._route(env)
        except (EnvelopeDecodeError, BusError, OSError):
            pass  # malformed frame or dead socket: drop this client, keep serving
        finally:
            self._disconnect(conn)

    def _writer_loop(self, conn: _BrokerConnection) -> None:
        try:
            while True:
                env = None
                with conn.cond:
                    while conn.alive:
                        for topic in conn.order:
                            entry = conn.queues.get(topic)
                            if entry and entry[1]:
                                env = entry[1].popleft()
                                break
                        if env is not None:
                            break
                        conn.cond.wait()
                    if env is None:
                        return
                conn.sock.sendall(encode_envelope(env))
        except (OSError, BusError):
            self._disconnect(conn)

    def _handle_subscribe(self, conn: _BrokerConnection, payload: bytes) -> None:
        try:
            req = json.loads(payload.decode("utf-8"))
            qos = TopicQos(req.get("mode", "lossless"), int(req.get("depth", 1)))
            topic = str(req["topic"])
        except (ValueError, KeyError, BusError):
            raise EnvelopeDecodeError("subscribe: malformed control payload")
        with self._lock:
            retained = self._retained.get(topic)
            with conn.cond:
                if topic not in conn.queues:
                    conn.queues[topic] = (qos, deque(maxlen=qos.maxlen))
                    conn.order.append(topic)
            self._subscribers.setdefault(topic, [])
            if conn not in self._subscribers[topic]:
                self._subscribers[topic].append(conn)
        if retained is not None:
            conn.enqueue(retained)

    def _handle_unsubscribe(self, conn: _BrokerConnection, payload: bytes) -> None:
        try:
            topic = str(json.loads(payload.decode("utf-8"))["topic"])
        except (ValueError, KeyError):
            raise EnvelopeDecodeError("unsubscribe: malformed control payload")
        with self._lock:
            subs = self._subscribers.get(topic, [])
            if conn in subs:
                subs.remove(conn)
        with conn.cond:
            conn.queues.pop(topic, None)
            if topic in conn.order:
                conn.order.remove(topic)

    def _route(self, env: Envelope) -> None:
        with self._lock:
            self._retained[env.topic] = env
            targets = list(self._subscribers.get(env.topic, ()))
        for conn in targets:
            conn.enqueue(env)

    def _disconnect(self, conn: _BrokerConnection) -> None:
        with self._lock:
            if conn in self._connections:
                self._connections.remove(conn)
            for subs in self._subscribers.values():
                if conn in subs:
                    subs.remove(conn)
        conn.stop()
        try:
            conn.sock.close()
        except OSError:
            pass


def serve_broker(listen_address: str) -> Broker:
    """Bind and start a broker; address is "host:port"."""
    host, port = parse_address(listen_address)
    return Broker(host, port).start()


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise BusError(f"address: expected host:port, got {address!r}")
    try:
        return host, int(port)
    except ValueError:
        raise BusError(f"address: invalid port in {address!r}")


class TcpBusClient:
    """Client endpoint of the broker transport.

    Publishing is thread-safe; each SubscriptionHandle delivers serially to
    its consumer. Connection attempts retry with bounded backoff.
    """

    def __init__(self, address: str, connect_attempts: int = 6, backoff_s: float = 0.1):
        host, port = parse_address(address)
        last_error = None
        self._sock = None
        for attempt in range(connect_attempts):
            try:
                self._sock = socket.create_connection((host, port), timeout=5.0)
                break
            except OSError as exc:
                last_error = exc
                time.sleep(backoff_s * (2**attempt))
        if self._sock is None:
            raise BusError(f"connect: broker unreachable at {address}: {last_error}")
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()
        self._seq: dict[str, int] = {}
        self._subs: dict[str, list[SubscriptionHandle]] = {}
        self._subs_lock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._reader_loop, daemon=True, name="bus-client-reader")
        self._reader.start()

    def _reader_loop(self) -> None:
        try:
            while True:
                env = _read_frame(self._sock)
                if env is None:
                    break
                with self._subs_lock:
                    handles = list(self._subs.get(env.topic, ()))
                for handle in handles:
                    handle._push(env)
        except (EnvelopeDecodeError, BusError, OSError):
            pass
        finally:
            self._shutdown_subs()

    def _shutdown_subs(self) -> None:
        with self._subs_lock:
            handles = [h for hs in self._subs.values() for h in hs]
            self._subs.clear()
        for handle in handles:
            handle.close()

    def _send(self, env: Envelope) -> None:
        frame = encode_envelope(env)
        with self._send_lock:
            self._send_frame_locked(frame)

    def _send_frame_locked(self, frame: bytes) -> None:
        if self._closed:
            raise BusError("publish: client closed")
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise BusError(f"publish: transport disconnected: {exc}") from exc

    def publish(self, topic: str, payload: bytes, timestamp_ns: int) -> Envelope:
        # seq assignment and send share one critical section so concurrent
        # publishers cannot reorder a topic's per-publisher sequence
        with self._send_lock:
            seq = self._seq.get(topic, 0)
            env = Envelope(topic=topic, seq=seq, timestamp_ns=timestamp_ns, payload=bytes(payload))
            frame = encode_envelope(env)
            self._send_frame_locked(frame)
            self._seq[topic] = seq + 1
        return env

    def subscribe(self, topic: str, qos: TopicQos = LOSSLESS) -> SubscriptionHandle:
        if self._closed:
            raise BusError("subscribe: client closed")
        handle = SubscriptionHandle(topic, qos, on_close=self._unsubscribe)
        with self._subs_lock:
            self._subs.setdefault(topic, []).append(handle)
        request = json.dumps({"topic": topic, "mode": qos.mode, "depth": qos.depth}).encode()
        self._send(Envelope(topic=CTL_SUBSCRIBE, seq=0, timestamp_ns=0, payload=request))
        return handle

    def _unsubscribe(self, handle: SubscriptionHandle) -> None:
        with self._subs_lock:
            handles = self._subs.get(handle.topic, [])
            if handle in handles:
                handles.remove(handle)
            still_subscribed = bool(handles)
        if not still_subscribed and not self._closed:
            try:
                request = json.dumps({"topic": handle.topic}).encode()
                self._send(Envelope(topic=CTL_UNSUBSCRIBE, seq=0, timestamp_ns=0, payload=request))
            except BusError:
                pass

    def close(self) -> None:
        with self._send_lock:
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
