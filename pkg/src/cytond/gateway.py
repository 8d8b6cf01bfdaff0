"""Client gateway: TCP and WebSocket servers speaking the JSON protocol.

One dispatcher thread owns all client state. Reader threads only parse
and timestamp incoming messages; writer threads only drain per-client
outbound queues. A slow client accumulates backlog in its own queue and
is evicted once it lags more than the configured window -- the pipeline
never waits for a socket.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Optional

from . import protocol
from .config import DaemonConfig
from .spsc import SpscQueue
from .stages import Msg

log = logging.getLogger(__name__)

EVICTION_GRACE_S = 5.0  # real seconds a closing client may take to drain
MIN_STALL_S = 1.0       # real seconds of continuous backlog before eviction
MAX_LINE = 1_000_000


class ClientSession:
    """One connected client, transport-agnostic (TCP socket or WebSocket)."""

    _ids = iter(range(1, 1 << 62))

    def __init__(self, kind: str):
        self.id = next(ClientSession._ids)
        self.kind = kind
        self.subscriptions: dict[str, Optional[list[int]]] = {}
        self.outbound: list[tuple[bytes, int]] = []
        self.lock = threading.Condition()
        self.queued_frames = 0
        self.backlog_since: float | None = None  # real time the queue went non-empty
        self.evicted = False
        self.closing = False
        self.close_deadline: float | None = None
        self.gone = False

    # transport hooks --

    def send_raw(self, data: bytes) -> None:
        raise NotImplementedError

    def close_transport(self) -> None:
        raise NotImplementedError

    # dispatcher-side API --

    def enqueue(self, line: bytes, n_frames: int = 0) -> None:
        with self.lock:
            if self.gone or (self.evicted and n_frames > 0):
                return
            if not self.outbound:
                self.backlog_since = time.monotonic()
            self.outbound.append((line, n_frames))
            self.queued_frames += n_frames
            self.lock.notify()

    def backlog_age(self) -> float:
        """Real seconds the outbound queue has been continuously non-empty."""
        with self.lock:
            if not self.outbound or self.backlog_since is None:
                return 0.0
            return time.monotonic() - self.backlog_since

    def begin_close(self, deadline_s: float = EVICTION_GRACE_S) -> None:
        with self.lock:
            self.closing = True
            if self.close_deadline is None:
                self.close_deadline = time.monotonic() + deadline_s
            self.lock.notify()

    def evict(self) -> None:
        """Drop queued data, keep room for a final overflow error."""
        with self.lock:
            self.evicted = True
            kept = [(line, n) for line, n in self.outbound if n == 0]
            self.outbound = kept
            self.queued_frames = 0

    def writer_loop(self) -> None:
        while True:
            with self.lock:
                while not self.outbound and not self.closing and not self.gone:
                    self.lock.wait(0.25)
                if self.gone:
                    return
                if not self.outbound:
                    if self.closing:
                        break
                    continue
                line, n_frames = self.outbound.pop(0)
                self.queued_frames -= n_frames
                if not self.outbound:
                    self.backlog_since = None
            try:
                self.send_raw(line)
            except Exception:
                with self.lock:
                    self.gone = True
                return
        self.close_transport()
        with self.lock:
            self.gone = True


class TcpSession(ClientSession):
    def __init__(self, sock: socket.socket):
        super().__init__("tcp")
        self.sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 32768)

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def close_transport(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class WsSession(ClientSession):
    def __init__(self, conn):
        super().__init__("ws")
        self.conn = conn

    def send_raw(self, data: bytes) -> None:
        # one JSON object per WebSocket text message
        self.conn.send(data.decode("utf-8").rstrip("\n"))

    def close_transport(self) -> None:
        try:
            self.conn.close()
        except Exception:
            pass


class Gateway:
    def __init__(
        self,
        cfg: DaemonConfig,
        clock,
        from_processing: SpscQueue,
        from_controller: SpscQueue,
        to_processing: SpscQueue,
        to_controller: SpscQueue,
        serve_network: bool = True,
    ):
        self.cfg = cfg
        self.clock = clock
        self.from_processing = from_processing
        self.from_controller = from_controller
        self.to_processing = to_processing
        self.to_controller = to_controller
        self.serve_network = serve_network
        self.inbox: queue.Queue = queue.Queue()  # gateway-internal (readers -> dispatcher)
        self.clients: dict[int, ClientSession] = {}
        self.state = "idle"
        self.last_stats: dict = {}
        self._rate_mark: tuple[int, float] | None = None
        self.packet_rate = 0.0
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        self._tcp_server: socket.socket | None = None
        self._ws_server = None
        self.tcp_port: int | None = None
        self.ws_port: int | None = None
        self._pending_batches: dict[tuple[int, str], list] = {}
        self._next_status_at = 0.0

    # -- lifecycle --

    def start(self) -> None:
        dispatcher = threading.Thread(target=self._dispatch_loop, daemon=True, name="gw-dispatch")
        dispatcher.start()
        self._threads.append(dispatcher)
        if not self.serve_network:
            return
        self._start_tcp()
        self._start_ws()

    def stop(self) -> None:
        self._stopping.set()
        if self._tcp_server is not None:
            try:
                self._tcp_server.close()
            except OSError:
                pass
        if self._ws_server is not None:
            try:
                self._ws_server.shutdown()
            except Exception:
                pass
        for c in list(self.clients.values()):
            c.close_transport()
            with c.lock:
                c.gone = True
                c.lock.notify()
        for t in self._threads:
            t.join(timeout=5)

    def _start_tcp(self) -> None:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.cfg.gateway.host, self.cfg.gateway.tcp_port))
        server.listen(16)
        server.settimeout(0.25)  # lets the accept loop notice shutdown
        self._tcp_server = server
        self.tcp_port = server.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, daemon=True, name="gw-accept")
        t.start()
        self._threads.append(t)

    def _start_ws(self) -> None:
        from websockets.sync.server import serve

        ready = threading.Event()

        def run_server() -> None:
            try:
                with serve(self._ws_handler, self.cfg.gateway.host, self.cfg.gateway.ws_port) as server:
                    self._ws_server = server
                    self.ws_port = server.socket.getsockname()[1]
                    ready.set()
                    server.serve_forever()
            except Exception:
                if not self._stopping.is_set():
                    log.exception("websocket server failed")
                ready.set()

        t = threading.Thread(target=run_server, daemon=True, name="gw-ws")
        t.start()
        self._threads.append(t)
        ready.wait(5)

    # -- connection plumbing --

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, _addr = self._tcp_server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)  # sessions use blocking I/O
            session = TcpSession(sock)
            self._register(session)
            reader = threading.Thread(
                target=self._tcp_reader, args=(session,), daemon=True,
                name=f"gw-read-{session.id}",
            )
            reader.start()

    def _register(self, session: ClientSession) -> None:
        writer = threading.Thread(
            target=session.writer_loop, daemon=True, name=f"gw-write-{session.id}"
        )
        writer.start()
        self.inbox.put(("new", session, None, 0.0))

    def _tcp_reader(self, session: TcpSession) -> None:
        # on a protocol error the reader keeps consuming until the writer
        # has flushed the error line and closed the socket (EOF here)
        fh = session.sock.makefile("rb")
        while True:
            try:
                line = fh.readline(MAX_LINE)
            except OSError:
                break
            if not line:
                break
            if len(line) >= MAX_LINE and not line.endswith(b"\n"):
                self.inbox.put(("bad", session, "line too long", 0.0))
                continue
            if line.strip() == b"":
                continue
            self._ingest_line(session, line)

        self.inbox.put(("gone", session, None, 0.0))

    def _ws_handler(self, conn) -> None:
        session = WsSession(conn)
        self._register(session)
        try:
            for message in conn:
                if isinstance(message, bytes):
                    message = message.decode("utf-8", errors="replace")
                if message.strip() == "":
                    continue
                self._ingest_line(session, message)
        except Exception:
            pass
        finally:
            self.inbox.put(("gone", session, None, 0.0))
            # keep the handler alive until the writer finishes its backlog
            deadline = time.monotonic() + EVICTION_GRACE_S
            while time.monotonic() < deadline:
                with session.lock:
                    if session.gone:
                        break
                time.sleep(0.01)

    def _ingest_line(self, session: ClientSession, line) -> None:
        stamp = self.clock.monotonic()  # taken at receipt, before any queueing
        try:
            msg = protocol.validate_client(protocol.decode_line(line))
        except protocol.ProtocolError as e:
            self.inbox.put(("bad", session, str(e), 0.0))
            return
        self.inbox.put(("msg", session, msg, stamp))

    # -- dispatcher --

    def _dispatch_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                busy = self._dispatch_once()
            except Exception:
                # a dispatch bug must not take the daemon down
                log.exception("gateway dispatch error")
                time.sleep(0.01)
                continue
            if not busy:
                time.sleep(0.001)

    def _dispatch_once(self) -> bool:
        busy = False
        for m in self.from_processing.drain(max_items=256):
            busy = True
            self._from_processing(m)
        for m in self.from_controller.drain(max_items=64):
            busy = True
            self._from_controller(m)
        try:
            while True:
                event = self.inbox.get_nowait()
                busy = True
                self._client_event(*event)
        except queue.Empty:
            pass
        self._flush_batches()
        self._tick()
        return busy

    def _from_processing(self, m: Msg) -> None:
        if m.kind == "frames":
            stream, frames = m.payload
            for c in self.clients.values():
                if stream in c.subscriptions and not c.closing:
                    self._pending_batches.setdefault((c.id, stream), []).extend(frames)
        elif m.kind == "stats":
            self.last_stats = m.payload
        elif m.kind == "reply":
            client_id, message = m.payload
            c = self.clients.get(client_id)
            if c is not None:
                c.enqueue(protocol.encode(message))

    def _from_controller(self, m: Msg) -> None:
        if m.kind == "state":
            if m.payload != self.state:
                self.state = m.payload
                self._broadcast_status()
            else:
                self.state = m.payload
        elif m.kind == "reply":
            client_id, message = m.payload
            c = self.clients.get(client_id)
            if c is not None:
                c.enqueue(protocol.encode(message))
        elif m.kind == "status_to":
            c = self.clients.get(m.payload)
            if c is not None:
                c.enqueue(protocol.encode(self._status_message()))

    def _client_event(self, kind: str, session: ClientSession, payload, stamp: float) -> None:
        if kind == "new":
            self.clients[session.id] = session
        elif kind == "gone":
            self._forget(session)
        elif kind == "bad":
            session.enqueue(protocol.encode(protocol.error(protocol.E_PROTOCOL, payload)))
            session.begin_close()
        elif kind == "msg":
            self._client_message(session, payload, stamp)

    def _forget(self, session: ClientSession) -> None:
        self.clients.pop(session.id, None)
        for key in [k for k in self._pending_batches if k[0] == session.id]:
            del self._pending_batches[key]
        with session.lock:
            session.gone = True
            session.lock.notify()
        session.close_transport()

    def _client_message(self, session: ClientSession, msg: dict, stamp: float) -> None:
        if session.closing:
            return
        mtype = msg["type"]
        if mtype == "hello":
            session.enqueue(protocol.encode(protocol.welcome(self._welcome_config())))
        elif mtype == "ping":
            session.enqueue(protocol.encode(protocol.pong()))
        elif mtype == "subscribe":
            channels = msg.get("channels")
            if channels and any(c >= self.cfg.stream.n_channels for c in channels):
                session.enqueue(protocol.encode(protocol.error(
                    protocol.E_BAD_REQUEST,
                    f"channel out of range (device has {self.cfg.stream.n_channels})")))
                return
            session.subscriptions[msg["stream"]] = list(channels) if channels else None
            session.enqueue(protocol.encode(self._status_message()))
        elif mtype == "unsubscribe":
            if "stream" in msg:
                session.subscriptions.pop(msg["stream"], None)
            else:
                session.subscriptions.clear()
            session.enqueue(protocol.encode(self._status_message()))
        elif mtype == "command":
            self.to_controller.push_or_drop(Msg("command", (session.id, msg["action"])))
        elif mtype == "tag":
            self.to_controller.push_or_drop(
                Msg("tag", (session.id, msg["label"], msg.get("client_time"), stamp))
            )
        elif mtype == "request_epoch":
            self.to_processing.push_or_drop(Msg("epoch_request", (session.id, msg)))
        elif mtype == "request_band_power":
            self.to_processing.push_or_drop(Msg("band_power_request", (session.id, msg)))

    # -- outbound --

    def _flush_batches(self) -> None:
        if not self._pending_batches:
            return
        batch_cap = self.cfg.gateway.batch_frames
        lag_frames = int(self.cfg.gateway.max_client_lag_s * self.cfg.stream.effective_rate)
        for (client_id, stream), frames in self._pending_batches.items():
            c = self.clients.get(client_id)
            if c is None or not frames:
                continue
            channels = c.subscriptions.get(stream)
            for i in range(0, len(frames), batch_cap):
                chunk = frames[i : i + batch_cap]
                rows = []
                for f in chunk:
                    vals = f.values if channels is None else f.values[channels]
                    rows.append(protocol.round_values(vals))
                line = protocol.encode(protocol.data(stream, chunk[0].index, rows))
                c.enqueue(line, n_frames=len(chunk))
            # evict on sustained lag only: a queue that is both deeper than
            # the window and has not drained for a while. A burst after a
            # virtual-clock jump clears in milliseconds and must not kill a
            # healthy client.
            if (
                not c.evicted
                and c.queued_frames > lag_frames
                and c.backlog_age() > MIN_STALL_S
            ):
                log.warning("evicting slow client %d (%d frames queued)", c.id, c.queued_frames)
                c.evict()
                c.enqueue(protocol.encode(protocol.error(
                    protocol.E_OVERFLOW,
                    f"client lagged more than {self.cfg.gateway.max_client_lag_s} s")))
                c.begin_close()
        self._pending_batches.clear()

    def _tick(self) -> None:
        now = self.clock.monotonic()
        if now >= self._next_status_at:
            self._next_status_at = now + self.cfg.gateway.status_interval_s
            self._update_rate(now)
            self._broadcast_status()
        real_now = time.monotonic()
        for c in list(self.clients.values()):
            deadline = c.close_deadline
            if deadline is not None and real_now > deadline:
                self._forget(c)

    def _update_rate(self, now: float) -> None:
        packets = self.last_stats.get("packets", 0)
        if self._rate_mark is not None:
            prev_packets, prev_t = self._rate_mark
            dt = now - prev_t
            if dt > 0:
                self.packet_rate = (packets - prev_packets) / dt
        self._rate_mark = (packets, now)

    def _status_message(self) -> dict:
        stats = dict(self.last_stats)
        stats["packet_rate"] = round(self.packet_rate, 3)
        return protocol.status(self.state, stats)

    def _broadcast_status(self) -> None:
        line = protocol.encode(self._status_message())
        for c in self.clients.values():
            if not c.closing:
                c.enqueue(line)

    def _welcome_config(self) -> dict:
        scfg = self.cfg.stream
        fcfg = self.cfg.filters
        return {
            "native_rate": scfg.native_rate,
            "effective_rate": scfg.effective_rate,
            "n_channels": scfg.n_channels,
            "daisy": scfg.daisy,
            "gain": scfg.gain,
            "bandpass": [fcfg.bandpass_low, fcfg.bandpass_high],
            "notch": fcfg.notch_freq if fcfg.notch_freq is not None else "off",
            "resample": self.cfg.resample,
            "resample_rate": 256.0 if self.cfg.resample else None,
            "streams": ["raw", "filtered"] + (["resampled"] if self.cfg.resample else []),
            "batch_frames": self.cfg.gateway.batch_frames,
        }
