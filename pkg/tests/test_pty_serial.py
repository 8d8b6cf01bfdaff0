"""The serial adapter against the simulator behind a pseudo-terminal.

Exercises the exact code path a real dongle would use: open_serial on a
tty device node, raw mode, banner handshake, streaming.
"""

import threading
import time

import pytest

from cytond.clocks import SystemClock
from cytond.codec import BANNER_TERMINATOR, StreamDecoder
from cytond.config import DaemonConfig
from cytond.daemon import Daemon
from cytond.sim import CytonSimulator, SimConfig, Sine, serve_pty
from cytond.transport import open_serial


@pytest.fixture
def pty_sim():
    sim = CytonSimulator(
        SimConfig(waveforms=[Sine(10.0, 80.0)] + [None] * 7), clock=SystemClock()
    )
    stop = threading.Event()
    path, bridge = serve_pty(sim, stop)
    yield sim, path
    stop.set()
    bridge.join(timeout=5)


def test_banner_and_stream_over_pty(pty_sim):
    sim, path = pty_sim
    port = open_serial(path)
    try:
        port.write(b"v")
        deadline = time.monotonic() + 5
        seen = b""
        while time.monotonic() < deadline and BANNER_TERMINATOR not in seen:
            seen += port.read(4096, timeout=0.05)
        assert BANNER_TERMINATOR in seen
        port.write(b"b")
        dec = StreamDecoder()
        packets = []
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and len(packets) < 50:
            packets.extend(dec.feed(port.read(4096, timeout=0.05)))
        port.write(b"s")
        assert len(packets) >= 50
        seqs = [p.seq for p in packets[:50]]
        assert seqs == list(range(seqs[0], seqs[0] + 50))
    finally:
        port.close()


def test_daemon_through_serial_adapter(pty_sim):
    sim, path = pty_sim
    cfg = DaemonConfig()
    cfg.gateway.tcp_port = 0
    cfg.gateway.ws_port = 0
    daemon = Daemon(cfg, lambda: open_serial(path))
    try:
        daemon.start(connect_timeout=10)
        daemon.command("start")
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            if daemon.processing.stats()["packets"] >= 100:
                break
            time.sleep(0.02)
        assert daemon.processing.stats()["packets"] >= 100
        daemon.command("stop")
        deadline = time.monotonic() + 5
        while daemon.state.value != "idle" and time.monotonic() < deadline:
            time.sleep(0.02)
        assert daemon.state.value == "idle"
    finally:
        daemon.stop()
