"""Shared harness: simulated daemon sessions and a line-based test client."""

from __future__ import annotations

import json
import socket
import time

import pytest

from cytond.clocks import ClockPump, VirtualClock
from cytond.config import DaemonConfig
from cytond.daemon import Daemon
from cytond.sim import CytonSimulator, SimConfig


class Harness:
    """Simulator + daemon on one VirtualClock, gateway on ephemeral ports."""

    def __init__(self, sim_cfg: SimConfig, daemon_cfg: DaemonConfig):
        self.clock = VirtualClock()
        self.sim = CytonSimulator(sim_cfg, clock=self.clock)
        self.cfg = daemon_cfg
        self.cfg.gateway.tcp_port = 0
        self.cfg.gateway.ws_port = 0
        self.daemon = Daemon(self.cfg, self.sim.attach, clock=self.clock)
        self.pump: ClockPump | None = None
        self._clients: list[LineClient] = []

    def start(self, pump_speed: float = 50.0, pump_step: float = 0.004) -> "Harness":
        # connect needs banner + guard delays, so time must be flowing
        self.start_pump(speed=pump_speed, step=pump_step)
        self.daemon.start(connect_timeout=20)
        return self

    def start_pump(self, speed: float = 50.0, step: float = 0.004) -> None:
        if self.pump is None:
            self.pump = ClockPump(self.clock, speed=speed, step=step)
            self.pump.start()

    def stop_pump(self) -> None:
        if self.pump is not None:
            self.pump.stop()
            self.pump = None

    def connect(self, timeout: float = 5.0) -> "LineClient":
        client = LineClient("127.0.0.1", self.daemon.gateway.tcp_port, timeout)
        self._clients.append(client)
        return client

    def wait_for(self, predicate, timeout: float = 10.0, what: str = "condition") -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if predicate():
                return
            time.sleep(0.002)
        raise TimeoutError(f"timed out waiting for {what}")

    def wait_state(self, state: str, timeout: float = 10.0) -> None:
        self.wait_for(lambda: self.daemon.state.value == state, timeout, f"state {state}")

    def packets(self) -> int:
        return self.daemon.processing.stats()["packets"]

    def close(self) -> None:
        for c in self._clients:
            c.close()
        self.daemon.stop()
        self.stop_pump()


class LineClient:
    """Blocking newline-delimited JSON client for tests."""

    def __init__(self, host: str, port: int, timeout: float = 5.0, rcvbuf: int | None = None):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        if rcvbuf is not None:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        self.sock.settimeout(timeout)
        self.sock.connect((host, port))
        self.fh = self.sock.makefile("rb")

    def send(self, msg: dict) -> None:
        self.sock.sendall(json.dumps(msg).encode() + b"\n")

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self) -> dict | None:
        line = self.fh.readline()
        if not line:
            return None
        return json.loads(line)

    def recv_type(self, mtype: str, skip: tuple = ("status", "data"), timeout: float = 10.0):
        """Next message of ``mtype``, skipping the chatter types in ``skip``."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            msg = self.recv()
            if msg is None:
                raise ConnectionError("server closed the connection")
            if msg["type"] == mtype:
                return msg
            if msg["type"] == "error" and mtype != "error":
                raise AssertionError(f"got error instead of {mtype}: {msg}")
            if msg["type"] not in skip:
                raise AssertionError(f"unexpected {msg['type']} while waiting for {mtype}")
        raise TimeoutError(f"no {mtype} within {timeout} s")

    EXPECTED_STATE = {"start": "streaming", "stop": "idle", "pause": "paused",
                      "resume": "streaming", "reset": "idle"}

    def command(self, action: str, timeout: float = 10.0) -> dict:
        """Send a command and wait for a status reflecting its new state.

        Stale periodic status broadcasts may precede the ack; skip them.
        """
        expect = self.EXPECTED_STATE[action]
        self.send({"type": "command", "action": action})
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            msg = self.recv()
            if msg is None:
                raise ConnectionError("server closed the connection")
            if msg["type"] == "error":
                raise AssertionError(f"command {action} rejected: {msg}")
            if msg["type"] == "status" and msg["state"] == expect:
                return msg
        raise TimeoutError(f"no status with state={expect} after {action}")

    def drain_frames(self, stream: str, n: int, timeout: float = 30.0) -> list[tuple[int, list]]:
        """Collect (index, values) pairs from Data messages until n frames."""
        out: list[tuple[int, list]] = []
        deadline = time.monotonic() + timeout
        while len(out) < n:
            if time.monotonic() > deadline:
                raise TimeoutError(f"only {len(out)}/{n} frames")
            msg = self.recv()
            if msg is None:
                raise ConnectionError("server closed the connection")
            if msg["type"] == "data" and msg["stream"] == stream:
                for i, values in enumerate(msg["frames"]):
                    out.append((msg["first_index"] + i, values))
        return out[:n]

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


@pytest.fixture
def harness():
    """Default 8-channel silent simulator, started, torn down after."""
    made: list[Harness] = []

    def build(sim_cfg: SimConfig | None = None, daemon_cfg: DaemonConfig | None = None,
              start: bool = True, **pump_kw) -> Harness:
        h = Harness(sim_cfg or SimConfig(), daemon_cfg or DaemonConfig())
        made.append(h)
        if start:
            h.start(**pump_kw)
        return h

    yield build
    for h in made:
        h.close()
