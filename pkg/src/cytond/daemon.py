"""Daemon lifecycle: state machine, tags, reconnection, stage wiring.

The controller thread owns the authoritative state and the tag registry.
Clients command it through the gateway; the acquisition stage reports
transport events to it. Reconnection after a lost dongle uses exponential
backoff (0.5 s doubling to an 8 s cap, forever) and automatically
restarts the stream if one was running -- the failure mode this guards
against is a dongle that drops on every other start/stop cycle.
"""

from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass
from typing import Callable

from . import protocol
from .clocks import SystemClock
from .config import DaemonConfig
from .dsp import round_half_away
from .gateway import Gateway
from .spsc import SpscQueue
from .stages import AcquisitionStage, Msg, ProcessingStage, WorkerStage
from .transport import Transport

log = logging.getLogger(__name__)


class DaemonState(enum.Enum):
    IDLE = "idle"
    STREAMING = "streaming"
    PAUSED = "paused"
    DEVICE_LOST = "device_lost"


class StateError(Exception):
    """Command not valid in the current state; nothing happened."""


# (state, event) -> (new state, actions); events are command verbs plus
# transport_closed / reconnected
TRANSITIONS: dict[tuple[DaemonState, str], tuple[DaemonState, tuple[str, ...]]] = {
    (DaemonState.IDLE, "start"): (DaemonState.STREAMING, ("new_session", "send_start")),
    (DaemonState.IDLE, "reset"): (DaemonState.IDLE, ("device_reset",)),
    (DaemonState.STREAMING, "pause"): (DaemonState.PAUSED, ("pause_fanout",)),
    (DaemonState.STREAMING, "stop"): (DaemonState.IDLE, ("send_stop", "drop_anchor")),
    (DaemonState.PAUSED, "resume"): (DaemonState.STREAMING, ("resume_fanout",)),
    (DaemonState.PAUSED, "stop"): (DaemonState.IDLE, ("send_stop", "drop_anchor")),
}


def transition(state: DaemonState, event: str) -> tuple[DaemonState, tuple[str, ...]]:
    """Pure transition table lookup; raises StateError on an invalid pair."""
    if event == "transport_closed":
        return DaemonState.DEVICE_LOST, ("begin_reconnect",)
    if event == "reconnected":
        if state is not DaemonState.DEVICE_LOST:
            raise StateError(f"reconnected event in state {state.value}")
        return DaemonState.IDLE, ("maybe_restart",)
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise StateError(f"command '{event}' not valid in state {state.value}") from None


@dataclass
class StimulationTag:
    tag_id: int
    label: str
    client_time: float | int | None
    received_monotonic: float
    resolved_index: int


def resolve_tag(
    received_monotonic: float,
    anchor_monotonic: float,
    rate: float,
    latency_compensation_ms: float = 0.0,
) -> int:
    """Sample index for a tag: daemon arrival time against the stream anchor.

    The client's own timestamp is echoed but never trusted for alignment.
    """
    dt = received_monotonic - anchor_monotonic - latency_compensation_ms / 1000.0
    return max(0, round_half_away(dt * rate))


class Daemon:
    """Wires the stages together and runs the controller loop."""

    def __init__(
        self,
        cfg: DaemonConfig,
        transport_factory: Callable[[], Transport],
        clock=None,
        serve_network: bool = True,
    ):
        self.cfg = cfg
        self.clock = clock if clock is not None else SystemClock()
        self.factory = transport_factory

        rate = cfg.stream.native_rate
        self.q_acq_inbox = SpscQueue(64)
        self.q_acq_to_proc = SpscQueue(max(int(4 * rate), 256))  # 4 s of packets
        self.q_acq_to_ctl = SpscQueue(64)
        self.q_ctl_to_proc = SpscQueue(256)
        self.q_gw_to_proc = SpscQueue(256)
        self.q_proc_to_gw = SpscQueue(1024)
        self.q_ctl_to_gw = SpscQueue(256)
        self.q_gw_to_ctl = SpscQueue(256)
        self.q_api_to_ctl = SpscQueue(64)  # programmatic control (owner thread)
        self.q_proc_to_worker = SpscQueue(64)
        self.q_worker_to_proc = SpscQueue(64)

        self.acquisition = AcquisitionStage(
            transport_factory, self.clock, cfg,
            inbox=self.q_acq_inbox,
            to_processing=self.q_acq_to_proc,
            to_controller=self.q_acq_to_ctl,
        )
        self.processing = ProcessingStage(
            cfg,
            from_acquisition=self.q_acq_to_proc,
            from_controller=self.q_ctl_to_proc,
            from_gateway=self.q_gw_to_proc,
            from_worker=self.q_worker_to_proc,
            to_gateway=self.q_proc_to_gw,
            to_worker=self.q_proc_to_worker,
        )
        self.worker = WorkerStage(self.q_proc_to_worker, self.q_worker_to_proc)
        self.gateway = Gateway(
            cfg, self.clock,
            from_processing=self.q_proc_to_gw,
            from_controller=self.q_ctl_to_gw,
            to_processing=self.q_gw_to_proc,
            to_controller=self.q_gw_to_ctl,
            serve_network=serve_network,
        )

        self.state = DaemonState.IDLE
        self.connected = threading.Event()
        self.stopped = threading.Event()
        self.crashed: list[BaseException] = []
        self.reconnects = 0
        self.session = 0
        self.anchor_monotonic: float | None = None
        self._startup_error: str | None = None
        self._resume_after_reconnect = False
        self._next_tag_id = 1
        self._tags: dict[int, StimulationTag] = {}
        self._reconnect_backoff = cfg.reconnect_initial_s
        self._reconnect_at: float | None = None
        self._connect_inflight = False
        self._controller = threading.Thread(
            target=self._controller_loop, daemon=True, name="controller"
        )

    # -- lifecycle --

    def start(self, connect_timeout: float = 30.0) -> None:
        """Start all stages and perform the initial device connect.

        Raises TransportUnavailable if the first connect fails -- startup
        is fail-fast; automatic reconnection only guards an established
        session. With a VirtualClock, something must be advancing it.
        """
        self.acquisition.start()
        self.processing.start()
        self.worker.start()
        self.gateway.start()
        self._controller.start()
        self.q_acq_inbox.try_push(Msg("connect"))
        if not self.connected.wait(connect_timeout):
            self.stop()
            from .transport import TransportUnavailable

            raise TransportUnavailable("device did not answer its reset banner")
        if self._startup_error is not None:
            err = self._startup_error
            self.stop()
            from .transport import TransportUnavailable

            raise TransportUnavailable(err)

    def stop(self) -> None:
        if self.stopped.is_set():
            return
        self.stopped.set()
        try:
            if self.state in (DaemonState.STREAMING, DaemonState.PAUSED):
                self.q_acq_inbox.try_push(Msg("stop_stream"))
        except Exception:
            pass
        self.gateway.stop()
        self.acquisition.stop()
        self.processing.stop()
        self.worker.stop()
        for t in (self.acquisition, self.processing, self.worker, self._controller):
            t.join(timeout=5)

    # -- controller --

    def _controller_loop(self) -> None:
        try:
            while not self.stopped.is_set():
                msg = self.q_acq_to_ctl.pop_wait(0.002)
                if msg is not None:
                    self._on_acquisition_event(msg)
                for m in self.q_gw_to_ctl.drain():
                    self._on_client_request(m)
                for m in self.q_api_to_ctl.drain():
                    self._on_client_request(m)
                self._check_reconnect_timer()
        except BaseException as e:  # pragma: no cover - crash guard for the soak
            log.exception("controller crashed")
            self.crashed.append(e)

    def _on_acquisition_event(self, msg: Msg) -> None:
        if msg.kind == "connected":
            self._connect_inflight = False
            self._reconnect_backoff = self.cfg.reconnect_initial_s
            if not self.connected.is_set():
                # initial connect; stay Idle
                self.connected.set()
                self._broadcast_state()
            elif self.state is DaemonState.DEVICE_LOST:
                self.reconnects += 1
                self._apply("reconnected")
            else:
                self._broadcast_state()  # ack of an explicit device reset
        elif msg.kind == "connect_failed":
            self._connect_inflight = False
            if not self.connected.is_set():
                self._startup_error = msg.payload or "connect failed"
                self.connected.set()  # unblock start(); it checks the error
            elif self.state is DaemonState.DEVICE_LOST:
                self._schedule_reconnect()
        elif msg.kind == "transport_closed":
            if self.state is not DaemonState.DEVICE_LOST:
                self._apply("transport_closed")
        elif msg.kind == "anchor":
            self.anchor_monotonic = msg.payload

    def _on_client_request(self, msg: Msg) -> None:
        if msg.kind == "command":
            client_id, action = msg.payload
            try:
                self._apply(action)
            except StateError as e:
                if client_id is None:
                    log.warning("command rejected: %s", e)
                else:
                    self._reply(client_id, protocol.error(protocol.E_STATE, str(e)))
                return
            if client_id is not None:
                self._reply_status(client_id)
        elif msg.kind == "tag":
            client_id, label, client_time, stamp = msg.payload
            self._handle_tag(client_id, label, client_time, stamp)

    def _apply(self, event: str) -> None:
        prior = self.state
        new_state, actions = transition(self.state, event)
        self.state = new_state
        for action in actions:
            self._run_action(action, prior)
        self._broadcast_state()

    def _run_action(self, action: str, prior: DaemonState) -> None:
        if action == "new_session":
            self.session += 1
            self.anchor_monotonic = None
            self._tags.clear()
            self.q_ctl_to_proc.try_push(Msg("session", self.session))
        elif action == "send_start":
            self.q_acq_inbox.try_push(Msg("start_stream"))
        elif action == "send_stop":
            self.q_acq_inbox.try_push(Msg("stop_stream"))
            self.q_ctl_to_proc.try_push(Msg("stream_stopped"))
        elif action == "drop_anchor":
            self.anchor_monotonic = None
        elif action == "pause_fanout":
            self.q_ctl_to_proc.try_push(Msg("pause"))
        elif action == "resume_fanout":
            self.q_ctl_to_proc.try_push(Msg("resume"))
        elif action == "device_reset":
            self.q_acq_inbox.try_push(Msg("connect"))
        elif action == "begin_reconnect":
            self._resume_after_reconnect = prior is DaemonState.STREAMING
            self.anchor_monotonic = None
            self.q_ctl_to_proc.try_push(Msg("stream_stopped"))
            self._schedule_reconnect(immediate=True)
        elif action == "maybe_restart":
            if self._resume_after_reconnect:
                self._resume_after_reconnect = False
                self._apply("start")

    def _schedule_reconnect(self, immediate: bool = False) -> None:
        delay = 0.0 if immediate else self._reconnect_backoff
        if not immediate:
            self._reconnect_backoff = min(self._reconnect_backoff * 2, self.cfg.reconnect_max_s)
        self._reconnect_at = self.clock.monotonic() + delay

    def _check_reconnect_timer(self) -> None:
        if self._reconnect_at is None or self._connect_inflight:
            return
        if self.clock.monotonic() >= self._reconnect_at:
            self._reconnect_at = None
            self._connect_inflight = True
            self.q_acq_inbox.try_push(Msg("connect"))

    # -- tags --

    def _handle_tag(self, client_id: int, label: str, client_time, stamp: float) -> None:
        if self.state not in (DaemonState.STREAMING, DaemonState.PAUSED) or self.anchor_monotonic is None:
            self._reply(client_id, protocol.error(
                protocol.E_TAG_REJECTED, f"no active stream anchor in state {self.state.value}"))
            return
        index = resolve_tag(
            stamp, self.anchor_monotonic, self.cfg.stream.effective_rate,
            self.cfg.latency_compensation_ms,
        )
        tag = StimulationTag(self._next_tag_id, label, client_time, stamp, index)
        self._next_tag_id += 1
        self._tags[tag.tag_id] = tag
        self.q_ctl_to_proc.try_push(Msg("tag", (tag.tag_id, index)))
        self._reply(client_id, protocol.tag_ack(tag.tag_id, index, label, client_time))

    # -- gateway plumbing --

    def _reply(self, client_id: int, message: dict) -> None:
        self.q_ctl_to_gw.try_push(Msg("reply", (client_id, message)))

    def _reply_status(self, client_id: int) -> None:
        self.q_ctl_to_gw.try_push(Msg("state", self.state.value))
        self.q_ctl_to_gw.try_push(Msg("status_to", client_id))

    def _broadcast_state(self) -> None:
        self.q_ctl_to_gw.try_push(Msg("state", self.state.value))

    # -- introspection (tests, CLI) --

    def status_snapshot(self) -> dict:
        snap = dict(self.gateway.last_stats)
        snap["state"] = self.state.value
        snap["reconnects"] = self.reconnects
        return snap

    def command(self, action: str) -> None:
        """Programmatic equivalent of a client Command message.

        Asynchronous: the controller applies it; poll ``state`` to observe
        the transition. Invalid commands are dropped with a log line.
        """
        if action not in protocol.ACTIONS:
            raise ValueError(f"unknown action {action}")
        self.q_api_to_ctl.try_push(Msg("command", (None, action)))
