"""Pipeline stages: acquisition, processing, DSP worker.

Three long-lived threads joined by single-producer single-consumer
queues; no mutable state is shared across a queue boundary. Acquisition
owns the transport and the frame decoder; processing owns reconciliation,
filters, resampler, history rings, tags and epoch service; the worker
does the heavy spectral math off the streaming path.

    acquisition -> processing : decoded packet batches + decoder stats
    acquisition -> controller : connect results, transport loss, anchor
    controller  -> acquisition: connect / device writes
    controller  -> processing : session resets, pause, tag registry
    gateway     -> processing : epoch / band power requests
    processing  -> gateway    : frame batches, stats, request replies
    processing  <-> worker    : band power jobs / results
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import codec, protocol
from .codec import StreamDecoder
from .config import DaemonConfig
from .dsp import (
    EpochExpired,
    EpochPending,
    EpochWindow,
    PolyphaseResampler,
    band_power,
    design_bandpass,
    design_notch,
    extract_epoch,
)
from .spsc import SpscQueue
from .stream import DaisyMerger, Reconciler, RingBuffer, SampleFrame
from .transport import Transport, TransportClosed, TransportUnavailable

log = logging.getLogger(__name__)

READ_CHUNK = 65536
POLL_S = 0.005


@dataclass
class Msg:
    """Tagged message for the stage queues."""

    kind: str
    payload: Any = None


class AcquisitionStage(threading.Thread):
    """Owns the transport: connects, resets, writes commands, decodes.

    The connect ritual matches the board: soft reset, wait for the "$$$"
    banner, then a guard delay before any further command.
    """

    def __init__(
        self,
        factory: Callable[[], Transport],
        clock,
        cfg: DaemonConfig,
        inbox: SpscQueue,
        to_processing: SpscQueue,
        to_controller: SpscQueue,
    ):
        super().__init__(daemon=True, name="acquisition")
        self.factory = factory
        self.clock = clock
        self.cfg = cfg
        self.inbox = inbox
        self.to_processing = to_processing
        self.to_controller = to_controller
        self._stop_evt = threading.Event()
        self._transport: Transport | None = None
        self._decoder = StreamDecoder()
        self._awaiting_anchor = False
        self._packets_since_stats = 0
        self._generation = 0  # bumps on every stream start; tags packet batches

    def stop(self) -> None:
        self._stop_evt.set()

    # -- commands from the controller --

    def _handle(self, msg: Msg) -> None:
        if msg.kind == "connect":
            self._connect()
        elif msg.kind == "write":
            self._write(msg.payload)
        elif msg.kind == "start_stream":
            self._decoder = StreamDecoder()
            self._awaiting_anchor = True
            self._generation += 1
            self._write(codec.encode_command(codec.DeviceCommand.START_STREAM))
        elif msg.kind == "stop_stream":
            self._awaiting_anchor = False
            self._write(codec.encode_command(codec.DeviceCommand.STOP_STREAM))
        elif msg.kind == "close":
            self._close_transport()

    def _connect(self) -> None:
        self._close_transport()
        try:
            transport = self.factory()
        except TransportUnavailable as e:
            self.to_controller.try_push(Msg("connect_failed", str(e)))
            return
        try:
            self._drain(transport)
            transport.write(codec.encode_command(codec.DeviceCommand.SOFT_RESET))
            if not self._await_banner(transport):
                transport.close()
                self.to_controller.try_push(Msg("connect_failed", "no reset banner"))
                return
            self.clock.sleep(self.cfg.guard_delay_s)
        except TransportClosed as e:
            self.to_controller.try_push(Msg("connect_failed", f"lost during reset: {e}"))
            return
        self._transport = transport
        self._decoder = StreamDecoder()
        self.to_controller.try_push(Msg("connected"))

    def _drain(self, transport: Transport) -> None:
        while transport.read(READ_CHUNK, timeout=0.0):
            pass

    def _await_banner(self, transport: Transport) -> bool:
        deadline = self.clock.monotonic() + self.cfg.banner_timeout_s
        seen = b""
        while self.clock.monotonic() < deadline and not self._stop_evt.is_set():
            chunk = transport.read(READ_CHUNK, timeout=POLL_S)
            if chunk:
                seen += chunk
                if codec.BANNER_TERMINATOR in seen:
                    return True
        return False

    def _write(self, data: bytes) -> None:
        if self._transport is None:
            return
        try:
            self._transport.write(data)
        except TransportClosed:
            self._lost()

    def _close_transport(self) -> None:
        if self._transport is not None:
            try:
                self._transport.close()
            except Exception:
                pass
            self._transport = None

    def _lost(self) -> None:
        self._close_transport()
        self.to_controller.try_push(Msg("transport_closed"))

    def _push_stats(self) -> None:
        self.to_processing.try_push(
            Msg("decoder_stats", {
                "discarded_bytes": self._decoder.discarded_bytes,
                "frames_decoded": self._decoder.frames_emitted,
            })
        )

    def run(self) -> None:
        while not self._stop_evt.is_set():
            cmd = self.inbox.try_pop()
            if cmd is None and self._transport is None:
                cmd = self.inbox.pop_wait(POLL_S)
            if cmd is not None:
                self._handle(cmd)
                continue
            if self._transport is None:
                continue
            try:
                data = self._transport.read(READ_CHUNK, timeout=POLL_S)
            except TransportClosed:
                self._lost()
                continue
            if not data:
                continue
            packets = self._decoder.feed(data)
            if not packets:
                continue
            if self._awaiting_anchor:
                self._awaiting_anchor = False
                self.to_controller.try_push(Msg("anchor", self.clock.monotonic()))
            if not self.to_processing.try_push(Msg("packets", (self._generation, packets))):
                # sized for 4 s of stream; only a wedged consumer gets here
                self.to_processing.dropped += len(packets)
                log.error("acquisition queue overflow: dropped %d packets", len(packets))
            self._packets_since_stats += len(packets)
            if self._packets_since_stats >= 25:
                self._packets_since_stats = 0
                self._push_stats()
        self._close_transport()


@dataclass
class PendingEpoch:
    client_id: int
    tag_id: int
    window: EpochWindow
    stream: str


class ProcessingStage(threading.Thread):
    """Reconciles packets into the indexed stream and serves DSP requests.

    Pipeline order per batch: (daisy merge) -> reconcile -> notch ->
    bandpass -> optional 256 Hz resample -> history rings and gateway
    fan-out. Epochs are cut from history on request; band power jobs are
    shipped to the worker stage.
    """

    def __init__(
        self,
        cfg: DaemonConfig,
        from_acquisition: SpscQueue,
        from_controller: SpscQueue,
        from_gateway: SpscQueue,
        from_worker: SpscQueue,
        to_gateway: SpscQueue,
        to_worker: SpscQueue,
    ):
        super().__init__(daemon=True, name="processing")
        self.cfg = cfg
        self.from_acquisition = from_acquisition
        self.from_controller = from_controller
        self.from_gateway = from_gateway
        self.from_worker = from_worker
        self.to_gateway = to_gateway
        self.to_worker = to_worker
        self._stop_evt = threading.Event()
        self._paused = False
        self._session = 0
        self._decoder_stats: dict = {"discarded_bytes": 0, "frames_decoded": 0}
        self._tags: dict[int, int] = {}  # tag_id -> resolved index
        self._pending: list[PendingEpoch] = []
        self._stats_dirty = False
        self._last_stats_push = 0.0
        self._reset_dsp()

    def _reset_dsp(self) -> None:
        scfg = self.cfg.stream
        rate = scfg.effective_rate
        self._merger = DaisyMerger() if scfg.daisy else None
        self._reconciler = Reconciler(scfg)
        self._notch = design_notch(self.cfg.filters.notch_freq, self.cfg.filters.notch_q, rate)
        self._bandpass = design_bandpass(self.cfg.filters, rate)
        self._resampler = (
            PolyphaseResampler(n_channels=scfg.n_channels) if self.cfg.resample else None
        )
        self._resample_index = 0
        history = int(scfg.history_seconds * rate)
        self._raw_ring = RingBuffer(history)
        self._filt_ring = RingBuffer(history)

    def stop(self) -> None:
        self._stop_evt.set()

    @property
    def effective_rate(self) -> float:
        return self.cfg.stream.effective_rate

    # -- control --

    def _control(self, msg: Msg) -> None:
        if msg.kind == "session":
            self._session = msg.payload
            self._tags.clear()
            self._flush_pending("stream restarted")
            self._reset_dsp()
        elif msg.kind == "pause":
            self._paused = True
        elif msg.kind == "resume":
            self._paused = False
        elif msg.kind == "tag":
            tag_id, index = msg.payload
            self._tags[tag_id] = index
        elif msg.kind == "stream_stopped":
            self._flush_pending("stream stopped before window filled")

    def _flush_pending(self, why: str) -> None:
        for p in self._pending:
            self._reply(p.client_id, protocol.error(protocol.E_PENDING, why))
        self._pending.clear()

    # -- data path --

    def _ingest(self, packets: list) -> None:
        if self._merger is not None:
            merged, orphans = self._merger.push(packets)
            if orphans:
                log.debug("daisy orphans: %s", orphans)
            frames, reports = self._reconciler.push(merged)
        else:
            frames, reports = self._reconciler.push(packets)
        if not frames:
            return
        block = np.stack([f.values for f in frames])
        filtered_block = self._bandpass.process(self._notch.process(block))
        filt_frames = [
            SampleFrame(f.index, filtered_block[i], f.interpolated)
            for i, f in enumerate(frames)
        ]
        self._raw_ring.extend(frames)
        self._filt_ring.extend(filt_frames)
        resampled_frames: list[SampleFrame] = []
        if self._resampler is not None:
            out = self._resampler.process(filtered_block)
            for row in out:
                resampled_frames.append(SampleFrame(self._resample_index, row))
                self._resample_index += 1
        if not self._paused:
            self.to_gateway.push_or_drop(Msg("frames", ("raw", frames)))
            self.to_gateway.push_or_drop(Msg("frames", ("filtered", filt_frames)))
            if resampled_frames:
                self.to_gateway.push_or_drop(Msg("frames", ("resampled", resampled_frames)))
        self._stats_dirty = True
        self._retry_pending()

    def stats(self) -> dict:
        s = self._reconciler.stats
        return {
            "session": self._session,
            "packets": s.packets,
            "gaps_interpolated": s.gaps_interpolated,
            "frames_interpolated": s.frames_interpolated,
            "dropouts": s.dropouts,
            "duplicates": s.duplicates,
            "discarded_bytes": self._decoder_stats["discarded_bytes"],
            "next_index": self._reconciler.next_index,
        }

    def _push_stats(self) -> None:
        self.to_gateway.push_or_drop(Msg("stats", self.stats()))
        self._stats_dirty = False

    # -- requests --

    def _request(self, msg: Msg) -> None:
        client_id, req = msg.payload
        if msg.kind == "epoch_request":
            window = EpochWindow(
                float(req.get("window", {}).get("start_ms", 0.0)),
                float(req.get("window", {}).get("end_ms", 800.0)),
            )
            stream = req.get("stream", "raw")
            self._serve_epoch(PendingEpoch(client_id, req["tag_id"], window, stream))
        elif msg.kind == "band_power_request":
            self._serve_band_power(client_id, req)

    def _serve_epoch(self, p: PendingEpoch) -> None:
        if p.tag_id not in self._tags:
            self._reply(p.client_id, protocol.error(
                protocol.E_UNKNOWN_TAG, f"tag {p.tag_id} unknown in this session"))
            return
        ring = self._filt_ring if p.stream == "filtered" else self._raw_ring
        try:
            epoch = extract_epoch(
                ring, self._tags[p.tag_id], p.window, self.effective_rate, tag_id=p.tag_id
            )
        except EpochPending:
            self._pending.append(p)
            return
        except EpochExpired as e:
            self._reply(p.client_id, protocol.error(protocol.E_EXPIRED, str(e)))
            return
        except ValueError as e:
            self._reply(p.client_id, protocol.error(protocol.E_BAD_REQUEST, str(e)))
            return
        rows = [protocol.round_values(row) for row in epoch.data]
        self._reply(p.client_id, protocol.epoch_msg(
            p.tag_id, epoch.start_index, epoch.rate, rows))

    def _retry_pending(self) -> None:
        if not self._pending:
            return
        waiting, self._pending = self._pending, []
        for p in waiting:
            self._serve_epoch(p)

    def _serve_band_power(self, client_id: int, req: dict) -> None:
        window_s = float(req.get("window_s", 2.0))
        channel = int(req.get("channel", 0))
        band = (float(req["band"][0]), float(req["band"][1]))
        rate = self.effective_rate
        n = int(window_s * rate)
        ring = self._filt_ring
        if channel < 0 or channel >= self.cfg.stream.n_channels:
            self._reply(client_id, protocol.error(protocol.E_BAD_REQUEST, "bad channel"))
            return
        if n < rate or len(ring) < n:
            self._reply(client_id, protocol.error(
                protocol.E_BAD_REQUEST,
                f"need {max(n, int(rate))} buffered samples, have {len(ring)}"))
            return
        frames = ring.slice(ring.next_index - n, n)
        samples = np.array([f.values[channel] for f in frames])
        job = Msg("band_power", (client_id, samples, rate, band, channel))
        if not self.to_worker.try_push(job):
            self._reply(client_id, protocol.error(protocol.E_BAD_REQUEST, "worker busy"))

    def _reply(self, client_id: int, message: dict) -> None:
        self.to_gateway.push_or_drop(Msg("reply", (client_id, message)))

    def _from_acquisition(self, item: Msg) -> None:
        if item.kind == "packets":
            generation, packets = item.payload
            if generation > self._session:
                # the matching session message is already queued (it is
                # pushed before the start command that produced this batch)
                for msg in self.from_controller.drain():
                    self._control(msg)
            # a batch from a previous 'b' must not leak into this session
            if generation == self._session:
                self._ingest(packets)
        elif item.kind == "decoder_stats":
            self._decoder_stats = item.payload
            self._stats_dirty = True

    def run(self) -> None:
        while not self._stop_evt.is_set():
            item = self.from_acquisition.pop_wait(POLL_S)
            # apply control strictly before data that may follow it
            for msg in self.from_controller.drain():
                self._control(msg)
            for msg in self.from_gateway.drain():
                self._request(msg)
            for msg in self.from_worker.drain():
                client_id, message = msg.payload
                self._reply(client_id, message)
            if item is not None:
                self._from_acquisition(item)
                for extra in self.from_acquisition.drain(max_items=32):
                    self._from_acquisition(extra)
            if self._stats_dirty:
                self._push_stats()


class WorkerStage(threading.Thread):
    """Heavy spectral computations, off the streaming path."""

    def __init__(self, inbox: SpscQueue, results: SpscQueue):
        super().__init__(daemon=True, name="dsp-worker")
        self.inbox = inbox
        self.results = results
        self._stop_evt = threading.Event()

    def stop(self) -> None:
        self._stop_evt.set()

    def run(self) -> None:
        while not self._stop_evt.is_set():
            job = self.inbox.pop_wait(POLL_S)
            if job is None:
                continue
            if job.kind == "band_power":
                client_id, samples, rate, band, channel = job.payload
                try:
                    value = band_power(samples, rate, band)
                    reply = protocol.band_power_msg(value, list(band), channel)
                except ValueError as e:
                    reply = protocol.error(protocol.E_BAD_REQUEST, str(e))
                self.results.try_push(Msg("reply", (client_id, reply)))
