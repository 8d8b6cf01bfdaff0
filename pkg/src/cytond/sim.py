"""Deterministic Cyton board + dongle simulator.

Presents the same byte transport as real hardware: ASCII commands in,
33-byte frames out. Everything is driven by an injected clock, so tests
replay identical byte streams from (seed, config, command script) and can
run minutes of session time in milliseconds. Fault injection covers
per-packet radio loss (counter still advances, exercising the gap
repair) and scheduled or forced transport disconnections.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .clocks import SystemClock
from .transport import PipeTransport, TransportUnavailable, pipe_pair

BANNER_TEXT = b"OpenBCI V3 Simulator\nOn Board ADS1299 Device ID: 0x3E\nLIS3DH Device ID: 0x33\nFirmware: sim\n$$$"


# --- waveforms ---------------------------------------------------------------


@dataclass
class Sine:
    freq: float
    amp: float
    phase: float = 0.0

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        return self.amp * np.sin(2 * np.pi * self.freq * t + self.phase)


@dataclass
class Pulse:
    """Rectangular pulse train; onset aligned to t = 0 (stream start)."""

    rate: float
    width_ms: float
    amp: float

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        return self.amp if (t % (1.0 / self.rate)) < self.width_ms / 1000.0 else 0.0


@dataclass
class AlphaBurst:
    """10 Hz bursts of ``on_s`` seconds separated by ``off_s`` of silence."""

    on_s: float
    off_s: float
    amp: float
    freq: float = 10.0

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        if (t % (self.on_s + self.off_s)) < self.on_s:
            return self.amp * np.sin(2 * np.pi * self.freq * t)
        return 0.0


@dataclass
class WhiteNoise:
    sigma: float

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        return self.sigma * rng.standard_normal()


@dataclass
class Sum:
    parts: list

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        return sum(p.sample(t, n, ch, rng) for p in self.parts)


class FilePlayback:
    """Looped playback of a headerless raw file.

    Format: 32-bit little-endian floats in microvolts, channel-interleaved
    (frame = one float per channel).
    """

    def __init__(self, path: str, n_channels: int):
        self.path = path
        raw = np.fromfile(path, dtype="<f4")
        if raw.size == 0 or raw.size % n_channels != 0:
            raise ValueError(
                f"{path}: size {raw.size} floats does not divide into {n_channels} channels"
            )
        self.frames = raw.reshape(-1, n_channels).astype(np.float64)

    def sample(self, t: float, n: int, ch: int, rng: np.random.Generator) -> float:
        return float(self.frames[n % len(self.frames), ch])


@dataclass
class SimConfig:
    rate: float = 250.0
    daisy: bool = False
    seed: int = 0
    loss_prob: float = 0.0
    disconnect_schedule: list[tuple[float, float]] = field(default_factory=list)
    waveforms: list | None = None  # one spec per channel, or one for all
    reset_banner_delay_ms: float = 200.0
    gain: int = codec.DEFAULT_GAIN

    def __post_init__(self):
        if not 0 <= self.loss_prob < 1:
            raise ValueError("loss_prob must be in [0, 1)")
        last_end = 0.0
        for at, dur in sorted(self.disconnect_schedule):
            if at < 0 or dur < 0:
                raise ValueError("disconnect times must be non-negative")
            if at < last_end:
                raise ValueError("disconnect windows overlap")
            last_end = at + dur

    @property
    def n_channels(self) -> int:
        return 16 if self.daisy else 8

    def waveform_for(self, ch: int):
        if self.waveforms is None:
            return None
        if isinstance(self.waveforms, (list, tuple)):
            if ch < len(self.waveforms):
                return self.waveforms[ch]
            return None
        return self.waveforms  # single spec for all channels


class CytonSimulator:
    """Event-driven board model; all timing comes from the injected clock.

    Drive it by advancing a VirtualClock (the simulator registers itself
    as a listener) or by calling :meth:`run` against the system clock.
    Commands arrive synchronously through the transport write hook.
    """

    def __init__(self, cfg: SimConfig, clock=None):
        self.cfg = cfg
        self.clock = clock if clock is not None else SystemClock()
        self._lock = threading.RLock()
        self._scale = codec.microvolt_scale(cfg.gain)
        self._rng_noise = np.random.default_rng([cfg.seed, 0])
        self._rng_loss = np.random.default_rng([cfg.seed, 1])
        self._streaming = False
        self._slot = 0  # packet slots since 'b' (also the wrapping counter source)
        self._stream_t0 = 0.0
        self._next_packet_at: float | None = None
        self._banner_at: float | None = None
        self._device_end: PipeTransport | None = None
        self._epoch = self.clock.monotonic()  # schedule times are relative to this
        self._windows = [(self._epoch + at, self._epoch + at + dur) for at, dur in cfg.disconnect_schedule]
        self._windows.sort()
        self._pending_window: tuple[float, float] | None = None
        self.packets_emitted = 0
        self.packets_lost = 0
        self.disconnects = 0
        self.emit_hook = None  # called as emit_hook(slot, due_time) after each frame write
        if hasattr(self.clock, "on_advance"):
            self.clock.on_advance(self.pump)

    # -- transport lifecycle --

    def attach(self) -> PipeTransport:
        """Connect the host: returns the daemon-side transport endpoint.

        Raises TransportUnavailable inside a disconnect window (the dongle
        is "unplugged") or when a host is already attached.
        """
        with self._lock:
            now = self.clock.monotonic()
            self._sweep_windows(now)
            for start, end in self._windows:
                if start <= now < end:
                    raise TransportUnavailable("dongle disconnected")
            if self._device_end is not None and not self._device_end.closed:
                raise TransportUnavailable("already attached")
            device_end, daemon_end = pipe_pair()
            daemon_end.on_write = self._on_host_write
            self._device_end = device_end
            return daemon_end

    def force_disconnect(self, duration_s: float) -> None:
        """Sever the transport now, refusing reattachment for ``duration_s``."""
        with self._lock:
            now = self.clock.monotonic()
            self._windows.append((now, now + duration_s))
            self._windows.sort()
            self._drop_attachment()

    def _drop_attachment(self) -> None:
        if self._device_end is not None:
            self._device_end.close()
            self._device_end = None
            self.disconnects += 1

    def _sweep_windows(self, now: float) -> None:
        self._windows = [(s, e) for s, e in self._windows if e > now or s <= now < e]

    # -- command handling (synchronous on the writer's thread) --

    def _on_host_write(self, data: bytes) -> None:
        with self._lock:
            now = self.clock.monotonic()
            for b in data:
                self._command(bytes([b]), now)

    def _command(self, c: bytes, now: float) -> None:
        if c == codec.DeviceCommand.SOFT_RESET.value:
            self._streaming = False
            self._next_packet_at = None
            self._banner_at = now + self.cfg.reset_banner_delay_ms / 1000.0
        elif c == codec.DeviceCommand.START_STREAM.value:
            if not self._streaming:
                self._streaming = True
                self._slot = 0
                self._stream_t0 = now
                self._next_packet_at = now + 1.0 / self.cfg.rate
        elif c == codec.DeviceCommand.STOP_STREAM.value:
            self._streaming = False
            self._next_packet_at = None
        elif c == codec.DeviceCommand.QUERY_DAISY.value:
            self._write(b"16$$$" if self.cfg.daisy else b"8$$$")
        # anything else: a real board stays silent

    # -- time processing --

    def pump(self, now: float) -> None:
        """Fire everything due at or before ``now``, in chronological order."""
        with self._lock:
            while True:
                events: list[tuple[float, str]] = []
                if self._banner_at is not None:
                    events.append((self._banner_at, "banner"))
                if self._streaming and self._next_packet_at is not None:
                    events.append((self._next_packet_at, "packet"))
                for start, end in self._windows:
                    if self._device_end is not None and start <= now:
                        events.append((start, "disconnect"))
                        break
                if not events:
                    break
                t, kind = min(events)
                if t > now:
                    break
                if kind == "banner":
                    self._banner_at = None
                    self._write(BANNER_TEXT)
                elif kind == "disconnect":
                    self._drop_attachment()
                elif kind == "packet":
                    due = self._next_packet_at
                    self._emit_frame(due)
                    # slot-indexed, not accumulated: no drift over long runs
                    self._next_packet_at = self._stream_t0 + (self._slot + 1) / self.cfg.rate

    def _emit_frame(self, due: float) -> None:
        n = self._slot
        self._slot += 1
        t = n / self.cfg.rate  # waveform time, anchored at stream start
        if self.cfg.daisy:
            lower = n % 2 == 0
            ch_base = 0 if lower else 8
        else:
            ch_base = 0
        uv = np.empty(8)
        for i in range(8):
            wf = self.cfg.waveform_for(ch_base + i)
            uv[i] = 0.0 if wf is None else wf.sample(t, n, ch_base + i, self._rng_noise)
        lost = self.cfg.loss_prob > 0 and self._rng_loss.random() < self.cfg.loss_prob
        if lost:
            self.packets_lost += 1
            return
        counts = tuple(codec.microvolts_to_counts(v, self.cfg.gain) for v in uv)
        frame = codec.encode_packet(codec.RawPacket(seq=n % 256, channels=counts))
        self._write(frame)
        self.packets_emitted += 1
        if self.emit_hook is not None:
            self.emit_hook(n, due)

    def _write(self, data: bytes) -> None:
        if self._device_end is None:
            return  # radio transmitting into the void
        try:
            self._device_end.write(data)
        except Exception:
            self._device_end = None

    @property
    def streaming(self) -> bool:
        return self._streaming

    # -- real-time operation --

    def run(self, stop_event: threading.Event, interval: float = 0.002) -> None:
        """Pump against the clock until ``stop_event`` is set.

        With the default SystemClock this is real-time device behaviour;
        commands still arrive via the transport write hook.
        """
        while not stop_event.is_set():
            self.pump(self.clock.monotonic())
            stop_event.wait(interval)
        # leave attachment state as-is; owner decides when to close


def serve_pty(sim: CytonSimulator, stop_event: threading.Event) -> tuple[str, threading.Thread]:
    """Expose the simulator as a pseudo-terminal device.

    Returns the slave path (open it like a serial port) and the bridge
    thread. The bridge pumps the simulator in real time and shuttles
    bytes between the pty master and the simulator's pipe transport.
    """
    import os

    master, slave = os.openpty()
    os.set_blocking(master, False)
    daemon_end = sim.attach()

    def bridge() -> None:
        pending = b""
        try:
            while not stop_event.is_set():
                sim.pump(sim.clock.monotonic())
                try:
                    data = os.read(master, 4096)
                    if data:
                        daemon_end.write(data)
                except BlockingIOError:
                    pass
                except OSError:
                    break
                try:
                    pending += daemon_end.read(65536, timeout=0.002)
                except Exception:
                    break
                if pending:
                    try:
                        n = os.write(master, pending)
                        pending = pending[n:]
                    except BlockingIOError:
                        pass
                    except OSError:
                        break
        finally:
            try:
                os.close(master)
            except OSError:
                pass

    t = threading.Thread(target=bridge, daemon=True, name="sim-pty-bridge")
    t.start()
    return os.ttyname(slave), t
