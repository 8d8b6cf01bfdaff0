"""Signal path: filters, 250->256 Hz resampling, band power, heart rate,
and tag-locked epoch extraction.

Filters are biquad cascades applied causally with per-channel state, so
block boundaries are invisible. The resampler is a streaming polyphase
windowed-sinc at the fixed rational ratio 128/125 -- bounded latency,
exact chunking invariance, and an output count that never strays more
than one sample from in_count * 128/125.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sig

from .stream import RingBuffer


def round_half_away(x: float) -> int:
    """round() with halves away from zero (Python's round is banker's)."""
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


@dataclass
class FilterSpec:
    bandpass_low: float = 1.0
    bandpass_high: float = 50.0
    notch_freq: float | None = 60.0  # 50, 60 or None (off)
    notch_q: float = 30.0
    order: int = 4

    def __post_init__(self):
        if self.notch_freq is not None and self.notch_freq not in (50.0, 60.0):
            raise ValueError("notch_freq must be 50, 60 or None")
        if not 0 < self.bandpass_low < self.bandpass_high:
            raise ValueError("need 0 < bandpass_low < bandpass_high")
        if self.order < 1:
            raise ValueError("order must be >= 1")

    def validate_rate(self, rate: float) -> None:
        nyquist = rate / 2
        if self.bandpass_high >= nyquist:
            raise ValueError(f"bandpass_high {self.bandpass_high} >= Nyquist {nyquist}")
        if self.notch_freq is not None and self.notch_freq >= nyquist:
            raise ValueError(f"notch_freq {self.notch_freq} >= Nyquist {nyquist}")


class BiquadCascade:
    """Second-order sections with persistent per-channel delay state.

    An empty cascade is the identity (used for notch "off").
    """

    def __init__(self, sos: np.ndarray | None):
        if sos is None or len(sos) == 0:
            self._sos = np.zeros((0, 6))
        else:
            self._sos = np.atleast_2d(np.asarray(sos, dtype=np.float64))
        self._zi: np.ndarray | None = None
        self._n_channels: int | None = None

    @property
    def sections(self) -> list[tuple[float, float, float, float, float]]:
        """(b0, b1, b2, a1, a2) per section, a0 normalized to 1."""
        return [
            (r[0] / r[3], r[1] / r[3], r[2] / r[3], r[4] / r[3], r[5] / r[3])
            for r in self._sos
        ]

    def poles(self) -> np.ndarray:
        if len(self._sos) == 0:
            return np.zeros(0, dtype=complex)
        return np.concatenate([np.roots([1.0, a1, a2]) for _, _, _, a1, a2 in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def reset(self) -> None:
        self._zi = None
        self._n_channels = None

    def process(self, block: np.ndarray) -> np.ndarray:
        """Filter a block, carrying state forward.

        Accepts (n_samples, n_channels) or a single-channel 1-D array
        (returned in the same shape).
        """
        block = np.asarray(block, dtype=np.float64)
        squeeze = block.ndim == 1
        if squeeze:
            block = block[:, np.newaxis]
        if block.ndim != 2:
            raise ValueError("block must be 1-D or (n_samples, n_channels)")
        n_ch = block.shape[1]
        if self._n_channels is None:
            self._n_channels = n_ch
        elif n_ch != self._n_channels:
            raise ValueError(f"channel count changed: {self._n_channels} -> {n_ch}")
        if len(self._sos) == 0 or block.shape[0] == 0:
            out = block.copy()
        else:
            if self._zi is None:
                self._zi = np.zeros((len(self._sos), 2, n_ch))
            out, self._zi = sig.sosfilt(self._sos, block, axis=0, zi=self._zi)
        return out[:, 0] if squeeze else out


def filter_apply(cascade: BiquadCascade, block: np.ndarray) -> np.ndarray:
    """Streaming application; state lives in the cascade."""
    return cascade.process(block)


def design_bandpass(spec: FilterSpec, rate: float) -> BiquadCascade:
    """Butterworth bandpass at the spec corners, as stable biquads."""
    spec.validate_rate(rate)
    sos = sig.butter(
        spec.order,
        [spec.bandpass_low, spec.bandpass_high],
        btype="bandpass",
        output="sos",
        fs=rate,
    )
    cascade = BiquadCascade(sos)
    assert cascade.is_stable()
    return cascade


def design_notch(freq: float | None, q: float, rate: float) -> BiquadCascade:
    """Single-biquad notch; ``freq=None`` yields an identity pass-through."""
    if freq is None:
        return BiquadCascade(None)
    if freq >= rate / 2:
        raise ValueError(f"notch frequency {freq} >= Nyquist {rate / 2}")
    b, a = sig.iirnotch(freq, q, fs=rate)
    cascade = BiquadCascade(np.hstack([b, a]))
    assert cascade.is_stable()
    return cascade


RESAMPLE_UP = 128
RESAMPLE_DOWN = 125


class PolyphaseResampler:
    """Streaming 250 -> 256 Hz rational resampler (up 128 / down 125).

    Kaiser-windowed sinc, 20*128+1 taps at the polyphase rate; cutoff at
    the input Nyquist. Output sample n is the kernel dot product at
    polyphase position n*125, emitted as soon as its newest input exists,
    so total output after N inputs is ceil(N*128/125).
    """

    def __init__(self, n_channels: int = 1, half_len_factor: int = 10, beta: float = 5.0):
        up, down = RESAMPLE_UP, RESAMPLE_DOWN
        self.up, self.down = up, down
        half_len = half_len_factor * max(up, down)
        kernel = sig.firwin(2 * half_len + 1, 1.0 / max(up, down), window=("kaiser", beta))
        self._taps_by_phase = [kernel[p::up] * up for p in range(up)]
        self._max_phase_taps = max(len(t) for t in self._taps_by_phase)
        self._hist_len = self._max_phase_taps - 1
        self.n_channels = n_channels
        self._hist = np.zeros((self._hist_len, n_channels))
        self._n_in = 0
        self._n_out = 0

    @property
    def kernel_span_outputs(self) -> int:
        """Warm-up length: kernel span expressed in output samples."""
        return math.ceil(self._max_phase_taps * self.up / self.down)

    def reset(self) -> None:
        self._hist = np.zeros((self._hist_len, self.n_channels))
        self._n_in = 0
        self._n_out = 0

    def process(self, block: np.ndarray) -> np.ndarray:
        """Consume (n_samples, n_channels), return every output now computable.

        Single-channel resamplers also accept and return 1-D arrays.
        """
        block = np.asarray(block, dtype=np.float64)
        squeeze = block.ndim == 1
        if squeeze:
            block = block[:, np.newaxis]
        if block.shape[1] != self.n_channels:
            raise ValueError(f"expected {self.n_channels} channels, got {block.shape[1]}")
        xbuf = np.concatenate([self._hist, block])
        offset = self._n_in - self._hist_len  # xbuf[i] is input sample offset + i
        total_in = self._n_in + block.shape[0]
        outs = []
        n = self._n_out
        while True:
            pos = n * self.down
            k_hi = pos // self.up  # newest input this output depends on
            if k_hi > total_in - 1:
                break
            taps = self._taps_by_phase[pos % self.up]
            i_hi = k_hi - offset
            window = xbuf[i_hi - len(taps) + 1 : i_hi + 1][::-1]
            outs.append(taps @ window)
            n += 1
        self._n_out = n
        self._n_in = total_in
        self._hist = xbuf[xbuf.shape[0] - self._hist_len :]
        out = np.array(outs) if outs else np.zeros((0, self.n_channels))
        return out[:, 0] if squeeze else out

    @property
    def output_count(self) -> int:
        return self._n_out

    @property
    def input_count(self) -> int:
        return self._n_in


def resample_250_to_256(
    block: np.ndarray, state: PolyphaseResampler | None = None
) -> tuple[np.ndarray, PolyphaseResampler]:
    """Functional form of the streaming resampler; pass the state back in."""
    if state is None:
        block = np.asarray(block)
        n_ch = 1 if block.ndim == 1 else block.shape[1]
        state = PolyphaseResampler(n_channels=n_ch)
    return state.process(block), state


def band_power(window: np.ndarray, rate: float, band: tuple[float, float]) -> float:
    """Mean squared amplitude inside ``band`` via periodogram integration."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ValueError("band_power takes a single channel")
    if len(window) < rate:
        raise ValueError("window must cover at least 1 s")
    lo, hi = band
    if not 0 <= lo < hi or hi > rate / 2:
        raise ValueError(f"band {band} outside [0, {rate / 2}]")
    n = len(window)
    spectrum = np.fft.rfft(window)
    psd = (np.abs(spectrum) ** 2) / (n * rate)
    psd[1:] *= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    df = rate / n
    mask = (freqs >= lo) & (freqs <= hi)
    return float(np.sum(psd[mask]) * df)


ALPHA_BAND = (8.0, 12.0)
ALPHA_TOTAL_BAND = (1.0, 40.0)


def detect_alpha(window: np.ndarray, rate: float) -> float:
    """Alpha-band share of total 1-40 Hz power; 0 on a silent window."""
    total = band_power(window, rate, ALPHA_TOTAL_BAND)
    if total == 0.0:
        return 0.0
    return band_power(window, rate, ALPHA_BAND) / total


class NoBeats(ValueError):
    """Fewer than two peaks: no rate to estimate."""


def estimate_bpm(window: np.ndarray, rate: float, refractory_s: float = 0.25) -> float:
    """Heart rate from a bandpassed single-channel window of >= 5 s.

    Peaks are suprathreshold maxima (threshold = mean + 2 std) separated
    by at least the refractory period; BPM comes from the span between
    the first and last peak.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("estimate_bpm takes a single channel")
    if len(x) < 5 * rate:
        raise ValueError("window must cover at least 5 s")
    thr = float(np.mean(x) + 2.0 * np.std(x))
    above = x > thr
    if not above.any():
        raise NoBeats("no suprathreshold samples")
    edges = np.diff(above.astype(np.int8))
    starts = list(np.where(edges == 1)[0] + 1)
    ends = list(np.where(edges == -1)[0] + 1)
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(len(x))
    peaks: list[int] = []
    refractory = refractory_s * rate
    for s, e in zip(starts, ends):
        p = s + int(np.argmax(x[s:e]))
        if not peaks or p - peaks[-1] >= refractory:
            peaks.append(p)
    if len(peaks) < 2:
        raise NoBeats(f"only {len(peaks)} peak(s) found")
    span_s = (peaks[-1] - peaks[0]) / rate
    return 60.0 * (len(peaks) - 1) / span_s


@dataclass
class EpochWindow:
    """Cut window in milliseconds relative to the tag instant."""

    start_ms: float = 0.0
    end_ms: float = 800.0

    def __post_init__(self):
        if self.start_ms >= self.end_ms:
            raise ValueError("start_ms must be < end_ms")

    def offsets(self, rate: float) -> tuple[int, int]:
        """Sample offsets [start, end) with half-away-from-zero rounding."""
        return (
            round_half_away(self.start_ms * rate / 1000.0),
            round_half_away(self.end_ms * rate / 1000.0),
        )


@dataclass
class Epoch:
    """channels x samples window cut around a stimulation tag."""

    tag_id: int | None
    start_index: int
    data: np.ndarray  # (n_channels, n_samples), microvolts
    rate: float

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


class EpochUnavailable(Exception):
    pass


class EpochPending(EpochUnavailable):
    """The window extends past the data received so far; retry later."""


class EpochExpired(EpochUnavailable):
    """The window precedes the retained history; it can never be served."""


def extract_epoch(
    buf: RingBuffer,
    tag_index: int,
    window: EpochWindow,
    rate: float,
    tag_id: int | None = None,
) -> Epoch:
    start_off, end_off = window.offsets(rate)
    lo = tag_index + start_off
    hi = tag_index + end_off
    if hi <= lo:
        raise ValueError("window rounds to zero samples at this rate")
    if hi > buf.next_index:
        raise EpochPending(f"need samples up to {hi}, have {buf.next_index}")
    if lo < buf.first_index:
        raise EpochExpired(f"window starts at {lo}, history starts at {buf.first_index}")
    frames = buf.slice(lo, hi - lo)
    data = np.stack([f.values for f in frames], axis=1)
    return Epoch(tag_id=tag_id, start_index=lo, data=data, rate=rate)


def average_epochs(epochs: list[Epoch]) -> Epoch:
    """Pointwise mean across epochs of identical shape and rate."""
    if not epochs:
        raise ValueError("cannot average zero epochs")
    shape = epochs[0].data.shape
    rate = epochs[0].rate
    for e in epochs[1:]:
        if e.data.shape != shape:
            raise ValueError(f"shape mismatch: {e.data.shape} vs {shape}")
        if e.rate != rate:
            raise ValueError(f"rate mismatch: {e.rate} vs {rate}")
    mean = np.mean([e.data for e in epochs], axis=0)
    return Epoch(tag_id=None, start_index=epochs[0].start_index, data=mean, rate=rate)
