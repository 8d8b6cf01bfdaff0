"""Packet stream reconciliation: gap repair, Daisy merging, history buffer.

Decoded packets carry a 1-byte wrapping counter. This stage converts them
into a dense, monotonically indexed stream of microvolt frames: short
gaps are filled by linear interpolation between the real neighbours, long
gaps become explicit dropout reports (never fabricated data), duplicates
are dropped and counted. Emitted indices are always consecutive -- the
sample index is the pipeline's master clock.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .codec import DEFAULT_GAIN, RawPacket, microvolt_scale


class DuplicateCounter(ValueError):
    """next == prev: the device repeated (or the radio replayed) a packet."""


def sequence_gap(prev: int, next_: int) -> int:
    """Missing packet count between two counter values, wrap-aware.

    Consecutive counters yield 0. Equal counters are a duplicate/stall,
    not a gap, and raise :class:`DuplicateCounter`.
    """
    if not (0 <= prev <= 255 and 0 <= next_ <= 255):
        raise ValueError("counters must be in 0..255")
    if next_ == prev:
        raise DuplicateCounter(f"counter repeated at {prev}")
    return (next_ - prev - 1) % 256


@dataclass
class StreamConfig:
    native_rate: float = 250.0
    n_channels: int = 8
    gain: int = DEFAULT_GAIN
    daisy: bool = False
    max_interp_gap: int = 50
    history_seconds: float = 10.0

    def __post_init__(self):
        if self.native_rate <= 0:
            raise ValueError("native_rate must be positive")
        if self.daisy and self.n_channels != 16:
            raise ValueError("daisy mode requires 16 channels")
        if not self.daisy and self.n_channels not in (8, 16):
            raise ValueError("n_channels must be 8 or 16")
        if self.max_interp_gap < 0:
            raise ValueError("max_interp_gap must be >= 0")
        if self.history_seconds <= 0:
            raise ValueError("history_seconds must be positive")

    @property
    def effective_rate(self) -> float:
        """Frame rate after Daisy pairing (half the packet rate)."""
        return self.native_rate / 2 if self.daisy else self.native_rate


@dataclass
class SampleFrame:
    """One multichannel sample in microvolts on the master index clock."""

    index: int
    values: np.ndarray
    interpolated: bool = False

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SampleFrame)
            and self.index == other.index
            and self.interpolated == other.interpolated
            and np.array_equal(self.values, other.values)
        )


class GapAction(enum.Enum):
    INTERPOLATED = "interpolated"
    DROPOUT = "dropout"


@dataclass
class GapReport:
    """``missing`` packets were lost starting where index ``start_index``
    was emitted; interpolated gaps carry fabricated frames there, dropouts
    resume the dense index at the next real packet."""

    start_index: int
    missing: int
    action: GapAction


def interpolate_gap(a: SampleFrame, b: SampleFrame, k: int) -> list[SampleFrame]:
    """k frames on the per-channel straight line between a and b.

    Requires a.index + k + 1 == b.index so the result is index-dense.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if a.index + k + 1 != b.index:
        raise ValueError("indices do not bracket a k-sample gap")
    delta = b.values - a.values
    return [
        SampleFrame(
            index=a.index + j,
            values=a.values + delta * (j / (k + 1)),
            interpolated=True,
        )
        for j in range(1, k + 1)
    ]


@dataclass
class ReconcileStats:
    packets: int = 0
    duplicates: int = 0
    gaps_interpolated: int = 0
    frames_interpolated: int = 0
    dropouts: int = 0


class Reconciler:
    """Turns an arrival-ordered packet stream into dense SampleFrames.

    In Daisy mode feed it merged 16-channel samples (see
    :class:`DaisyMerger`); the counter modulus shrinks to 128 because a
    merged sample consumes two packet slots.
    """

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        self._scale = microvolt_scale(cfg.gain)
        self._modulus = 128 if cfg.daisy else 256
        self._last_seq: int | None = None
        self._last_frame: SampleFrame | None = None
        self._next_index = 0
        self.stats = ReconcileStats()

    def _gap(self, prev: int, next_: int) -> int:
        return (next_ - prev - 1) % self._modulus

    def push(
        self, packets: list[RawPacket] | list["MergedSample"]
    ) -> tuple[list[SampleFrame], list[GapReport]]:
        frames: list[SampleFrame] = []
        reports: list[GapReport] = []
        for p in packets:
            seq, counts = self._seq_and_counts(p)
            values = np.asarray(counts, dtype=np.float64) * self._scale
            if self._last_seq is not None and seq == self._last_seq:
                self.stats.duplicates += 1
                continue
            self.stats.packets += 1
            if self._last_seq is None:
                gap = 0
            else:
                gap = self._gap(self._last_seq, seq)
            if gap == 0 or self._last_frame is None:
                frame = SampleFrame(self._next_index, values)
                frames.append(frame)
                self._next_index += 1
            elif gap <= self.cfg.max_interp_gap:
                # place the real frame after the gap, then fill the line
                frame = SampleFrame(self._next_index + gap, values)
                filled = interpolate_gap(self._last_frame, frame, gap)
                reports.append(GapReport(self._next_index, gap, GapAction.INTERPOLATED))
                self.stats.gaps_interpolated += 1
                self.stats.frames_interpolated += gap
                frames.extend(filled)
                frames.append(frame)
                self._next_index += gap + 1
            else:
                # too wide to repair: report and resume densely
                reports.append(GapReport(self._next_index, gap, GapAction.DROPOUT))
                self.stats.dropouts += 1
                frame = SampleFrame(self._next_index, values)
                frames.append(frame)
                self._next_index += 1
            self._last_seq = seq
            self._last_frame = frame
        return frames, reports

    @staticmethod
    def _seq_and_counts(p) -> tuple[int, tuple[int, ...]]:
        if isinstance(p, MergedSample):
            return p.pair_seq, p.counts
        return p.seq, p.channels

    @property
    def next_index(self) -> int:
        return self._next_index


def reconcile(
    packets: list[RawPacket], cfg: StreamConfig, state: Reconciler | None = None
) -> tuple[list[SampleFrame], list[GapReport], Reconciler]:
    """Functional wrapper over :class:`Reconciler` for one-shot callers."""
    if state is None:
        state = Reconciler(cfg)
    frames, reports = state.push(packets)
    return frames, reports, state


@dataclass
class MergedSample:
    """A Daisy pair collapsed to one 16-channel sample.

    ``pair_seq`` counts merged samples (packet counter // 2, wraps at 128).
    """

    pair_seq: int
    counts: tuple[int, ...]


@dataclass
class DaisyOrphan:
    """Half of a Daisy pair never arrived; the merged sample is lost."""

    pair_seq: int
    missing_half: str  # "lower" or "upper"
    channels: tuple[int, int]  # 1-based range of the missing electrodes


LOWER_CHANNELS = (1, 8)
UPPER_CHANNELS = (9, 16)


class DaisyMerger:
    """Pairs alternating board packets into 16-channel samples.

    Even counters carry the main board (channels 1-8), the following odd
    counter carries the Daisy module (channels 9-16). An unpaired packet
    is held until its partner arrives; when the partner is lost, the
    orphan is reported with the missing half and discarded, leaving a
    pair-level gap for the reconciler to repair.
    """

    def __init__(self):
        self._pending: RawPacket | None = None

    def push(self, packets: list[RawPacket]) -> tuple[list[MergedSample], list[DaisyOrphan]]:
        merged: list[MergedSample] = []
        orphans: list[DaisyOrphan] = []
        for p in packets:
            if p.seq % 2 == 0:
                if self._pending is not None:
                    # the pending lower's upper half never arrived
                    orphans.append(
                        DaisyOrphan(self._pending.seq // 2, "upper", UPPER_CHANNELS)
                    )
                self._pending = p
            else:
                if self._pending is not None and (self._pending.seq + 1) % 256 == p.seq:
                    merged.append(
                        MergedSample(
                            pair_seq=self._pending.seq // 2,
                            counts=self._pending.channels + p.channels,
                        )
                    )
                    self._pending = None
                else:
                    if self._pending is not None:
                        orphans.append(
                            DaisyOrphan(self._pending.seq // 2, "upper", UPPER_CHANNELS)
                        )
                        self._pending = None
                    # upper without its lower: channels 1-8 lost for that pair
                    orphans.append(DaisyOrphan(p.seq // 2, "lower", LOWER_CHANNELS))
        return merged, orphans


def merge_daisy(packets: list[RawPacket]) -> tuple[list[MergedSample], list[DaisyOrphan]]:
    """One-shot Daisy pairing of an arrival-ordered packet list."""
    return DaisyMerger().push(packets)


class RangeUnavailable(LookupError):
    """Requested slice is not (or no longer) inside the retained window."""


class RingBuffer:
    """Bounded history of the most recent frames, addressable by index.

    Appends must be index-dense (the reconciler guarantees that); the
    oldest frames fall off once ``capacity`` is exceeded.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._frames: list[SampleFrame] = []
        self._first = 0

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def first_index(self) -> int:
        return self._first

    @property
    def next_index(self) -> int:
        return self._first + len(self._frames)

    def append(self, frame: SampleFrame) -> None:
        if self._frames and frame.index != self.next_index:
            raise ValueError(
                f"non-contiguous append: expected {self.next_index}, got {frame.index}"
            )
        if not self._frames:
            self._first = frame.index
        self._frames.append(frame)
        excess = len(self._frames) - self.capacity
        if excess > 0:
            del self._frames[:excess]
            self._first += excess

    def extend(self, frames: list[SampleFrame]) -> None:
        for f in frames:
            self.append(f)

    def slice(self, from_index: int, length: int) -> list[SampleFrame]:
        if length < 0:
            raise ValueError("length must be >= 0")
        if from_index < self._first or from_index + length > self.next_index:
            raise RangeUnavailable(
                f"[{from_index}, {from_index + length}) outside retained "
                f"[{self._first}, {self.next_index})"
            )
        off = from_index - self._first
        return self._frames[off : off + length]

    def clear(self) -> None:
        self._frames.clear()
        self._first = 0
