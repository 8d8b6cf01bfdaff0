"""Cyton serial codec: command bytes and 33-byte binary frames.

Frame layout (33 bytes):

    0     0xA0 header
    1     sample counter, wraps 0..255
    2-25  8 channels x 3-byte big-endian two's-complement ADC counts
    26-31 6 aux bytes (accelerometer etc., passed through opaque)
    32    stop byte 0xC0..0xCF; the low nibble is payload metadata

Commands are single ASCII bytes written to the same port: 'b' start
stream, 's' stop stream, 'v' soft reset (board answers with a text banner
terminated by "$$$"), 'c' daisy query.

Decoding is incremental and self-resynchronizing: garbage is counted and
skipped, partial frames are carried across calls, and a frame candidate
with a bad stop byte costs only its header byte before the scan resumes
at the next 0xA0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

FRAME_LEN = 33
HEADER_BYTE = 0xA0
STOP_BASE = 0xC0

INT24_MIN = -(1 << 23)
INT24_MAX = (1 << 23) - 1

VREF_VOLTS = 4.5
VALID_GAINS = (1, 2, 4, 6, 8, 12, 24)
DEFAULT_GAIN = 24

BANNER_TERMINATOR = b"$$$"


class DeviceCommand(enum.Enum):
    START_STREAM = b"b"
    STOP_STREAM = b"s"
    SOFT_RESET = b"v"
    QUERY_DAISY = b"c"


def encode_command(cmd: DeviceCommand) -> bytes:
    """The single ASCII byte the board expects for ``cmd``."""
    return cmd.value


@dataclass
class RawPacket:
    """One decoded device frame, still in raw ADC counts."""

    seq: int
    channels: tuple[int, ...]
    aux: bytes = b"\x00" * 6
    footer_nibble: int = 0

    def validate(self) -> None:
        if not 0 <= self.seq <= 255:
            raise ValueError(f"seq {self.seq} out of 0..255")
        if len(self.channels) != 8:
            raise ValueError(f"expected 8 channels, got {len(self.channels)}")
        for i, c in enumerate(self.channels):
            if not INT24_MIN <= c <= INT24_MAX:
                raise ValueError(f"channel {i} count {c} outside signed 24-bit range")
        if len(self.aux) != 6:
            raise ValueError("aux must be 6 bytes")
        if not 0 <= self.footer_nibble <= 0x0F:
            raise ValueError("footer nibble out of 0..15")


def parse_int24_be(b: bytes) -> int:
    """Big-endian two's-complement 3-byte integer."""
    if len(b) != 3:
        raise ValueError("need exactly 3 bytes")
    return int.from_bytes(b, "big", signed=True)


def encode_int24_be(v: int) -> bytes:
    if not INT24_MIN <= v <= INT24_MAX:
        raise ValueError(f"{v} outside signed 24-bit range")
    return v.to_bytes(3, "big", signed=True)


def encode_packet(p: RawPacket) -> bytes:
    """33-byte frame for ``p``. Inverse of the decoder (round-trip exact)."""
    p.validate()
    out = bytearray(FRAME_LEN)
    out[0] = HEADER_BYTE
    out[1] = p.seq
    pos = 2
    for c in p.channels:
        out[pos : pos + 3] = c.to_bytes(3, "big", signed=True)
        pos += 3
    out[26:32] = p.aux
    out[32] = STOP_BASE | p.footer_nibble
    return bytes(out)


def _parse_frame(buf: bytes, start: int) -> RawPacket:
    # caller guarantees header and stop byte are valid
    channels = tuple(
        int.from_bytes(buf[start + 2 + 3 * i : start + 5 + 3 * i], "big", signed=True)
        for i in range(8)
    )
    return RawPacket(
        seq=buf[start + 1],
        channels=channels,
        aux=bytes(buf[start + 26 : start + 32]),
        footer_nibble=buf[start + 32] & 0x0F,
    )


@dataclass
class DecoderState:
    """Carry and counters for the incremental decoder.

    ``carry`` is at most 32 bytes (a complete frame is never retained);
    both counters only ever grow.
    """

    carry: bytes = b""
    discarded_bytes: int = 0
    frames_emitted: int = 0


def decode_stream(data: bytes, state: DecoderState | None = None) -> tuple[list[RawPacket], DecoderState]:
    """Extract every complete frame from ``state.carry + data``.

    Bytes that cannot start a frame are counted in ``discarded_bytes``;
    a trailing partial frame is kept in ``carry`` for the next call. The
    result is identical however the input stream is chunked.
    """
    if state is None:
        state = DecoderState()
    buf = state.carry + data if state.carry else data
    packets: list[RawPacket] = []
    pos = 0
    n = len(buf)
    while True:
        start = buf.find(HEADER_BYTE, pos)
        if start < 0:
            state.discarded_bytes += n - pos
            state.carry = b""
            break
        state.discarded_bytes += start - pos
        if n - start < FRAME_LEN:
            state.carry = bytes(buf[start:])
            break
        stop = buf[start + FRAME_LEN - 1]
        if STOP_BASE <= stop <= STOP_BASE | 0x0F:
            packets.append(_parse_frame(buf, start))
            state.frames_emitted += 1
            pos = start + FRAME_LEN
        else:
            # bad stop byte: pay for the presumed header only, rescan inside
            state.discarded_bytes += 1
            pos = start + 1
    return packets, state


class StreamDecoder:
    """Stateful wrapper around :func:`decode_stream` for one byte stream."""

    def __init__(self):
        self.state = DecoderState()

    def feed(self, data: bytes) -> list[RawPacket]:
        packets, self.state = decode_stream(data, self.state)
        return packets

    @property
    def discarded_bytes(self) -> int:
        return self.state.discarded_bytes

    @property
    def frames_emitted(self) -> int:
        return self.state.frames_emitted


def microvolt_scale(gain: int = DEFAULT_GAIN) -> float:
    """Microvolts per ADC count for a given front-end gain."""
    if gain not in VALID_GAINS:
        raise ValueError(f"gain {gain} not in {VALID_GAINS}")
    return VREF_VOLTS / gain / INT24_MAX * 1e6


def counts_to_microvolts(count: int, gain: int = DEFAULT_GAIN) -> float:
    """ADC count -> microvolts: count * 4.5 / gain / (2^23 - 1) * 1e6."""
    if not INT24_MIN <= count <= INT24_MAX:
        raise ValueError(f"count {count} outside signed 24-bit range")
    return count * microvolt_scale(gain)


def microvolts_to_counts(uv: float, gain: int = DEFAULT_GAIN) -> int:
    """Inverse scale with round-to-nearest and saturation at the 24-bit rails."""
    count = round(uv / microvolt_scale(gain))
    return max(INT24_MIN, min(INT24_MAX, count))
