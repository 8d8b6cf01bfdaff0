"""Wire protocol between the daemon and its clients.

Newline-delimited UTF-8 JSON objects, one per line, each with a "type"
field. The same schema rides WebSocket text messages one-per-frame.
Field names are part of the contract: type, stream, first_index, frames,
tag_id, label, client_time, resolved_index, state, code, detail.

Microvolt values in Data frames are plain decimal numbers rounded to
0.0001 uV -- well under the ADC quantization step (~0.022 uV at gain 24).
"""

from __future__ import annotations

import json
from typing import Any

STREAMS = ("raw", "filtered", "resampled")
ACTIONS = ("start", "stop", "pause", "resume", "reset")

# error codes
E_PROTOCOL = "protocol"
E_OVERFLOW = "overflow"
E_STATE = "state"
E_TAG_REJECTED = "tag_rejected"
E_UNKNOWN_TAG = "unknown_tag"
E_PENDING = "pending"
E_EXPIRED = "expired"
E_BAD_REQUEST = "bad_request"

UV_DECIMALS = 4


class ProtocolError(ValueError):
    """Client sent something that is not a valid message."""


def encode(msg: dict) -> bytes:
    return json.dumps(msg, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_line(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="strict")
    try:
        msg = json.loads(line)
    except (ValueError, UnicodeDecodeError) as e:
        raise ProtocolError(f"not valid JSON: {e}") from e
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("message must be an object with a string 'type'")
    return msg


def _require(msg: dict, field: str, types) -> Any:
    if field not in msg:
        raise ProtocolError(f"'{msg['type']}' requires field '{field}'")
    value = msg[field]
    if not isinstance(value, types):
        raise ProtocolError(f"field '{field}' has wrong type")
    return value


def validate_client(msg: dict) -> dict:
    """Check one client message against the vocabulary; returns it."""
    mtype = msg["type"]
    if mtype == "hello":
        pass
    elif mtype == "command":
        action = _require(msg, "action", str)
        if action not in ACTIONS:
            raise ProtocolError(f"unknown action '{action}'")
    elif mtype in ("subscribe", "unsubscribe"):
        if mtype == "subscribe" or "stream" in msg:
            stream = _require(msg, "stream", str)
            if stream not in STREAMS:
                raise ProtocolError(f"unknown stream '{stream}'")
        if "channels" in msg and msg["channels"] is not None:
            channels = _require(msg, "channels", list)
            if not all(isinstance(c, int) and c >= 0 for c in channels):
                raise ProtocolError("channels must be non-negative integers")
    elif mtype == "tag":
        _require(msg, "label", str)
        if "client_time" in msg and not isinstance(msg["client_time"], (int, float)):
            raise ProtocolError("client_time must be a number")
    elif mtype == "request_epoch":
        _require(msg, "tag_id", int)
        if "window" in msg:
            window = _require(msg, "window", dict)
            for k in ("start_ms", "end_ms"):
                if k in window and not isinstance(window[k], (int, float)):
                    raise ProtocolError(f"window.{k} must be a number")
        if "stream" in msg and msg["stream"] not in ("raw", "filtered"):
            raise ProtocolError("epoch stream must be raw or filtered")
    elif mtype == "request_band_power":
        band = _require(msg, "band", list)
        if len(band) != 2 or not all(isinstance(b, (int, float)) for b in band):
            raise ProtocolError("band must be [low_hz, high_hz]")
        if "window_s" in msg and not isinstance(msg["window_s"], (int, float)):
            raise ProtocolError("window_s must be a number")
        if "channel" in msg and not isinstance(msg["channel"], int):
            raise ProtocolError("channel must be an integer")
    elif mtype == "ping":
        pass
    else:
        raise ProtocolError(f"unknown message type '{mtype}'")
    return msg


# -- server message builders --------------------------------------------------


def welcome(config: dict) -> dict:
    return {"type": "welcome", "config": config}

def status(state: str, stats: dict) -> dict:
    msg = {"type": "status", "state": state}
    msg.update(stats)
    return msg

def data(stream: str, first_index: int, frames: list[list[float]]) -> dict:
    return {"type": "data", "stream": stream, "first_index": first_index, "frames": frames}

def tag_ack(tag_id: int, resolved_index: int, label: str, client_time) -> dict:
    return {
        "type": "tag_ack",
        "tag_id": tag_id,
        "resolved_index": resolved_index,
        "label": label,
        "client_time": client_time,
    }

def epoch_msg(tag_id: int, start_index: int, rate: float, data_rows: list[list[float]]) -> dict:
    return {
        "type": "epoch",
        "tag_id": tag_id,
        "start_index": start_index,
        "rate": rate,
        "data": data_rows,
    }

def band_power_msg(value: float, band: list[float], channel: int) -> dict:
    return {"type": "band_power", "value": value, "band": band, "channel": channel}

def error(code: str, detail: str) -> dict:
    return {"type": "error", "code": code, "detail": detail}

def pong() -> dict:
    return {"type": "pong"}


def round_values(values, decimals: int = UV_DECIMALS) -> list[float]:
    return [round(float(v), decimals) for v in values]
