"""Daemon configuration: defaults, JSON config file, CLI overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dsp import FilterSpec
from .stream import StreamConfig


class ConfigError(ValueError):
    pass


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    tcp_port: int = 8336
    ws_port: int = 8337
    batch_frames: int = 25          # max frames per Data message
    max_client_lag_s: float = 2.0   # outbound backlog before eviction
    status_interval_s: float = 1.0


@dataclass
class DaemonConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    filters: FilterSpec = field(default_factory=FilterSpec)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    resample: bool = False
    latency_compensation_ms: float = 0.0
    reconnect_initial_s: float = 0.5
    reconnect_max_s: float = 8.0
    banner_timeout_s: float = 10.0
    guard_delay_s: float = 0.2
    log_level: str = "info"


_NOTCH_VALUES = {"50": 50.0, "60": 60.0, "off": None}


def parse_notch(value) -> float | None:
    key = str(value).lower()
    if key not in _NOTCH_VALUES:
        raise ConfigError(f"notch must be 50, 60 or off, not {value!r}")
    return _NOTCH_VALUES[key]


def _apply(obj, section: dict, fields: dict) -> None:
    for key, value in section.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {key}")
        setattr(obj, key, fields[key](value))


def load_config(path: str) -> DaemonConfig:
    """Read a JSON config file into a DaemonConfig.

    Top-level sections: "stream", "filters", "gateway", plus scalar daemon
    settings. Anything omitted keeps its default.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except ValueError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    cfg = DaemonConfig()
    try:
        _apply(cfg.stream, raw.pop("stream", {}), {
            "native_rate": float, "n_channels": int, "gain": int,
            "daisy": bool, "max_interp_gap": int, "history_seconds": float,
        })
        _apply(cfg.filters, raw.pop("filters", {}), {
            "bandpass_low": float, "bandpass_high": float,
            "notch_freq": parse_notch, "notch_q": float, "order": int,
        })
        _apply(cfg.gateway, raw.pop("gateway", {}), {
            "host": str, "tcp_port": int, "ws_port": int, "batch_frames": int,
            "max_client_lag_s": float, "status_interval_s": float,
        })
        _apply(cfg, raw, {
            "resample": bool, "latency_compensation_ms": float,
            "reconnect_initial_s": float, "reconnect_max_s": float,
            "banner_timeout_s": float, "guard_delay_s": float, "log_level": str,
        })
        # re-run invariants after field pokes
        cfg.stream.__post_init__()
        cfg.filters.__post_init__()
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg
