"""Command line entry point.

    cytond --transport sim
    cytond --transport serial:/dev/ttyUSB0 --notch 50 --resample on

Exit codes: 0 clean shutdown, 1 configuration error, 2 transport
unopenable.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .clocks import SystemClock
from .config import ConfigError, DaemonConfig, load_config, parse_notch
from .daemon import Daemon
from .sim import AlphaBurst, CytonSimulator, SimConfig, Sum, WhiteNoise
from .transport import TransportUnavailable, open_serial

log = logging.getLogger("cytond")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cytond",
        description="EEG acquisition daemon for OpenBCI Cyton boards",
    )
    parser.add_argument(
        "--transport", default="sim", metavar="sim|serial:<device-path>",
        help="device transport (default: built-in simulator)",
    )
    parser.add_argument("--tcp-port", type=int, default=None, metavar="N")
    parser.add_argument("--ws-port", type=int, default=None, metavar="N")
    parser.add_argument("--config", default=None, metavar="PATH", help="JSON config file")
    parser.add_argument("--daisy", action="store_true", default=None,
                        help="16-channel Daisy stack (half frame rate)")
    parser.add_argument("--notch", choices=["50", "60", "off"], default=None)
    parser.add_argument("--resample", choices=["on", "off"], default=None,
                        help="emit a 256 Hz resampled stream")
    parser.add_argument("--log-level", default=None,
                        choices=["debug", "info", "warning", "error"])
    return parser


def apply_cli(cfg: DaemonConfig, args: argparse.Namespace) -> DaemonConfig:
    """CLI flags override whatever the config file set."""
    if args.tcp_port is not None:
        cfg.gateway.tcp_port = args.tcp_port
    if args.ws_port is not None:
        cfg.gateway.ws_port = args.ws_port
    if args.daisy:
        cfg.stream.daisy = True
        cfg.stream.n_channels = 16
    if args.notch is not None:
        cfg.filters.notch_freq = parse_notch(args.notch)
    if args.resample is not None:
        cfg.resample = args.resample == "on"
    if args.log_level is not None:
        cfg.log_level = args.log_level
    cfg.stream.__post_init__()
    cfg.filters.__post_init__()
    return cfg


def make_transport_factory(spec: str, cfg: DaemonConfig):
    """Returns (factory, background_stopper) for the chosen transport."""
    if spec == "sim":
        sim_cfg = SimConfig(
            rate=cfg.stream.native_rate,
            daisy=cfg.stream.daisy,
            gain=cfg.stream.gain,
            waveforms=Sum(parts=[AlphaBurst(on_s=2.0, off_s=2.0, amp=40.0), WhiteNoise(4.0)]),
        )
        sim = CytonSimulator(sim_cfg, clock=SystemClock())
        stop = threading.Event()
        pump = threading.Thread(target=sim.run, args=(stop,), daemon=True, name="sim")
        pump.start()
        return sim.attach, stop.set
    if spec.startswith("serial:"):
        path = spec.split(":", 1)[1]
        if not path:
            raise ConfigError("serial transport needs a device path")
        return lambda: open_serial(path), lambda: None
    raise ConfigError(f"unknown transport {spec!r} (want sim or serial:<path>)")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else DaemonConfig()
        cfg = apply_cli(cfg, args)
        factory, stop_background = make_transport_factory(args.transport, cfg)
    except ConfigError as e:
        print(f"cytond: config error: {e}", file=sys.stderr)
        return 1

    logging.basicConfig(
        level=getattr(logging, cfg.log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    daemon = Daemon(cfg, factory)
    try:
        daemon.start()
    except TransportUnavailable as e:
        print(f"cytond: cannot open transport: {e}", file=sys.stderr)
        stop_background()
        return 2

    log.info(
        "listening on tcp://%s:%s and ws://%s:%s",
        cfg.gateway.host, daemon.gateway.tcp_port,
        cfg.gateway.host, daemon.gateway.ws_port,
    )

    shutdown = threading.Event()

    def on_signal(signum, _frame):
        log.info("signal %s: shutting down", signum)
        shutdown.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    while not shutdown.is_set():
        shutdown.wait(0.5)
    daemon.stop()
    stop_background()
    return 0


if __name__ == "__main__":
    sys.exit(main())
