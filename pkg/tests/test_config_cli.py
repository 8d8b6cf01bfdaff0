"""Config file parsing, CLI overrides, and process exit codes."""

import json
import signal
import subprocess
import sys
import time

import pytest

from cytond.cli import apply_cli, build_parser, main, make_transport_factory
from cytond.config import ConfigError, DaemonConfig, load_config, parse_notch


def write_config(tmp_path, payload: dict) -> str:
    path = tmp_path / "daemon.json"
    path.write_text(json.dumps(payload))
    return str(path)


class TestConfigFile:
    def test_defaults(self):
        cfg = DaemonConfig()
        assert cfg.stream.native_rate == 250.0
        assert cfg.gateway.tcp_port == 8336
        assert cfg.gateway.ws_port == 8337
        assert cfg.filters.notch_freq == 60.0
        assert cfg.resample is False

    def test_full_file(self, tmp_path):
        path = write_config(tmp_path, {
            "stream": {"daisy": True, "n_channels": 16, "history_seconds": 5},
            "filters": {"notch_freq": 50, "bandpass_high": 45},
            "gateway": {"tcp_port": 9000, "ws_port": 9001},
            "resample": True,
            "latency_compensation_ms": 15,
        })
        cfg = load_config(path)
        assert cfg.stream.daisy and cfg.stream.n_channels == 16
        assert cfg.filters.notch_freq == 50.0
        assert cfg.filters.bandpass_high == 45.0
        assert cfg.gateway.tcp_port == 9000
        assert cfg.resample is True
        assert cfg.latency_compensation_ms == 15.0

    def test_notch_off(self, tmp_path):
        cfg = load_config(write_config(tmp_path, {"filters": {"notch_freq": "off"}}))
        assert cfg.filters.notch_freq is None

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, {"stream": {"frequency": 250}}))

    def test_invalid_combination_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, {"stream": {"daisy": True}}))

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError):
            load_config("/does/not/exist.json")

    def test_parse_notch(self):
        assert parse_notch(50) == 50.0
        assert parse_notch("60") == 60.0
        assert parse_notch("off") is None
        with pytest.raises(ConfigError):
            parse_notch("70")


class TestCliOverrides:
    def parse(self, *argv):
        return build_parser().parse_args(list(argv))

    def test_cli_beats_file(self, tmp_path):
        cfg = DaemonConfig()
        cfg.gateway.tcp_port = 9000
        args = self.parse("--tcp-port", "9100", "--notch", "off", "--resample", "on")
        cfg = apply_cli(cfg, args)
        assert cfg.gateway.tcp_port == 9100
        assert cfg.filters.notch_freq is None
        assert cfg.resample is True

    def test_daisy_flag(self):
        cfg = apply_cli(DaemonConfig(), self.parse("--daisy"))
        assert cfg.stream.daisy and cfg.stream.n_channels == 16

    def test_unknown_transport(self):
        with pytest.raises(ConfigError):
            make_transport_factory("carrier-pigeon", DaemonConfig())


class TestExitCodes:
    def test_config_error_exit_1(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        assert main(["--config", str(path)]) == 1

    def test_transport_unopenable_exit_2(self):
        assert main(["--transport", "serial:/dev/does-not-exist-7b3"]) == 2

    def test_clean_shutdown_exit_0(self):
        proc = subprocess.Popen(
            [sys.executable, "-m", "cytond.cli", "--transport", "sim",
             "--tcp-port", "0", "--ws-port", "0"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )
        try:
            time.sleep(3.0)  # long enough to connect and bind
            assert proc.poll() is None, proc.stderr.read().decode()
            proc.send_signal(signal.SIGTERM)
            rc = proc.wait(timeout=15)
            assert rc == 0
        finally:
            if proc.poll() is None:
                proc.kill()
