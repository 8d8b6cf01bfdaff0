"""State machine and tag resolution unit tests (no threads, no sockets)."""

import pytest

from cytond.daemon import DaemonState, StateError, resolve_tag, transition


class TestTransitionTable:
    def test_idle_start(self):
        state, actions = transition(DaemonState.IDLE, "start")
        assert state is DaemonState.STREAMING
        assert "send_start" in actions and "new_session" in actions

    def test_idle_pause_rejected(self):
        with pytest.raises(StateError):
            transition(DaemonState.IDLE, "pause")

    def test_idle_stop_rejected(self):
        with pytest.raises(StateError):
            transition(DaemonState.IDLE, "stop")

    def test_streaming_pause_resume(self):
        state, _ = transition(DaemonState.STREAMING, "pause")
        assert state is DaemonState.PAUSED
        state, _ = transition(DaemonState.PAUSED, "resume")
        assert state is DaemonState.STREAMING

    def test_stop_from_streaming_and_paused(self):
        for s in (DaemonState.STREAMING, DaemonState.PAUSED):
            state, actions = transition(s, "stop")
            assert state is DaemonState.IDLE
            assert "send_stop" in actions

    def test_transport_closed_from_any_state(self):
        for s in DaemonState:
            state, actions = transition(s, "transport_closed")
            assert state is DaemonState.DEVICE_LOST
            assert "begin_reconnect" in actions

    def test_reconnected_only_from_device_lost(self):
        state, actions = transition(DaemonState.DEVICE_LOST, "reconnected")
        assert state is DaemonState.IDLE
        assert "maybe_restart" in actions
        with pytest.raises(StateError):
            transition(DaemonState.IDLE, "reconnected")

    def test_double_start_rejected(self):
        with pytest.raises(StateError):
            transition(DaemonState.STREAMING, "start")

    def test_invalid_has_no_side_effects(self):
        # transition is pure: an exception leaves no partial result
        before = DaemonState.PAUSED
        with pytest.raises(StateError):
            transition(before, "start")
        assert before is DaemonState.PAUSED


class TestResolveTag:
    def test_one_second(self):
        assert resolve_tag(11.0, 10.0, 250.0) == 250

    def test_at_anchor(self):
        assert resolve_tag(10.0, 10.0, 250.0) == 0

    def test_compensation(self):
        # round((1.0 - 0.02) * 250) = 245
        assert resolve_tag(11.0, 10.0, 250.0, latency_compensation_ms=20.0) == 245

    def test_clamped_at_zero(self):
        assert resolve_tag(9.5, 10.0, 250.0) == 0

    def test_monotonic(self):
        times = [10.0, 10.004, 10.004, 10.5, 11.2]
        indices = [resolve_tag(t, 10.0, 250.0) for t in times]
        assert indices == sorted(indices)
