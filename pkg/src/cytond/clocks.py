"""Monotonic time sources.

The daemon and the device simulator never call ``time.monotonic()``
directly; they go through a clock object so tests can substitute a
``VirtualClock`` and run hours of session time in milliseconds, fully
deterministically.
"""

from __future__ import annotations

import threading
import time
from typing import Callable


class SystemClock:
    """Wall time. ``monotonic()`` never goes backwards."""

    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """A clock that only moves when ``advance()`` is called.

    Listeners (the simulator, typically) are invoked after each advance
    with the new time; ``sleep()`` blocks the calling thread until some
    other thread advances past the deadline.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._cond = threading.Condition()
        self._listeners: list[Callable[[float], None]] = []

    def monotonic(self) -> float:
        with self._cond:
            return self._now

    def on_advance(self, fn: Callable[[float], None]) -> None:
        """Register a callback invoked (outside the lock) after each advance."""
        self._listeners.append(fn)

    def advance(self, dt: float) -> float:
        """Move time forward by ``dt`` seconds and wake sleepers."""
        if dt < 0:
            raise ValueError("clock cannot go backwards")
        with self._cond:
            self._now += dt
            now = self._now
            self._cond.notify_all()
        for fn in self._listeners:
            fn(now)
        return now

    def sleep(self, seconds: float) -> None:
        """Block until virtual time reaches now + seconds."""
        with self._cond:
            deadline = self._now + seconds
            while self._now < deadline:
                self._cond.wait(timeout=0.5)


class ClockPump(threading.Thread):
    """Background thread that keeps a VirtualClock moving.

    ``speed`` is virtual seconds per real second; ``step`` is the virtual
    granularity of each advance. Used by tests that need the pipeline to
    run "live" without choreographing every advance.
    """

    def __init__(self, clock: VirtualClock, speed: float = 1.0, step: float = 0.004):
        super().__init__(daemon=True, name="clock-pump")
        self.clock = clock
        self.speed = speed
        self.step = step
        self._stop_evt = threading.Event()

    def run(self) -> None:
        real_interval = self.step / self.speed
        next_tick = time.monotonic()
        while not self._stop_evt.is_set():
            self.clock.advance(self.step)
            next_tick += real_interval
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_tick = time.monotonic()

    def stop(self) -> None:
        self._stop_evt.set()
        self.join(timeout=5)
