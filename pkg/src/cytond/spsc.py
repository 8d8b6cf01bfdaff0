"""Bounded single-producer single-consumer queues.

Every edge between pipeline stages (acquisition -> processing -> gateway,
processing <-> worker) is one of these: exactly one writer thread and one
reader thread, push never blocks. Overflow is the producer's problem --
``try_push`` returns False and the producer decides whether that is a drop
(gateway direction) or a fault (acquisition direction).
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Any, Optional


class SpscQueue:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque()
        self._cond = threading.Condition()
        self.dropped = 0  # producer-side drop count, owned by the producer

    def __len__(self) -> int:
        return len(self._items)

    def try_push(self, item: Any) -> bool:
        """Non-blocking push; False when full."""
        with self._cond:
            if len(self._items) >= self.capacity:
                return False
            self._items.append(item)
            self._cond.notify()
            return True

    def push_or_drop(self, item: Any) -> bool:
        """Push, counting the item as dropped when the queue is full."""
        if self.try_push(item):
            return True
        self.dropped += 1
        return False

    def try_pop(self) -> Optional[Any]:
        with self._cond:
            if not self._items:
                return None
            return self._items.popleft()

    def pop_wait(self, timeout: float) -> Optional[Any]:
        """Pop, sleeping up to ``timeout`` seconds for an item."""
        with self._cond:
            if not self._items:
                self._cond.wait(timeout)
            if not self._items:
                return None
            return self._items.popleft()

    def drain(self, max_items: int = 0) -> list:
        """Pop everything currently queued (up to ``max_items`` if > 0)."""
        out = []
        with self._cond:
            while self._items and (max_items <= 0 or len(out) < max_items):
                out.append(self._items.popleft())
        return out
