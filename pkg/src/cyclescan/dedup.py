"""Sliding-window suppression of repeated (ip, port) responses."""

from __future__ import annotations

from collections import deque

DEFAULT_WINDOW = 10**6


def pack_key(ip: int, port: int) -> int:
    return (ip << 16) | port


class DedupWindow:
    """Remembers the last ``capacity`` distinct keys in insertion order.

    A repeated key does not refresh its position, so eviction is strictly
    first-in first-out. ``capacity == 0`` disables suppression entirely.
    """

    __slots__ = ("capacity", "_members", "_queue", "duplicates")

    def __init__(self, capacity: int = DEFAULT_WINDOW):
        if capacity < 0:
            raise ValueError("window capacity must be >= 0")
        self.capacity = capacity
        self._members: set[int] = set()
        self._queue: deque[int] = deque()
        self.duplicates = 0

    def __len__(self) -> int:
        return len(self._members)

    def __contains__(self, key: int) -> bool:
        return key in self._members

    def check_and_insert(self, ip: int, port: int) -> bool:
        """Return True when the response is fresh, False for a duplicate."""
        if not self.capacity:
            return True
        key = (ip << 16) | port
        members = self._members
        if key in members:
            self.duplicates += 1
            return False
        members.add(key)
        self._queue.append(key)
        if len(self._queue) > self.capacity:
            members.discard(self._queue.popleft())
        return True
