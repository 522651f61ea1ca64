"""Timestamp-ordered queue of pending events: the per-LP future event list.

Buckets of simultaneous events are kept in arrival order; a heap over the
bucket keys gives O(log n) insert and pop-min.  Antimessage annihilation
removes a matching event wherever it sits in the queue.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Iterator, Optional

from .messages import Message, MessageKind, annihilates

__all__ = ["EventQueue"]


class EventQueue:
    """Ordered multimap timestamp -> FIFO bucket of event messages."""

    def __init__(self) -> None:
        self._buckets: dict[float, list[Message]] = {}
        self._keys: list[float] = []  # heap, may hold stale keys
        self._by_identity: dict[tuple[int, int], float] = {}
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __bool__(self) -> bool:
        return self._size > 0

    def insert(self, m: Message) -> None:
        """Append an event to its timestamp bucket (FIFO within the bucket)."""
        if m.kind is not MessageKind.EVENT:
            raise ValueError(f"event queue holds events only, got {m.kind.name}")
        bucket = self._buckets.get(m.timestamp)
        if bucket is None:
            self._buckets[m.timestamp] = [m]
            heapq.heappush(self._keys, m.timestamp)
        else:
            bucket.append(m)
        self._by_identity[m.identity] = m.timestamp
        self._size += 1

    def _min_key(self) -> Optional[float]:
        while self._keys:
            key = self._keys[0]
            if key in self._buckets:
                return key
            heapq.heappop(self._keys)  # stale: bucket drained earlier
        return None

    def min_timestamp(self) -> Optional[float]:
        """Lowest pending timestamp, or None when empty."""
        return self._min_key()

    def pop_min(self) -> Optional[Message]:
        """Remove and return the head of the lowest-timestamp bucket."""
        key = self._min_key()
        if key is None:
            return None
        return self._take(key, 0)

    def pop_min_deterministic(self) -> Optional[Message]:
        """Like :meth:`pop_min`, but simultaneous events leave in
        (lp_sender, seq_number) order instead of arrival order.

        Used by the LP engine so that the execution order at equal
        timestamps never depends on message arrival timing.
        """
        key = self._min_key()
        if key is None:
            return None
        bucket = self._buckets[key]
        idx = 0
        if len(bucket) > 1:
            idx = min(range(len(bucket)), key=lambda i: bucket[i].identity)
        return self._take(key, idx)

    def _take(self, key: float, idx: int) -> Message:
        bucket = self._buckets[key]
        m = bucket.pop(idx)
        if not bucket:
            del self._buckets[key]
        del self._by_identity[m.identity]
        self._size -= 1
        return m

    def remove_matching(self, anti: Message) -> bool:
        """Annihilate the queued event paired with ``anti``, if present."""
        if anti.kind is not MessageKind.ANTIMESSAGE:
            raise ValueError(f"expected an antimessage, got {anti.kind.name}")
        key = self._by_identity.get(anti.identity)
        if key is None:
            return False
        bucket = self._buckets[key]
        for i, m in enumerate(bucket):
            if annihilates(m, anti):
                self._take(key, i)
                return True
        return False

    def __contains__(self, identity: tuple[int, int]) -> bool:
        return identity in self._by_identity

    def __iter__(self) -> Iterator[Message]:
        """All pending events in (timestamp, arrival) order.  Inspection only."""
        for key in sorted(self._buckets):
            yield from self._buckets[key]
