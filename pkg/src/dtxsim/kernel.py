"""Discrete-event simulation core.

Virtual time is an integer count of microseconds.  Events fire in
(fire_at, seq) order, where seq is the scheduling sequence number, so two
events scheduled for the same instant run in the order they were created.
All randomness is drawn from named streams seeded from the run seed, which
makes a run a pure function of (config, seed).
"""

from __future__ import annotations

import heapq
import random
from typing import Callable, Optional

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms(v: float) -> int:
    """Convert milliseconds to integer microseconds."""
    return int(round(v * US_PER_MS))


class Kernel:
    """Event queue plus virtual clock plus per-stream RNG registry."""

    def __init__(self, seed: int, event_hook: Optional[Callable] = None):
        self._now = 0
        self._seq = 0
        self._heap: list = []
        self._seed = seed
        self._rngs: dict[str, random.Random] = {}
        # optional observer called as (fire_at, seq, target, action) when an
        # event is processed; used for the event-trace dump
        self.event_hook = event_hook

    @property
    def now(self) -> int:
        return self._now

    @property
    def seed(self) -> int:
        return self._seed

    def schedule(self, at: int, target: str, action: str, fn: Callable[[], None]) -> int:
        """Schedule fn to run at virtual time `at`.  Returns the event seq id."""
        if at < self._now:
            raise ValueError(
                f"cannot schedule event '{action}' at t={at}us before now={self._now}us"
            )
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, seq, target, action, fn))
        return seq

    def schedule_in(self, delay: int, target: str, action: str, fn: Callable[[], None]) -> int:
        if delay < 0:
            raise ValueError(f"negative delay {delay}us for event '{action}'")
        return self.schedule(self._now + delay, target, action, fn)

    def run_until(self, limit: int) -> int:
        """Process every event with fire_at <= limit, in (fire_at, seq) order.

        Returns the number of events processed.  The clock ends at the time
        of the last processed event, never past `limit`.
        """
        processed = 0
        heap = self._heap
        while heap and heap[0][0] <= limit:
            at, seq, target, action, fn = heapq.heappop(heap)
            self._now = at
            if self.event_hook is not None:
                self.event_hook(at, seq, target, action)
            fn()
            processed += 1
        return processed

    def pending(self) -> int:
        return len(self._heap)

    def next_event_at(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def rng(self, stream: str) -> random.Random:
        """Deterministic RNG for a named stream, independent across names.

        Seeding with a string goes through the stable hash in random.seed
        (version 2), so sequences do not depend on PYTHONHASHSEED.
        """
        r = self._rngs.get(stream)
        if r is None:
            r = random.Random(f"{self._seed}/{stream}")
            self._rngs[stream] = r
        return r

    def rng_next(self, stream: str) -> float:
        """Next uniform [0, 1) draw from the named stream."""
        return self.rng(stream).random()
