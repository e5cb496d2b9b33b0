"""Clock abstraction so the engine and tests never sleep in real time.

The engine, capture loops, and latency-injecting test backends all sleep
through a Clock. FakeClock runs them under virtual time: whenever every
task is blocked on a fake sleep, time jumps straight to the earliest
deadline, so a simulated minute finishes in milliseconds.
"""

from __future__ import annotations

import asyncio
import heapq
import time


class Clock:
    def now(self) -> float:
        """Seconds since an arbitrary epoch."""
        raise NotImplementedError

    def now_ms(self) -> int:
        return int(self.now() * 1000)

    async def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class RealClock(Clock):
    def now(self) -> float:
        return time.time()

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(max(0.0, seconds))


class FakeClock(Clock):
    """Deterministic virtual-time clock for simulations.

    Sleeping tasks park on a heap of (deadline, seq) entries. A single
    driver task repeatedly yields control until all runnable work has
    settled, then advances virtual time to the earliest pending deadline
    and wakes every sleeper due at that instant. Ties wake in sleep-call
    order, which keeps interleavings reproducible.
    """

    # Yield passes before each time jump; lets woken tasks reach their
    # next await (including chains of awaits on plain futures/gather).
    _SETTLE_PASSES = 25

    def __init__(self, start: float = 0.0):
        self._now = start
        self._waiters: list = []  # (deadline, seq, future)
        self._seq = 0
        self._driver: asyncio.Task | None = None

    def now(self) -> float:
        return self._now

    async def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            await asyncio.sleep(0)
            return
        loop = asyncio.get_running_loop()
        fut = loop.create_future()
        heapq.heappush(self._waiters, (self._now + seconds, self._seq, fut))
        self._seq += 1
        if self._driver is None or self._driver.done():
            self._driver = loop.create_task(self._drive())
        try:
            await fut
        except asyncio.CancelledError:
            if not fut.done():
                fut.cancel()
            raise

    async def _drive(self) -> None:
        while True:
            for _ in range(self._SETTLE_PASSES):
                await asyncio.sleep(0)
            self._waiters = [w for w in self._waiters if not w[2].done()]
            heapq.heapify(self._waiters)
            if not self._waiters:
                return
            deadline = self._waiters[0][0]
            self._now = max(self._now, deadline)
            while self._waiters and self._waiters[0][0] <= self._now:
                _, _, fut = heapq.heappop(self._waiters)
                if not fut.done():
                    fut.set_result(None)
