"""Discrete-event core: a virtual clock, a (fire_at, sequence) ordered queue,
message delivery with sampled latency, and generator-based processes."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Optional

from ..dht import Clock
from .models import LatencyModel


@dataclass(order=True)
class SimEvent:
    fire_at: float
    sequence: int
    action: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    parent: Optional[int] = field(compare=False, default=None)
    parent_fire_at: Optional[float] = field(compare=False, default=None)


@dataclass(frozen=True)
class Message:
    """Yielded by a process to send one message and wait for its delivery."""

    src: int
    dst: int
    kind: str
    alive: Optional[Callable[[int], bool]] = None


@dataclass(frozen=True)
class Sleep:
    seconds: float


class Process:
    def __init__(self, gen: Generator, name: str = ""):
        self.gen = gen
        self.name = name
        self.done = False
        self.result: Any = None


class Simulator:
    """Single-threaded event loop.  All randomness inside the loop comes from
    ``latency_rng``; callers own any other streams."""

    def __init__(self, latency: Optional[LatencyModel] = None, seed: int = 0, clock: Optional[Clock] = None, trace: bool = False):
        self.latency = latency or LatencyModel()
        self.latency_rng = random.Random(f"latency/{seed}")
        self.clock = clock or Clock()
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.current: Optional[SimEvent] = None
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.executed = 0
        self.trace: Optional[list[SimEvent]] = [] if trace else None

    @property
    def now(self) -> float:
        return self.clock.now

    def pending(self) -> int:
        return len(self._queue)

    def schedule(self, delay: float, action: Callable, *args) -> SimEvent:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        return self.schedule_at(self.now + delay, action, *args)

    def schedule_at(self, t: float, action: Callable, *args) -> SimEvent:
        if t < self.now:
            raise ValueError("cannot schedule into the past")
        cur = self.current
        ev = SimEvent(t, next(self._seq), action, args,
                      cur.sequence if cur else None, cur.fire_at if cur else None)
        heapq.heappush(self._queue, ev)
        return ev

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.clock.set(ev.fire_at)
        self.current = ev
        try:
            ev.action(*ev.args)
        finally:
            self.current = None
        self.executed += 1
        if self.trace is not None:
            self.trace.append(ev)
        return True

    def run(self, until: Optional[float] = None) -> int:
        """Execute events in order; stop at the first event later than ``until``."""
        n = 0
        while self._queue:
            if until is not None and self._queue[0].fire_at > until:
                self.clock.set(until)
                break
            self.step()
            n += 1
        return n

    # -- messages ---------------------------------------------------------

    def send(self, msg: Message, on_done: Callable[[bool], None]) -> float:
        """Deliver ``msg`` after one latency sample; ``on_done`` gets whether
        the target was alive at delivery time."""
        delay = self.latency.sample(self.latency_rng)
        self.sent += 1

        def arrive() -> None:
            ok = msg.alive is None or msg.alive(msg.dst)
            if ok:
                self.delivered += 1
            else:
                self.dropped += 1
            on_done(ok)

        self.schedule(delay, arrive)
        return delay

    def spawn(self, gen: Generator, name: str = "") -> Process:
        proc = Process(gen, name)
        self.schedule(0.0, self._resume, proc, None)
        return proc

    def _resume(self, proc: Process, value: Any) -> None:
        try:
            item = proc.gen.send(value)
        except StopIteration as stop:
            proc.done = True
            proc.result = stop.value
            return
        if isinstance(item, Message):
            self.send(item, lambda ok: self._resume(proc, ok))
        elif isinstance(item, Sleep):
            self.schedule(item.seconds, self._resume, proc, None)
        else:
            raise TypeError(f"process yielded {item!r}")
