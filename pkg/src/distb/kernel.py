"""Deterministic discrete-event kernel.

Time is an integer tick count (1 tick = 1 ms). Events are dispatched in
``(time, seq)`` order where ``seq`` is a global insertion counter, so two
events scheduled for the same tick run in the order they were scheduled.

All randomness comes from per-entity :class:`RngStream` objects. A stream is
an xoshiro256** generator whose 256-bit state is expanded with SplitMix64
from ``root_seed`` and the stream id, so the draws of one entity never depend
on how many draws other entities made.
"""
from __future__ import annotations

import heapq
import math
import time as _wall
from dataclasses import dataclass, field
from typing import Any, Callable

MASK64 = (1 << 64) - 1
TICKS_PER_SECOND = 1000

# Event kinds. Extra kinds may be registered by callers; these are the core ones.
PACKET_SEND = "PacketSend"
PACKET_ARRIVE = "PacketArrive"
MOBILITY_STEP = "MobilityStep"
BLOCK_PROPOSE = "BlockPropose"
VOTE = "Vote"
ATTACK_ATTEMPT = "AttackAttempt"
METRIC_WINDOW = "MetricWindow"
RULE_TIMEOUT = "RuleTimeout"


class SimulationError(RuntimeError):
    """Raised when the event loop cannot continue."""

    def __init__(self, message, event=None):
        super().__init__(message)
        self.event = event


class PastEventError(SimulationError):
    pass


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class RngStream:
    """xoshiro256** stream keyed by ``(root_seed, stream_id)``."""

    __slots__ = ("root_seed", "stream_id", "_s0", "_s1", "_s2", "_s3")

    def __init__(self, root_seed: int, stream_id: int):
        self.root_seed = root_seed & MASK64
        self.stream_id = stream_id
        _, salt = splitmix64(stream_id & MASK64)
        st = self.root_seed ^ salt
        words = []
        for _ in range(4):
            st, out = splitmix64(st)
            words.append(out)
        if not any(words):
            words[0] = 1
        self._s0, self._s1, self._s2, self._s3 = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        bound = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < bound:
                return x % n

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def expovariate(self, rate: float) -> float:
        # 1 - random() is in (0, 1], so the log is finite
        return -math.log(1.0 - self.random()) / rate


@dataclass
class Event:
    time: int
    kind: str
    target: int = 0
    payload: Any = None
    seq: int = -1


@dataclass
class RunSummary:
    events_processed: int
    wall_time_s: float
    now: int


@dataclass
class Kernel:
    root_seed: int = 0
    trace: bool = False
    now: int = 0
    _queue: list = field(default_factory=list)
    _seq: int = 0
    _handlers: dict = field(default_factory=dict)
    _streams: dict = field(default_factory=dict)
    trace_log: list = field(default_factory=list)
    events_processed: int = 0

    def on(self, kind: str, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> int:
        if event.time < self.now:
            raise PastEventError(
                f"past event: {event.kind} at t={event.time} < now={self.now}", event
            )
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event.seq

    def at(self, t: int, kind: str, target: int = 0, payload: Any = None) -> int:
        return self.schedule(Event(int(t), kind, target, payload))

    def after(self, dt: int, kind: str, target: int = 0, payload: Any = None) -> int:
        return self.schedule(Event(self.now + int(dt), kind, target, payload))

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: int) -> RunSummary:
        start = _wall.perf_counter()
        processed = 0
        queue = self._queue
        handlers = self._handlers
        tracing = self.trace
        while queue and queue[0][0] <= t_end:
            t, seq, ev = heapq.heappop(queue)
            self.now = t
            if tracing:
                self.trace_log.append((t, seq, ev.target, ev.kind))
            handler = handlers.get(ev.kind)
            if handler is None:
                raise SimulationError(f"no handler for event kind {ev.kind!r}", ev)
            try:
                handler(ev)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(
                    f"handler for {ev.kind} (t={t}, seq={seq}, target={ev.target}) failed: {exc!r}",
                    ev,
                ) from exc
            processed += 1
        if t_end > self.now:
            self.now = t_end
        self.events_processed += processed
        return RunSummary(processed, _wall.perf_counter() - start, self.now)

    def register_stream(self, stream_id: int) -> RngStream:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = RngStream(self.root_seed, stream_id)
            self._streams[stream_id] = stream
        return stream

    def rng(self, stream_id: int) -> RngStream:
        try:
            return self._streams[stream_id]
        except KeyError:
            raise KeyError(f"unknown rng stream {stream_id}") from None

    def dump_trace(self, fh) -> None:
        for t, seq, target, kind in self.trace_log:
            fh.write(f"{t}\t{seq}\t{target}\t{kind}\n")
