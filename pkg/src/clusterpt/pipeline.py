"""SPSC ring queue and the staged-pipeline harness.

RingQueue is a fixed-capacity FIFO for exactly one producer thread and one
consumer thread.  The fast path (try_push/try_pop) takes no lock: with a
single producer, `write - read >= capacity` can only be made MORE true by
the consumer, so a passing check cannot be invalidated; symmetrically for
the consumer, and CPython's interpreter lock makes the integer updates
atomic.  Blocking push/pop fall back to a Condition instead of spinning:
on a single-core host a sleep(0) spin degrades to whole scheduler quanta
per item, while a Condition wakeup costs microseconds.

run_pipeline chains stages with RingQueues, one thread per stage, and
measures steady-state behaviour.  The expected algebra, which the stub-stage
tests pin down: the inter-frame period converges to the slowest stage's
duration (stages overlap on consecutive items), while one item's latency is
the sum of all stage durations, provided admission is paced at the period
so queues stay empty.  Free-running admission instead fills every queue and
inflates latency by the queueing time, which is why the harness measures
period free-running and latency paced.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from clusterpt.errors import PipelineError

__all__ = ["RingQueue", "POISON", "PipelineStats", "run_pipeline",
           "profile_pipeline", "DEFAULT_QUEUE_CAPACITY"]

DEFAULT_QUEUE_CAPACITY = 3

# sentinel that flows through and shuts down each stage in turn
POISON = object()


class RingQueue:
    """Bounded single-producer single-consumer FIFO.

    Indices only ever increase; the slot for item i is i % capacity.  The
    producer owns _w, the consumer owns _r, and each reads the other's index
    at worst stale, which errs on the safe side (queue looks fuller/emptier
    than it is, never the reverse).
    """

    __slots__ = ("_buf", "_cap", "_w", "_r", "_lock", "_not_empty",
                 "_not_full", "_pop_waiting", "_push_waiting")

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._buf = [None] * capacity
        self._cap = capacity
        self._w = 0
        self._r = 0
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)
        self._pop_waiting = 0
        self._push_waiting = 0

    @property
    def capacity(self) -> int:
        return self._cap

    def __len__(self) -> int:
        return self._w - self._r

    def try_push(self, item) -> bool:
        """Producer only. False when full."""
        if self._w - self._r >= self._cap:
            return False
        self._buf[self._w % self._cap] = item
        self._w += 1
        if self._pop_waiting:
            with self._lock:
                self._not_empty.notify()
        return True

    def try_pop(self):
        """Consumer only. (ok, item); ok is False when empty."""
        if self._w == self._r:
            return False, None
        item = self._buf[self._r % self._cap]
        self._buf[self._r % self._cap] = None
        self._r += 1
        if self._push_waiting:
            with self._lock:
                self._not_full.notify()
        return True, item

    def push(self, item, timeout: float | None = None) -> bool:
        """Blocking push; False only on timeout."""
        if self.try_push(item):
            return True
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            self._push_waiting += 1
            try:
                while self._w - self._r >= self._cap:
                    if deadline is None:
                        self._not_full.wait()
                    else:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0 or not self._not_full.wait(remaining):
                            if self._w - self._r < self._cap:
                                break
                            return False
                self._buf[self._w % self._cap] = item
                self._w += 1
            finally:
                self._push_waiting -= 1
            if self._pop_waiting:
                self._not_empty.notify()
        return True

    def pop(self, timeout: float | None = None):
        """Blocking pop; (ok, item), ok False only on timeout."""
        ok, item = self.try_pop()
        if ok:
            return True, item
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            self._pop_waiting += 1
            try:
                while self._w == self._r:
                    if deadline is None:
                        self._not_empty.wait()
                    else:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0 or not self._not_empty.wait(remaining):
                            if self._w != self._r:
                                break
                            return False, None
                item = self._buf[self._r % self._cap]
                self._buf[self._r % self._cap] = None
                self._r += 1
            finally:
                self._pop_waiting -= 1
            if self._push_waiting:
                self._not_full.notify()
        return True, item


@dataclass
class PipelineStats:
    """Steady-state measurements of one pipeline run."""

    n_items: int
    period_s: float            # median inter-departure time at the sink
    latency_s: float           # median admission-to-departure time
    busy_fraction: list        # per stage, stage time / run wall time
    wall_s: float
    pace_s: float | None       # admission pacing used (None = free-running)

    @property
    def throughput_ips(self) -> float:
        return 1.0 / self.period_s if self.period_s > 0 else float("inf")

    def to_csv(self) -> str:
        head = "n_items,period_ms,latency_ms,wall_s,pace_ms," + ",".join(
            f"busy{idx}" for idx in range(len(self.busy_fraction)))
        pace = "" if self.pace_s is None else f"{self.pace_s * 1e3:.3f}"
        row = (f"{self.n_items},{self.period_s * 1e3:.3f},"
               f"{self.latency_s * 1e3:.3f},{self.wall_s:.3f},{pace},"
               + ",".join(f"{b:.4f}" for b in self.busy_fraction))
        return head + "\n" + row + "\n"


def _median(xs: list) -> float:
    s = sorted(xs)
    n = len(s)
    if n == 0:
        return 0.0
    mid = n // 2
    return s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])


def run_pipeline(stages: list, items: list, capacity: int = DEFAULT_QUEUE_CAPACITY,
                 pace_s: float | None = None) -> PipelineStats:
    """Push items through `stages` (callables, one thread each) and measure.

    pace_s None admits items as fast as backpressure allows (measures the
    steady-state period); a positive pace admits on a fixed schedule
    (measures per-item latency with empty queues).  Stage exceptions
    propagate as PipelineError carrying the item index.
    """
    n_stages = len(stages)
    if n_stages == 0:
        raise PipelineError("pipeline needs at least one stage")
    n = len(items)
    queues = [RingQueue(capacity) for _ in range(n_stages + 1)]
    busy = [0.0] * n_stages
    errors: list = []
    # a dead stage stops consuming, so every blocking queue wait upstream of
    # it must be able to bail out; abort is checked on each timed retry
    abort = threading.Event()
    _TICK = 0.05

    def push_or_abort(q: RingQueue, item) -> bool:
        while not q.push(item, timeout=_TICK):
            if abort.is_set():
                return False
        return True

    def stage_worker(si: int, fn) -> None:
        q_in, q_out = queues[si], queues[si + 1]
        while True:
            ok, got = q_in.pop(timeout=_TICK)
            if not ok:
                if abort.is_set():
                    q_out.try_push(POISON)
                    return
                continue
            if got is POISON:
                push_or_abort(q_out, POISON)
                return
            i, item = got
            t0 = time.perf_counter()
            try:
                item = fn(item)
            except Exception as exc:  # noqa: BLE001 - reported as PipelineError
                errors.append((i, exc))
                abort.set()
                q_out.try_push(POISON)
                return
            busy[si] += time.perf_counter() - t0
            if not push_or_abort(q_out, (i, item)):
                return

    threads = [threading.Thread(target=stage_worker, args=(si, fn), daemon=True)
               for si, fn in enumerate(stages)]

    t_admit = [0.0] * n
    t_depart = [0.0] * n
    done = threading.Event()

    def sink() -> None:
        remaining = n
        while remaining:
            ok, got = queues[-1].pop(timeout=_TICK)
            if not ok:
                if abort.is_set():
                    break
                continue
            if got is POISON:
                break
            i, _ = got
            t_depart[i] = time.perf_counter()
            remaining -= 1
        done.set()

    sink_t = threading.Thread(target=sink, daemon=True)
    wall0 = time.perf_counter()
    for t in threads:
        t.start()
    sink_t.start()

    start = time.perf_counter()
    for i, item in enumerate(items):
        if pace_s is not None:
            target = start + i * pace_s
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        if not push_or_abort(queues[0], (i, item)):
            break
        t_admit[i] = time.perf_counter()
    push_or_abort(queues[0], POISON)

    done.wait()
    wall = time.perf_counter() - wall0
    for t in threads:
        t.join(timeout=5.0)
    if errors:
        i, exc = errors[0]
        raise PipelineError(f"stage failed on item {i}: {exc!r}", frame_id=i) from exc

    # steady-state window: skip the pipe-fill head and the drain tail
    lo = max(2 * n_stages, n // 10)
    hi = max(lo + 1, n - max(1, n // 20))
    gaps = [t_depart[i] - t_depart[i - 1] for i in range(lo + 1, hi)]
    lats = [t_depart[i] - t_admit[i] for i in range(lo, hi)]
    return PipelineStats(
        n_items=n,
        period_s=_median(gaps),
        latency_s=_median(lats),
        busy_fraction=[b / wall for b in busy],
        wall_s=wall,
        pace_s=pace_s,
    )


def profile_pipeline(stages: list, items: list,
                     capacity: int = DEFAULT_QUEUE_CAPACITY) -> tuple:
    """Two-phase measurement: free-run for the period, then re-run paced at
    that period for the latency.  Returns (free_stats, paced_stats)."""
    free = run_pipeline(stages, items, capacity, pace_s=None)
    paced = run_pipeline(stages, items, capacity, pace_s=free.period_s * 1.05)
    return free, paced
