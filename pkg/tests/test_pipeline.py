import threading
import time

import pytest

from clusterpt.errors import PipelineError
from clusterpt.pipeline import (DEFAULT_QUEUE_CAPACITY, POISON, PipelineStats,
                                RingQueue, profile_pipeline, run_pipeline)


class TestRingQueueSingleThread:
    def test_fifo(self):
        q = RingQueue(4)
        for i in range(4):
            assert q.try_push(i)
        assert [q.try_pop()[1] for _ in range(4)] == [0, 1, 2, 3]

    def test_capacity_bound(self):
        q = RingQueue(2)
        assert q.try_push("a") and q.try_push("b")
        assert not q.try_push("c")
        assert len(q) == 2
        ok, item = q.try_pop()
        assert ok and item == "a"
        assert q.try_push("c")
        assert not q.try_push("d")

    def test_empty_pop(self):
        q = RingQueue(2)
        ok, item = q.try_pop()
        assert not ok and item is None

    def test_wraparound_reuses_slots(self):
        q = RingQueue(3)
        out = []
        for i in range(50):
            assert q.try_push(i)
            out.append(q.try_pop()[1])
        assert out == list(range(50))

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            RingQueue(0)

    def test_pop_timeout(self):
        q = RingQueue(1)
        t0 = time.monotonic()
        ok, item = q.pop(timeout=0.05)
        assert not ok and item is None
        assert time.monotonic() - t0 >= 0.04

    def test_push_timeout(self):
        q = RingQueue(1)
        assert q.push("x")
        assert not q.push("y", timeout=0.05)

    def test_popped_slot_drops_its_reference(self):
        q = RingQueue(2)
        q.try_push(object())
        q.try_pop()
        assert q._buf == [None, None]


class TestRingQueueTwoThreads:
    def test_blocking_push_wakes_on_pop(self):
        q = RingQueue(1)
        q.push(0)
        got = []

        def consumer():
            time.sleep(0.05)
            got.append(q.pop()[1])
            got.append(q.pop()[1])

        t = threading.Thread(target=consumer)
        t.start()
        assert q.push(1, timeout=5.0)  # blocks until the consumer drains
        t.join()
        assert got == [0, 1]

    def test_stress_no_loss_no_duplication(self):
        # 200k items here; the acceptance suite runs the one-million case
        n = 200_000
        q = RingQueue(8)
        out = []

        def producer():
            for i in range(n):
                q.push(i)
            q.push(POISON)

        def consumer():
            while True:
                _, item = q.pop()
                if item is POISON:
                    return
                out.append(item)

        p = threading.Thread(target=producer)
        c = threading.Thread(target=consumer)
        p.start(); c.start()
        p.join(timeout=30); c.join(timeout=30)
        assert not p.is_alive() and not c.is_alive()
        assert out == list(range(n))

    def test_len_never_exceeds_capacity_under_load(self):
        q = RingQueue(3)
        n = 20_000
        max_seen = 0

        def producer():
            for i in range(n):
                q.push(i)
            q.push(POISON)

        def consumer():
            nonlocal max_seen
            while True:
                max_seen = max(max_seen, len(q))
                _, item = q.pop()
                if item is POISON:
                    return

        p = threading.Thread(target=producer)
        c = threading.Thread(target=consumer)
        p.start(); c.start()
        p.join(timeout=30); c.join(timeout=30)
        assert max_seen <= 3


def ms(x: float):
    def stage(item):
        time.sleep(x / 1e3)
        return item
    return stage


class TestRunPipeline:
    def test_all_items_arrive_in_order(self):
        stats = run_pipeline([lambda x: x + 1, lambda x: x * 2],
                             list(range(40)))
        assert stats.n_items == 40
        assert stats.period_s >= 0.0

    def test_stage_error_becomes_pipeline_error(self):
        def boom(item):
            if item == 7:
                raise RuntimeError("bad item")
            return item

        with pytest.raises(PipelineError) as err:
            run_pipeline([boom], list(range(20)))
        assert "7" in str(err.value)

    def test_no_stages_rejected(self):
        with pytest.raises(PipelineError):
            run_pipeline([], [1, 2, 3])

    def test_stats_csv_shape(self):
        stats = PipelineStats(n_items=10, period_s=0.03, latency_s=0.06,
                              busy_fraction=[0.5, 0.9], wall_s=0.4,
                              pace_s=None)
        head, row, tail = stats.to_csv().split("\n")
        assert head.split(",") == ["n_items", "period_ms", "latency_ms",
                                   "wall_s", "pace_ms", "busy0", "busy1"]
        assert row.split(",")[0] == "10"
        assert row.split(",")[1] == "30.000"
        assert tail == ""
        assert stats.throughput_ips == pytest.approx(1 / 0.03)

    def test_period_tracks_slowest_stage(self):
        # small-scale version of the stub-stage algebra; the acceptance
        # suite pins the full tolerances
        free = run_pipeline([ms(2), ms(8), ms(4)], list(range(60)))
        assert free.period_s == pytest.approx(8e-3, rel=0.35)

    def test_paced_latency_is_sum_of_stages(self):
        paced = run_pipeline([ms(2), ms(8), ms(4)], list(range(60)),
                             pace_s=9e-3)
        assert paced.latency_s == pytest.approx(14e-3, rel=0.35)

    def test_profile_returns_free_then_paced(self):
        free, paced = profile_pipeline([ms(1), ms(3)], list(range(50)))
        assert free.pace_s is None
        assert paced.pace_s == pytest.approx(free.period_s * 1.05)
        assert paced.latency_s <= free.latency_s + 5e-3


def test_default_capacity_is_small():
    # pipelining wants just enough slack to overlap stages, not a deep
    # buffer that hides latency
    assert 1 <= DEFAULT_QUEUE_CAPACITY <= 4
