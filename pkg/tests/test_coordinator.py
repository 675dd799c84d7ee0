import copy
import math

import pytest

from bubblefill.coordinator import FIFO, SJF, Coordinator, OrderingPolicy, QueueEntry
from bubblefill.partition import Infeasible
from bubblefill.pipeline import BubbleCycle, BubbleKind, BubbleSpec
from bubblefill.workload import JobKind, LayerProfile, ModelProfile, JobSpec

GB = 1_000_000_000


def make_cycle(usables_ms=(10.0, 10.0), mems=(4 * GB, 4 * GB), period_ms=100.0):
    kinds = (BubbleKind.FWD_BWD, BubbleKind.FILL_DRAIN)
    bubbles = tuple(
        BubbleSpec(int(u * 1000), int(u * 1000), m, k)
        for u, m, k in zip(usables_ms, mems, kinds)
    )
    return BubbleCycle(bubbles=bubbles, period_us=int(period_ms * 1000), stage_id=0)


def make_model(exec_ms=1.0, transient=1000, weight=0, name="toy", batch_sizes=(1,)):
    layers = (
        LayerProfile(
            exec_time_ms={b: exec_ms * b for b in batch_sizes},
            mem_bytes={b: weight + transient * b for b in batch_sizes},
            weight_bytes=weight,
            flops_per_sample=1e9,
        ),
    )
    return ModelProfile(name, layers, 1_000_000, frozenset({JobKind.BATCH_INFERENCE, JobKind.TRAINING}))


def job(job_id, samples, arrival=0.0, model=None):
    return JobSpec(job_id, arrival, model or make_model(), JobKind.BATCH_INFERENCE, samples)


def coord(workers=2, ordering=FIFO, **cycle_kw):
    return Coordinator(0, make_cycle(**cycle_kw), workers, ordering, max_batches_per_bubble=16)


class TestAdmit:
    def test_fifo_chunking(self):
        c = coord(workers=2)
        c.admit(job("J", 20))
        assert c.queue == [QueueEntry("J", 1, 10), QueueEntry("J", 11, 20)]

    def test_uneven_chunking_covers_all_samples(self):
        c = coord(workers=3)
        c.admit(job("J", 10))
        assert c.sample_coverage("J") == [(1, 4), (5, 8), (9, 10)]

    def test_sjf_short_job_jumps_ahead(self):
        c = coord(workers=1, ordering=SJF)
        c.admit(job("long", 1000))
        c.admit(job("short", 10))
        assert [e.job_id for e in c.queue] == ["short", "long"]

    def test_sjf_never_reorders_dispatched(self):
        c = coord(workers=1, ordering=SJF)
        c.admit(job("long", 1000))
        item = c.request_work(0, now_s=0.0)
        assert item.entry.job_id == "long"
        c.admit(job("short", 10))
        # the dispatched long range keeps running; only the queue reorders
        assert [e.job_id for e in c.queue] == ["short"]
        assert c.worker_job[0] == "long"

    def test_sjf_blocks_sorted_by_processing_time(self):
        import random

        rng = random.Random(4)
        c = coord(workers=2, ordering=SJF)
        for i in range(12):
            c.admit(job(f"J{i}", rng.randint(10, 5000)))
        keys = [c.proc_key[e.job_id] for e in c.queue]
        assert keys == sorted(keys)

    def test_concurrent_interleaves_like_alternating_ranges(self):
        c = Coordinator(0, make_cycle(), 2, OrderingPolicy("concurrent", chunk_samples=10))
        c.admit(job("J1", 20))
        c.admit(job("J2", 20))
        assert [(e.job_id, e.lo, e.hi) for e in c.queue] == [
            ("J1", 1, 10),
            ("J2", 1, 10),
            ("J1", 11, 20),
            ("J2", 11, 20),
        ]

    def test_infeasible_job_rejected(self):
        c = coord()
        fat = make_model(transient=100 * GB)
        with pytest.raises(Infeasible):
            c.admit(job("fat", 10, model=fat))
        assert c.queue == []

    def test_duplicate_admit_rejected(self):
        c = coord()
        c.admit(job("J", 10))
        with pytest.raises(ValueError):
            c.admit(job("J", 10))


class TestRequestWork:
    def test_empty_queue_is_idle(self):
        c = coord()
        assert c.request_work(0, 0.0) is None

    def test_reuse_flag_for_consecutive_ranges(self):
        c = coord(workers=2)
        c.admit(job("J", 20))  # two ranges, both pulled by worker 0
        first = c.request_work(0, 0.0)
        assert first.reuse is False
        second = c.request_work(0, 0.0)
        assert second.reuse is True

    def test_no_reuse_across_jobs(self):
        c = coord(workers=1)
        c.admit(job("A", 10))
        c.admit(job("B", 10))
        a = c.request_work(0, 0.0)
        b = c.request_work(0, 0.0)
        assert a.entry.job_id == "A" and b.entry.job_id == "B"
        assert b.reuse is False

    def test_bad_worker_id(self):
        c = coord(workers=2)
        with pytest.raises(ValueError):
            c.request_work(2, 0.0)

    def test_work_conservation(self):
        c = coord(workers=2)
        c.admit(job("J", 30))
        pops = 0
        while c.request_work(pops % 2, 0.0) is not None:
            pops += 1
        assert pops == 2
        assert c.queue == []

    def test_conservation_of_sample_ranges(self):
        c = coord(workers=3)
        c.admit(job("J", 100))
        c.request_work(0, 0.0)
        cover = c.sample_coverage("J")
        assert cover[0][0] == 1 and cover[-1][1] == 100
        for (a, b), (x, y) in zip(cover, cover[1:]):
            assert x == b + 1


class TestPrediction:
    def test_single_job_single_worker(self):
        # 5 batches fit per 5ms bubble, so 10 samples/cycle at 100ms period:
        # tps is exactly 10ms/sample and 1000 samples predict 10.0s.
        c = coord(workers=1, usables_ms=(5.0, 5.0))
        plan = c.admit(job("J", 1000))
        assert plan.total_tps_ms == pytest.approx(10.0)
        assert c.estimate_jct("J", 0.0) == pytest.approx(10.0)

    def test_two_workers_halve_jct(self):
        c = coord(workers=2, usables_ms=(5.0, 5.0))
        c.admit(job("J", 1000))
        assert c.estimate_jct("J", 0.0) == pytest.approx(5.0)

    def test_backlog_adds_queueing_time(self):
        c = coord(workers=1, usables_ms=(5.0, 5.0))
        c.admit(job("A", 1000))  # 10s of work
        _, jcts = c.hypothetical_plan(job("B", 1000), now_s=0.0)
        assert jcts["B"] == pytest.approx(20.0)

    def test_head_of_queue_equals_own_processing(self):
        c = coord(workers=1)
        c.admit(job("J", 500))
        assert c.estimate_jct("J", 0.0) == pytest.approx(c.estimate_proc_s(job("X", 500)))

    def test_k_equal_jobs_fifo(self):
        # each job: 100 samples at 20/cycle -> 5 cycles -> 0.5s
        c = coord(workers=1)
        for i in range(4):
            c.admit(job(f"J{i}", 100))
        assert c.estimate_jct("J3", 0.0) == pytest.approx(4 * 0.5)
        assert c.estimate_jct("J0", 0.0) == pytest.approx(0.5)

    def test_completed_job_has_zero_remaining(self):
        c = coord(workers=1)
        c.admit(job("J", 10))
        item = c.request_work(0, 0.0)
        done = c.on_range_done(0, item, item.wall_s)
        assert done == "J"
        assert c.estimate_jct("J", item.wall_s) == 0.0

    def test_unknown_job(self):
        c = coord()
        with pytest.raises(KeyError):
            c.estimate_jct("nope", 0.0)

    def test_hypothetical_plan_is_pure(self):
        c = coord(workers=2)
        c.admit(job("A", 100))
        before = (
            list(c.queue),
            dict(c.undispatched),
            dict(c.inflight),
            list(c.busy_until_s),
            dict(c.proc_key),
        )
        c.hypothetical_plan(job("B", 1000), now_s=0.0)
        after = (
            list(c.queue),
            dict(c.undispatched),
            dict(c.inflight),
            list(c.busy_until_s),
            dict(c.proc_key),
        )
        assert before == after

    def test_infeasible_hypothetical_is_infinite(self):
        c = coord()
        fat = make_model(transient=100 * GB, name="fat")
        _, jcts = c.hypothetical_plan(job("F", 10, model=fat), now_s=0.0)
        assert math.isinf(jcts["F"])

    def test_prediction_includes_in_flight_ranges(self):
        c = coord(workers=1)
        c.admit(job("J", 1000))
        item = c.request_work(0, 0.0)
        # fully dispatched; its JCT now equals the in-flight remainder
        assert c.estimate_jct("J", 2.0) == pytest.approx(item.wall_s - 2.0)
