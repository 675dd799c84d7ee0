"""Per-stage fill-job management.

One coordinator owns the fill-job queue of a single pipeline stage: it
builds an execution plan for every admitted job, splits the job's samples
into ranges for data-parallel dispatch across the stage's workers, keeps
the queue ordered by policy, and answers what-if queries (how would the
queue and everyone's completion times look if this job were added) without
mutating anything.

Dispatched ranges are never reordered or preempted; ordering policies act
on the undispatched tail only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .partition import DEFAULT_MAX_BATCHES, ExecutionPlan, Infeasible, dp_optimal_plan
from .pipeline import BubbleCycle
from .workload import JobSpec


@dataclass(frozen=True)
class OrderingPolicy:
    """fifo | sjf | concurrent; concurrent interleaves fixed-size chunks."""

    kind: str
    chunk_samples: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("fifo", "sjf", "concurrent"):
            raise ValueError(f"unknown ordering policy {self.kind!r}")
        if self.kind == "concurrent":
            if self.chunk_samples is None or self.chunk_samples < 1:
                raise ValueError("concurrent ordering needs chunk_samples >= 1")
        elif self.chunk_samples is not None:
            raise ValueError(f"{self.kind} ordering takes no chunk_samples")


FIFO = OrderingPolicy("fifo")
SJF = OrderingPolicy("sjf")


@dataclass(frozen=True)
class QueueEntry:
    """Samples [lo, hi] (1-based, inclusive) of one job."""

    job_id: str
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not 1 <= self.lo <= self.hi:
            raise ValueError(f"bad sample range [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class WorkItem:
    """One dispatch: run `entry` under `plan`; reuse says the worker already
    holds this job's executable."""

    entry: QueueEntry
    plan: ExecutionPlan
    reuse: bool
    wall_s: float
    busy_s: float


class Coordinator:
    """Single logical actor for one pipeline stage; not thread-safe."""

    def __init__(
        self,
        stage_id: int,
        cycle: BubbleCycle,
        workers: int,
        ordering: OrderingPolicy = FIFO,
        batch_sizes=None,
        max_batches_per_bubble: int = DEFAULT_MAX_BATCHES,
    ):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.stage_id = stage_id
        self.cycle = cycle
        self.workers = workers
        self.ordering = ordering
        self.batch_sizes = batch_sizes
        self.max_batches = max_batches_per_bubble

        self.queue: list[QueueEntry] = []
        self.executables: dict[str, ExecutionPlan] = {}
        self.jobs: dict[str, JobSpec] = {}
        self.proc_key: dict[str, tuple[float, int]] = {}  # SJF: (proc estimate, admit seq)
        self.busy_until_s: list[float] = [0.0] * workers
        self.worker_job: list[Optional[str]] = [None] * workers  # in-flight job per worker
        self.worker_last_job: list[Optional[str]] = [None] * workers
        self.undispatched: dict[str, int] = {}  # entries still queued per job
        self.inflight: dict[str, int] = {}
        self.dispatched_ranges: dict[str, list[QueueEntry]] = {}
        self.completed_at_s: dict[str, float] = {}
        self._admit_seq = 0
        self._plan_cache: dict[tuple, ExecutionPlan] = {}

    # -- admission ---------------------------------------------------------

    def _split_ranges(self, job: JobSpec) -> list[QueueEntry]:
        if self.ordering.kind == "concurrent":
            chunk = self.ordering.chunk_samples
        else:
            chunk = math.ceil(job.samples / self.workers)
        ranges = []
        lo = 1
        while lo <= job.samples:
            hi = min(job.samples, lo + chunk - 1)
            ranges.append(QueueEntry(job.id, lo, hi))
            lo = hi + 1
        return ranges

    def _insert(self, queue: list[QueueEntry], entries: list[QueueEntry],
                proc_key: tuple[float, int]) -> list[QueueEntry]:
        """Pure insertion per the ordering policy; `queue` is not mutated."""
        if self.ordering.kind == "fifo":
            return queue + entries
        if self.ordering.kind == "sjf":
            # keep undispatched blocks sorted by processing-time estimate
            pos = len(queue)
            for i, entry in enumerate(queue):
                if self.proc_key.get(entry.job_id, (math.inf, 0)) > proc_key:
                    pos = i
                    break
            return queue[:pos] + entries + queue[pos:]
        # concurrent: round-robin interleave over jobs, in order of first
        # appearance in the current queue
        remaining: dict[str, list[QueueEntry]] = {}
        order: list[str] = []
        for entry in queue + entries:
            if entry.job_id not in remaining:
                remaining[entry.job_id] = []
                order.append(entry.job_id)
            remaining[entry.job_id].append(entry)
        mixed: list[QueueEntry] = []
        while any(remaining[j] for j in order):
            for j in order:
                if remaining[j]:
                    mixed.append(remaining[j].pop(0))
        return mixed

    def plan_for(self, job: JobSpec) -> ExecutionPlan:
        """Build this stage's executable for a job (raises Infeasible).

        Plans depend only on the model and this stage's cycle, so they are
        cached per model content.
        """
        key = job.model.fingerprint()
        plan = self._plan_cache.get(key)
        if plan is None:
            plan = dp_optimal_plan(job.model, self.cycle, self.batch_sizes, self.max_batches)
            self._plan_cache[key] = plan
        return plan

    def admit(self, job: JobSpec) -> ExecutionPlan:
        if job.id in self.jobs:
            raise ValueError(f"job {job.id} already admitted")
        plan = self.plan_for(job)
        entries = self._split_ranges(job)
        key = (self.estimate_proc_s(job, plan), self._admit_seq)
        self._admit_seq += 1
        self.queue = self._insert(self.queue, entries, key)
        self.jobs[job.id] = job
        self.executables[job.id] = plan
        self.proc_key[job.id] = key
        self.undispatched[job.id] = len(entries)
        self.inflight[job.id] = 0
        self.dispatched_ranges[job.id] = []
        return plan

    # -- dispatch ----------------------------------------------------------

    def request_work(self, worker_id: int, now_s: float) -> Optional[WorkItem]:
        """Pop the head entry for this worker; None when the queue is empty."""
        if not 0 <= worker_id < self.workers:
            raise ValueError(f"worker {worker_id} out of range")
        if not self.queue:
            return None
        entry = self.queue.pop(0)
        reuse = self.worker_last_job[worker_id] == entry.job_id
        plan = self.executables[entry.job_id]
        wall_s = plan.range_wall_us(entry.size) / 1e6
        busy_s = plan.range_busy_us(entry.size) / 1e6
        self.worker_last_job[worker_id] = entry.job_id
        self.worker_job[worker_id] = entry.job_id
        self.busy_until_s[worker_id] = now_s + wall_s
        self.undispatched[entry.job_id] -= 1
        self.inflight[entry.job_id] += 1
        self.dispatched_ranges[entry.job_id].append(entry)
        return WorkItem(entry, plan, reuse, wall_s, busy_s)

    def on_range_done(self, worker_id: int, item: WorkItem, now_s: float) -> Optional[str]:
        """Bookkeeping when a dispatched range finishes; returns the job id
        if this was its last outstanding range."""
        job_id = item.entry.job_id
        self.worker_job[worker_id] = None
        self.inflight[job_id] -= 1
        if self.inflight[job_id] == 0 and self.undispatched[job_id] == 0:
            self.completed_at_s[job_id] = now_s
            return job_id
        return None

    # -- prediction --------------------------------------------------------

    def rem_times_s(self, now_s: float) -> list[float]:
        return [max(0.0, t - now_s) for t in self.busy_until_s]

    def estimate_proc_s(self, job: JobSpec, plan: ExecutionPlan | None = None) -> float:
        """Processing time for the job alone on this stage's idle workers."""
        if plan is None:
            plan = self.executables.get(job.id) or self.plan_for(job)
        finish = [0.0] * self.workers
        for entry in self._split_ranges(job):
            w = min(range(self.workers), key=lambda i: (finish[i], i))
            finish[w] += plan.range_wall_us(entry.size) / 1e6
        return max(finish)

    def _predict_jcts(self, queue: list[QueueEntry], now_s: float,
                      extra: dict[str, ExecutionPlan]) -> dict[str, float]:
        """Replay dispatch of `queue` over current worker backlogs; returns
        seconds-from-now until each outstanding job completes."""
        avail = self.rem_times_s(now_s)
        finish: dict[str, float] = {}
        for w, job_id in enumerate(self.worker_job):
            if job_id is not None:
                finish[job_id] = max(finish.get(job_id, 0.0), avail[w])
        for job_id in self.jobs:
            if job_id not in self.completed_at_s:
                finish.setdefault(job_id, 0.0)
        plans = {**self.executables, **extra}
        for entry in queue:
            plan = plans[entry.job_id]
            wall = plan.range_wall_us(entry.size) / 1e6
            w = min(range(self.workers), key=lambda i: (avail[i], i))
            avail[w] += wall
            finish[entry.job_id] = max(finish.get(entry.job_id, 0.0), avail[w])
        return finish

    def hypothetical_plan(
        self, job: JobSpec | None, now_s: float
    ) -> tuple[list[QueueEntry], dict[str, float]]:
        """The queue and predicted completion times if `job` were admitted.

        Pure: the coordinator is left untouched. An infeasible job yields an
        infinite completion time and the unchanged queue.
        """
        if job is None:
            return list(self.queue), self._predict_jcts(list(self.queue), now_s, {})
        if job.id in self.jobs:
            raise ValueError(f"job {job.id} already admitted")
        try:
            plan = self.plan_for(job)
        except Infeasible:
            jcts = self._predict_jcts(list(self.queue), now_s, {})
            jcts[job.id] = math.inf
            return list(self.queue), jcts
        entries = self._split_ranges(job)
        key = (self.estimate_proc_s(job, plan), self._admit_seq)
        queue = self._insert(list(self.queue), entries, key)
        return queue, self._predict_jcts(queue, now_s, {job.id: plan})

    def estimate_jct(self, job_id: str, now_s: float) -> float:
        """Seconds from now until `job_id` completes; 0 once it is done."""
        if job_id in self.completed_at_s:
            return 0.0
        if job_id not in self.jobs:
            raise KeyError(f"unknown job {job_id}")
        return self._predict_jcts(list(self.queue), now_s, {})[job_id]

    # -- invariant helpers (used by tests) -----------------------------------

    def sample_coverage(self, job_id: str) -> list[tuple[int, int]]:
        """Dispatched plus queued ranges of a job, sorted."""
        ranges = [(e.lo, e.hi) for e in self.dispatched_ranges[job_id]]
        ranges += [(e.lo, e.hi) for e in self.queue if e.job_id == job_id]
        return sorted(ranges)
