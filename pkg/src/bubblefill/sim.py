"""Deterministic discrete-event simulation of bubble filling.

Events are fill-job arrivals and range completions; between events every
busy worker advances through whole bubble cycles of the main job. An
arriving job is routed to a pipeline-stage coordinator by the configured
policy, split into sample ranges, and dispatched whenever one of that
stage's workers goes idle. A job completes when its last range finishes;
range durations are rounded up to whole cycles, so a simulated completion
can trail the analytic estimate by at most one cycle period per partition.

Only one data-parallel replica of the main job is simulated; dp_replicas
scales the GPU count used for capacity metrics.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .coordinator import FIFO, Coordinator, OrderingPolicy
from .partition import Infeasible
from .pipeline import PipelineConfig, bubble_fraction, build_bubble_cycle
from .placer import route_avg_jct, route_makespan_min, route_round_robin, route_shortest_queue
from .workload import JobSpec, isolated_throughput

ROUTING_POLICIES = ("avg_jct", "makespan", "round_robin", "shortest_queue")


@dataclass(frozen=True)
class OverheadModel:
    """Piecewise-linear main-job slowdown as a function of fill fraction."""

    points: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.68, 1.0), (1.0, 1.10))

    def __post_init__(self) -> None:
        fs = [f for f, _ in self.points]
        slows = [s for _, s in self.points]
        if fs != sorted(fs) or len(set(fs)) != len(fs):
            raise ValueError("breakpoints must be strictly increasing")
        if any(s < 1.0 for s in slows) or slows != sorted(slows):
            raise ValueError("slowdown must be >= 1 and non-decreasing")

    def __call__(self, fill_fraction: float) -> float:
        pts = self.points
        if fill_fraction <= pts[0][0]:
            return pts[0][1]
        for (f0, s0), (f1, s1) in zip(pts, pts[1:]):
            if fill_fraction <= f1:
                return s0 + (s1 - s0) * (fill_fraction - f0) / (f1 - f0)
        return pts[-1][1]


DEFAULT_OVERHEAD = OverheadModel()


@dataclass(frozen=True)
class SimConfig:
    pipeline: PipelineConfig
    dp_replicas: int = 1
    workers_per_stage: int = 1
    routing: str = "avg_jct"
    ordering: OrderingPolicy = FIFO
    batch_sizes: tuple[int, ...] | None = None
    max_batches_per_bubble: int = 16
    overhead_model: OverheadModel = DEFAULT_OVERHEAD
    seed: int = 0
    horizon_s: float = 3600.0

    def __post_init__(self) -> None:
        if self.dp_replicas < 1:
            raise ValueError("dp_replicas must be >= 1")
        if self.workers_per_stage < 1:
            raise ValueError("workers_per_stage must be >= 1")
        if self.routing not in ROUTING_POLICIES:
            raise ValueError(f"routing must be one of {ROUTING_POLICIES}, got {self.routing!r}")

    @property
    def total_gpus(self) -> int:
        return self.pipeline.num_stages * self.workers_per_stage * self.dp_replicas


class EventKind(Enum):
    JOB_ARRIVAL = "job_arrival"
    JOB_COMPLETION = "job_completion"


@dataclass(frozen=True)
class SimEvent:
    time_s: float
    kind: EventKind
    job_id: str
    coordinator: Optional[int] = None

    def __post_init__(self) -> None:
        if self.time_s < 0:
            raise ValueError("event time must be >= 0")


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    arrival_s: float
    start_s: float
    completion_s: float
    coordinator: int
    fill_flops: float
    busy_s: float
    rel_perf: float  # active throughput (while in bubbles) / isolated throughput
    wall_slowdown: float  # isolated runtime stretch incl. waiting for bubbles

    @property
    def jct_s(self) -> float:
        return self.completion_s - self.arrival_s

    @property
    def fill_gpu_hours(self) -> float:
        return self.busy_s / 3600.0


@dataclass(frozen=True)
class SimReport:
    per_job: dict[str, JobRecord]
    rejected: tuple[str, ...]
    events: tuple[SimEvent, ...]
    avg_jct_s: float
    p99_jct_s: float
    makespan_s: float
    bubble_ratio: float
    recovered_tflops_wallclock: float
    recovered_tflops_active: float
    mean_rel_perf: float
    mean_fill_gpu_hours: float
    gpus_saved: float
    main_job_slowdown: float

    def scalars(self) -> dict[str, float | int]:
        return {
            "avg_jct_s": self.avg_jct_s,
            "p99_jct_s": self.p99_jct_s,
            "makespan_s": self.makespan_s,
            "bubble_ratio": self.bubble_ratio,
            "recovered_tflops_wallclock": self.recovered_tflops_wallclock,
            "recovered_tflops_active": self.recovered_tflops_active,
            "mean_rel_perf": self.mean_rel_perf,
            "mean_fill_gpu_hours": self.mean_fill_gpu_hours,
            "gpus_saved": self.gpus_saved,
            "main_job_slowdown": self.main_job_slowdown,
            "completed": len(self.per_job),
            "rejected": len(self.rejected),
        }


def gpus_saved(main_job_gpus: float, bubble_ratio: float, mean_rel_perf: float) -> float:
    """Capacity recovered by filling: GPU count x idle ratio x how fast fill
    jobs run in bubbles relative to exclusive GPUs."""
    return main_job_gpus * bubble_ratio * mean_rel_perf


class _RunState:
    def __init__(self, config: SimConfig, jobs: Sequence[JobSpec]):
        self.config = config
        self.jobs = {j.id: j for j in jobs}
        self.coordinators = [
            Coordinator(
                s,
                build_bubble_cycle(config.pipeline, s),
                config.workers_per_stage,
                config.ordering,
                config.batch_sizes,
                config.max_batches_per_bubble,
            )
            for s in range(config.pipeline.num_stages)
        ]
        self.assigned: dict[str, int] = {}
        self.start_s: dict[str, float] = {}
        self.busy_s: dict[str, float] = {}
        self.completion_s: dict[str, float] = {}
        self.rejected: list[str] = []
        self.events: list[SimEvent] = []
        self.rr_counter = 0


def _route(state: _RunState, job: JobSpec, now_s: float) -> Optional[int]:
    cfg = state.config
    cs = state.coordinators
    if cfg.routing == "avg_jct":
        return route_avg_jct(cs, job, now_s)
    if cfg.routing == "makespan":
        return route_makespan_min(cs, job, now_s)
    if cfg.routing == "shortest_queue":
        return route_shortest_queue(cs)
    idx = route_round_robin(state.rr_counter, len(cs))
    state.rr_counter += 1
    return idx


def run_sim(config: SimConfig, jobs: Sequence[JobSpec]) -> SimReport:
    """Run the event loop to completion and compute metrics.

    Jobs must be sorted by arrival and arrive within the horizon. A job that
    fits no coordinator is recorded as rejected and the run continues.
    """
    for a, b in zip(jobs, jobs[1:]):
        if a.arrival_s > b.arrival_s:
            raise ValueError("jobs must be sorted by arrival time")
    for j in jobs:
        if j.arrival_s > config.horizon_s:
            raise ValueError(f"job {j.id} arrives after the horizon")

    state = _RunState(config, jobs)

    # heap entries: (time, priority, seq, kind, payload); completions first
    heap: list[tuple] = []
    seq = 0
    for job in jobs:
        heapq.heappush(heap, (job.arrival_s, 1, seq, "arrival", job.id))
        seq += 1

    def dispatch(cidx: int, now_s: float) -> None:
        nonlocal seq
        coordinator = state.coordinators[cidx]
        for w in range(coordinator.workers):
            if coordinator.worker_job[w] is not None:
                continue
            item = coordinator.request_work(w, now_s)
            if item is None:
                break
            job_id = item.entry.job_id
            state.start_s.setdefault(job_id, now_s)
            state.busy_s[job_id] = state.busy_s.get(job_id, 0.0) + item.busy_s
            heapq.heappush(heap, (now_s + item.wall_s, 0, seq, "range_done", (cidx, w, item)))
            seq += 1

    while heap:
        now_s, _, _, kind, payload = heapq.heappop(heap)
        if kind == "arrival":
            job = state.jobs[payload]
            cidx = _route(state, job, now_s)
            admitted = False
            if cidx is not None:
                try:
                    state.coordinators[cidx].admit(job)
                    admitted = True
                except Infeasible:
                    admitted = False
            if not admitted:
                state.rejected.append(job.id)
                continue
            state.assigned[job.id] = cidx
            state.events.append(SimEvent(now_s, EventKind.JOB_ARRIVAL, job.id, cidx))
            dispatch(cidx, now_s)
        else:
            cidx, w, item = payload
            done = state.coordinators[cidx].on_range_done(w, item, now_s)
            if done is not None:
                state.completion_s[done] = now_s
                state.events.append(SimEvent(now_s, EventKind.JOB_COMPLETION, done, cidx))
            dispatch(cidx, now_s)

    return compute_metrics(state)


def compute_metrics(state: _RunState) -> SimReport:
    """Fold a finished run into the metrics bundle."""
    config = state.config
    ratio = bubble_fraction(config.pipeline.num_stages, config.pipeline.num_microbatches)

    per_job: dict[str, JobRecord] = {}
    for job_id, completion in state.completion_s.items():
        job = state.jobs[job_id]
        busy = state.busy_s[job_id]
        flops = job.samples * job.model.flops_per_sample
        iso = isolated_throughput(job.model, job.kind)
        rel = (job.samples / busy) / iso if busy > 0 else 0.0
        wall = completion - state.start_s[job_id]
        per_job[job_id] = JobRecord(
            job_id=job_id,
            arrival_s=job.arrival_s,
            start_s=state.start_s[job_id],
            completion_s=completion,
            coordinator=state.assigned[job_id],
            fill_flops=flops,
            busy_s=busy,
            rel_perf=rel,
            wall_slowdown=wall / (job.samples / iso) if wall > 0 else 1.0,
        )

    completed = sorted(per_job.values(), key=lambda r: r.job_id)
    jcts = sorted(r.jct_s for r in completed)
    avg_jct = sum(jcts) / len(jcts) if jcts else 0.0
    p99 = jcts[max(0, math.ceil(0.99 * len(jcts)) - 1)] if jcts else 0.0
    makespan = max((r.completion_s for r in completed), default=0.0)

    total_flops = sum(r.fill_flops for r in completed)
    total_busy = sum(r.busy_s for r in completed)
    wall_span = makespan - min((r.arrival_s for r in completed), default=0.0)
    gpus = config.total_gpus
    tflops_wall = total_flops / (wall_span * gpus) / 1e12 if wall_span > 0 else 0.0
    tflops_active = total_flops / total_busy / 1e12 if total_busy > 0 else 0.0
    mean_rel = sum(r.rel_perf for r in completed) / len(completed) if completed else 0.0
    mean_gpu_hours = (
        sum(r.fill_gpu_hours for r in completed) / len(completed) if completed else 0.0
    )

    return SimReport(
        per_job={r.job_id: r for r in completed},
        rejected=tuple(state.rejected),
        events=tuple(state.events),
        avg_jct_s=avg_jct,
        p99_jct_s=p99,
        makespan_s=makespan,
        bubble_ratio=float(ratio),
        recovered_tflops_wallclock=tflops_wall,
        recovered_tflops_active=tflops_active,
        mean_rel_perf=mean_rel,
        mean_fill_gpu_hours=mean_gpu_hours,
        gpus_saved=gpus_saved(gpus, float(ratio), mean_rel),
        main_job_slowdown=config.overhead_model(config.pipeline.fill_fraction),
    )


def sweep(configs: Sequence[SimConfig], jobs: Sequence[JobSpec]) -> list[SimReport]:
    """Independent runs of the same workload under each config variant."""
    return [run_sim(c, jobs) for c in configs]
