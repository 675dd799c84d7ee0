"""Routing of arriving fill jobs across pipeline-stage coordinators.

Two families of scoring are supported. Plan-query routing asks every
coordinator what its queue and completion times would look like with the
new job inserted and picks the coordinator whose completion-time sum grows
the least (equivalently, whose average completion time increases the
least). Per-executor score functions rank (job, executor) pairs directly:
shortest-job-first scores a job by the inverse of its best processing time
anywhere, and makespan-minimizing scores a placement by the inverse of the
cluster-wide maximum busy time it would produce. Scores compose by weighted
sum. Round-robin and shortest-queue are the deliberately plan-blind
baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .coordinator import Coordinator
from .partition import Infeasible
from .workload import JobSpec


@dataclass(frozen=True)
class Sjf:
    pass


@dataclass(frozen=True)
class MakespanMin:
    pass


@dataclass(frozen=True)
class AvgJct:
    pass


@dataclass(frozen=True)
class Composite:
    parts: tuple[tuple[float, "ScoringPolicy"], ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("composite policy needs at least one part")
        if any(w < 0 for w, _ in self.parts):
            raise ValueError("composite weights must be >= 0")
        if all(w == 0 for w, _ in self.parts):
            raise ValueError("composite needs at least one positive weight")


ScoringPolicy = Union[Sjf, MakespanMin, AvgJct, Composite]


@dataclass(frozen=True)
class JobView:
    """A job as the router sees it: processing time per coordinator."""

    proc_times_s: tuple[float, ...]
    arrival_s: float
    deadline_s: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.proc_times_s:
            raise ValueError("proc_times_s must not be empty")
        if any(t <= 0 for t in self.proc_times_s):
            raise ValueError("processing times must be > 0 (inf marks infeasible)")


def avg_jct_score(plans: Sequence[Sequence[float]]) -> float:
    """Mean predicted completion time over every job in every plan."""
    jcts = [t for plan in plans for t in plan]
    if not jcts:
        raise ValueError("no jobs across plans")
    return sum(jcts) / len(jcts)


def executor_score(policy: ScoringPolicy, job: JobView, rem_times_s: Sequence[float], i: int) -> float:
    """Score of placing `job` on executor i given everyone's backlog."""
    if not 0 <= i < len(rem_times_s):
        raise ValueError(f"executor index {i} out of range")
    if isinstance(policy, Sjf):
        return 1.0 / min(job.proc_times_s)
    if isinstance(policy, MakespanMin):
        # cluster-wide maximum busy time if the job lands on executor i
        landed = rem_times_s[i] + job.proc_times_s[i]
        others = max((t for k, t in enumerate(rem_times_s) if k != i), default=0.0)
        return 1.0 / max(landed, others)
    if isinstance(policy, Composite):
        return sum(w * executor_score(p, job, rem_times_s, i) for w, p in policy.parts)
    raise TypeError(f"policy {policy!r} has no executor score")


def pick_next_job(
    policy: ScoringPolicy,
    jobs: Sequence[tuple[str, JobView]],
    rem_times_s: Sequence[float],
    i: int,
) -> str:
    """Job to hand to executor i next: the score argmax, ties broken by
    earliest arrival and then id."""
    if not jobs:
        raise ValueError("no queued jobs")
    best_id = None
    best_key = None
    for job_id, view in jobs:
        key = (-executor_score(policy, view, rem_times_s, i), view.arrival_s, job_id)
        if best_key is None or key < best_key:
            best_key, best_id = key, job_id
    return best_id


def route_avg_jct(coordinators: Sequence[Coordinator], job: JobSpec, now_s: float) -> Optional[int]:
    """Coordinator whose completion-time sum grows the least; None when the
    job fits nowhere."""
    if not coordinators:
        raise ValueError("need at least one coordinator")
    best = None
    best_delta = math.inf
    for idx, c in enumerate(coordinators):
        _, before = c.hypothetical_plan(None, now_s)
        _, after = c.hypothetical_plan(job, now_s)
        delta = sum(after.values()) - sum(before.values())
        if delta < best_delta:
            best, best_delta = idx, delta
    return best if math.isfinite(best_delta) else None


def _proc_times(coordinators: Sequence[Coordinator], job: JobSpec) -> list[float]:
    times = []
    for c in coordinators:
        try:
            times.append(c.estimate_proc_s(job))
        except Infeasible:
            times.append(math.inf)
    return times


def route_makespan_min(coordinators: Sequence[Coordinator], job: JobSpec, now_s: float) -> Optional[int]:
    """Argmax of the makespan-minimizing executor score over coordinators."""
    proc = _proc_times(coordinators, job)
    if all(math.isinf(t) for t in proc):
        return None
    # a coordinator's backlog is the time until its own queue fully drains
    rem = [max(c.hypothetical_plan(None, now_s)[1].values(), default=0.0) for c in coordinators]
    view = JobView(tuple(proc), arrival_s=now_s)
    scores = [
        executor_score(MakespanMin(), view, rem, i) if math.isfinite(proc[i]) else 0.0
        for i in range(len(coordinators))
    ]
    return max(range(len(scores)), key=lambda i: (scores[i], -i))


def route_round_robin(counter: int, n_coordinators: int) -> int:
    """Plan-blind rotation; the caller advances the counter per arrival."""
    if n_coordinators < 1:
        raise ValueError("need at least one coordinator")
    return counter % n_coordinators


def route_shortest_queue(coordinators: Sequence[Coordinator]) -> int:
    """Plan-blind: fewest undispatched entries, ties to the lowest index."""
    if not coordinators:
        raise ValueError("need at least one coordinator")
    return min(range(len(coordinators)), key=lambda i: (len(coordinators[i].queue), i))
