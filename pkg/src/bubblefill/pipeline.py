"""Bubble structure of a pipeline-parallel main job.

A stage of a synchronous pipeline schedule (GPipe or 1F1B) idles twice per
minibatch iteration: once between forward saturation and the arrival of the
first backward (fwd-bwd bubble) and once between draining one minibatch and
filling the next (fill-drain bubble). Both bubbles repeat every iteration,
so a stage's idle time is fully described by a small repeating cycle.

All durations are kept in integer microseconds so that the idle-fraction
identities hold exactly under rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

US_PER_MS = 1000

# Instruction-level enumeration is a test oracle; keep it at desk scale.
TIMELINE_ORACLE_CAP = 10_000

DEFAULT_FILL_FRACTION = 0.68


class ScheduleKind(Enum):
    GPIPE = "gpipe"
    ONE_F_ONE_B = "1f1b"


class BubbleKind(Enum):
    FWD_BWD = "fwd_bwd"
    FILL_DRAIN = "fill_drain"


def bubble_fraction(p: int, m: int) -> Fraction:
    """Idle fraction of one iteration for a p-stage, m-microbatch pipeline.

    Exact value (p - 1) / (m + p - 1); zero for a single stage.
    """
    if p < 1 or m < 1:
        raise ValueError(f"need p >= 1 and m >= 1, got p={p}, m={m}")
    return Fraction(p - 1, m + p - 1)


@dataclass(frozen=True)
class PipelineConfig:
    """Shape and timing of the main job, as seen by one data-parallel replica.

    t_fwd_ms / t_bwd_ms are the per-microbatch forward / backward times of a
    single stage. fwd_free_mem / drain_free_mem are the bytes left for fill
    jobs during each bubble kind. fill_fraction caps how much of every
    bubble's duration the filler may consume; the remainder absorbs context
    switching so the main job stays unaffected.
    """

    num_stages: int
    num_microbatches: int
    t_fwd_ms: float
    t_bwd_ms: float
    schedule: ScheduleKind = ScheduleKind.GPIPE
    fwd_free_mem: int = 4_500_000_000
    drain_free_mem: int = 4_500_000_000
    fill_fraction: float = DEFAULT_FILL_FRACTION

    def __post_init__(self) -> None:
        if self.num_stages < 1:
            raise ValueError(f"num_stages must be >= 1, got {self.num_stages}")
        if self.num_microbatches < 1:
            raise ValueError(f"num_microbatches must be >= 1, got {self.num_microbatches}")
        if self.t_fwd_us < 1 or self.t_bwd_us < 1:
            raise ValueError("t_fwd_ms and t_bwd_ms must round to >= 1 microsecond")
        if not 0.0 < self.fill_fraction <= 1.0:
            raise ValueError(f"fill_fraction must be in (0, 1], got {self.fill_fraction}")
        if self.fwd_free_mem < 0 or self.drain_free_mem < 0:
            raise ValueError("free memory must be >= 0")

    @property
    def t_fwd_us(self) -> int:
        return round(self.t_fwd_ms * US_PER_MS)

    @property
    def t_bwd_us(self) -> int:
        return round(self.t_bwd_ms * US_PER_MS)

    @property
    def period_us(self) -> int:
        """One minibatch iteration: m full microbatches plus the ramp."""
        p, m = self.num_stages, self.num_microbatches
        return (m + p - 1) * (self.t_fwd_us + self.t_bwd_us)

    @property
    def stage_idle_us(self) -> int:
        """Total idle time per stage per iteration, identical for all stages."""
        return (self.num_stages - 1) * (self.t_fwd_us + self.t_bwd_us)


@dataclass(frozen=True)
class BubbleSpec:
    """One bubble in the per-iteration cycle.

    duration_us is the raw idle span; usable_us is the part the filler may
    actually occupy (duration scaled by the config's fill_fraction).
    """

    duration_us: int
    usable_us: int
    free_mem_bytes: int
    kind: BubbleKind

    def __post_init__(self) -> None:
        if self.duration_us < 0 or self.free_mem_bytes < 0:
            raise ValueError("bubble duration and free memory must be >= 0")
        if not 0 <= self.usable_us <= self.duration_us:
            raise ValueError("usable_us must be within [0, duration_us]")

    @property
    def duration_ms(self) -> float:
        return self.duration_us / US_PER_MS


@dataclass(frozen=True)
class BubbleCycle:
    """The repeating bubble sequence of one stage: [fwd-bwd, fill-drain].

    unfillable_us carries 1F1B's scattered mid-iteration gaps, which count
    toward the idle fraction but are never offered to fill jobs.
    """

    bubbles: tuple[BubbleSpec, ...]
    period_us: int
    stage_id: int
    unfillable_us: int = 0

    def __post_init__(self) -> None:
        total = sum(b.duration_us for b in self.bubbles) + self.unfillable_us
        if total > self.period_us:
            raise ValueError("bubble durations exceed the iteration period")

    @property
    def period_ms(self) -> float:
        return self.period_us / US_PER_MS

    @property
    def total_idle_us(self) -> int:
        return sum(b.duration_us for b in self.bubbles) + self.unfillable_us

    @property
    def idle_fraction(self) -> Fraction:
        return Fraction(self.total_idle_us, self.period_us)


def _check_stage(config: PipelineConfig, stage_id: int) -> None:
    if not 0 <= stage_id < config.num_stages:
        raise ValueError(f"stage_id {stage_id} out of range [0, {config.num_stages})")


def fwd_bwd_bubble_duration_us(config: PipelineConfig, stage_id: int) -> int:
    """Idle span between a stage's forward saturation and its first backward.

    GPipe: (p - s - 1) * (t_fwd + t_bwd).
    1F1B:  (p - s - 1) * t_bwd + max(0, p - s - m) * t_fwd.
    """
    _check_stage(config, stage_id)
    p, m = config.num_stages, config.num_microbatches
    tf, tb = config.t_fwd_us, config.t_bwd_us
    depth = p - stage_id - 1
    if config.schedule is ScheduleKind.GPIPE:
        return depth * (tf + tb)
    return depth * tb + max(0, p - stage_id - m) * tf


def fill_drain_bubble_duration_us(config: PipelineConfig, stage_id: int) -> int:
    """Idle span between draining one minibatch and filling the next.

    Identical for both schedules: stage s waits s * t_fwd for the new
    minibatch to reach it and finished its last backward s * t_bwd early, so
    the wrap-around gap is s * (t_fwd + t_bwd). Together with the fwd-bwd
    bubble this accounts for the full GPipe idle budget of
    (p - 1) * (t_fwd + t_bwd) per stage.
    """
    _check_stage(config, stage_id)
    return stage_id * (config.t_fwd_us + config.t_bwd_us)


def unfillable_duration_us(config: PipelineConfig, stage_id: int) -> int:
    """Idle time outside the two fillable bubbles (nonzero only for 1F1B)."""
    _check_stage(config, stage_id)
    rest = (
        config.stage_idle_us
        - fwd_bwd_bubble_duration_us(config, stage_id)
        - fill_drain_bubble_duration_us(config, stage_id)
    )
    assert rest >= 0
    return rest


def build_bubble_cycle(config: PipelineConfig, stage_id: int) -> BubbleCycle:
    """Assemble the per-iteration bubble cycle for one stage."""
    _check_stage(config, stage_id)

    def spec(duration_us: int, free_mem: int, kind: BubbleKind) -> BubbleSpec:
        usable = math.floor(duration_us * config.fill_fraction)
        return BubbleSpec(duration_us, usable, free_mem, kind)

    return BubbleCycle(
        bubbles=(
            spec(fwd_bwd_bubble_duration_us(config, stage_id), config.fwd_free_mem, BubbleKind.FWD_BWD),
            spec(fill_drain_bubble_duration_us(config, stage_id), config.drain_free_mem, BubbleKind.FILL_DRAIN),
        ),
        period_us=config.period_us,
        stage_id=stage_id,
        unfillable_us=unfillable_duration_us(config, stage_id),
    )


def _instruction_sequences(config: PipelineConfig) -> list[list[tuple[str, int]]]:
    """Per-stage instruction order: ("F"|"B", microbatch index)."""
    p, m = config.num_stages, config.num_microbatches
    seqs = []
    for s in range(p):
        if config.schedule is ScheduleKind.GPIPE:
            seq = [("F", j) for j in range(m)] + [("B", j) for j in range(m)]
        else:
            warmup = min(m, p - s - 1)
            seq = [("F", j) for j in range(warmup)]
            for j in range(m - warmup):
                seq.append(("F", warmup + j))
                seq.append(("B", j))
            seq.extend(("B", j) for j in range(m - warmup, m))
        seqs.append(seq)
    return seqs


def _enumerate_busy_spans(config: PipelineConfig) -> list[list[tuple[int, int, str]]]:
    """Run every stage's instruction list against the data dependencies.

    Forward j on stage s waits for forward j on stage s-1; backward j waits
    for backward j on stage s+1 (or the stage's own forward j at the last
    stage). Returns per-stage busy spans (start, end, op) in execution order.
    """
    p, m = config.num_stages, config.num_microbatches
    tf, tb = config.t_fwd_us, config.t_bwd_us
    seqs = _instruction_sequences(config)
    f_end: list[list[int | None]] = [[None] * m for _ in range(p)]
    b_end: list[list[int | None]] = [[None] * m for _ in range(p)]
    ptr = [0] * p
    clock = [0] * p
    busy: list[list[tuple[int, int, str]]] = [[] for _ in range(p)]
    remaining = sum(len(seq) for seq in seqs)

    while remaining:
        progressed = False
        for s in range(p):
            while ptr[s] < len(seqs[s]):
                op, j = seqs[s][ptr[s]]
                if op == "F":
                    ready = 0 if s == 0 else f_end[s - 1][j]
                    dur = tf
                else:
                    ready = f_end[s][j] if s == p - 1 else b_end[s + 1][j]
                    dur = tb
                if ready is None:
                    break
                start = max(clock[s], ready)
                end = start + dur
                (f_end if op == "F" else b_end)[s][j] = end
                busy[s].append((start, end, op))
                clock[s] = end
                ptr[s] += 1
                remaining -= 1
                progressed = True
        assert progressed, "dependency deadlock: invalid schedule"

    assert max(clock) == config.period_us, "iteration span disagrees with the closed-form period"
    return busy


def brute_force_schedule_timeline(config: PipelineConfig) -> list[list[tuple[int, int]]]:
    """Enumerate the schedule microbatch by microbatch; return idle intervals.

    Per stage, the idle intervals inside one iteration window [0, period).
    Head and tail idle of the window appear as separate intervals; together
    they form that stage's wrap-around fill-drain gap.
    """
    p, m = config.num_stages, config.num_microbatches
    if p * m > TIMELINE_ORACLE_CAP:
        raise ValueError(f"p*m = {p * m} exceeds the oracle cap {TIMELINE_ORACLE_CAP}")

    busy = _enumerate_busy_spans(config)
    period = config.period_us
    idle: list[list[tuple[int, int]]] = []
    for s in range(p):
        gaps = []
        t = 0
        for start, end, _ in busy[s]:
            if start > t:
                gaps.append((t, start))
            t = end
        if t < period:
            gaps.append((t, period))
        idle.append(gaps)
    return idle


def timeline_bubble_spans(config: PipelineConfig, stage_id: int) -> tuple[int, int, int]:
    """Decompose a stage's enumerated idle time into the cycle's three parts.

    Returns (fwd_bwd_us, fill_drain_us, unfillable_us): fill-drain is the
    wrap-around gap between iterations, fwd-bwd is the gap that ends at the
    stage's first backward, and the remainder is scattered idle.
    """
    _check_stage(config, stage_id)
    if config.num_stages * config.num_microbatches > TIMELINE_ORACLE_CAP:
        raise ValueError("oracle cap exceeded")

    busy = _enumerate_busy_spans(config)[stage_id]
    period = config.period_us

    first_start = busy[0][0]
    last_end = busy[-1][1]
    fill_drain = first_start + (period - last_end)

    # Every stage runs at least one forward before its first backward, so
    # the gap (possibly zero) before the first backward is well defined.
    first_bwd = next(i for i, (_, _, op) in enumerate(busy) if op == "B")
    fwd_bwd = busy[first_bwd][0] - busy[first_bwd - 1][1]

    busy_total = sum(end - start for start, end, _ in busy)
    total_idle = period - busy_total
    return fwd_bwd, fill_drain, total_idle - fwd_bwd - fill_drain
