"""Execution planning: fit a fill-job model into a bubble cycle.

The planner partitions a model's linearized layers into contiguous chunks
and, for every chunk, picks a (batch size, batch count) pair per bubble.
Chunks execute one after another across cycles, with activations staged off
the device between chunks, so a chunk's time-per-sample is simply one cycle
period amortized over the samples it pushes through per cycle, and the
plan's total time-per-sample is the sum over chunks.

The optimal layer boundaries come from the recurrence

    T(k) = min over i < k of  T(i) + best_tps(i, k)

where best_tps is the cheapest per-bubble batch plan for layers [i, k) that
respects every bubble's usable duration and free memory. A greedy packer
that spreads individual graph nodes across successive bubbles is provided
as the lighter-weight alternative, plus a fixed-batch baseline.

Time-per-sample values are exact rationals (microseconds), so optimality
comparisons never hinge on float rounding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .pipeline import BubbleCycle
from .workload import ModelProfile

DEFAULT_MAX_BATCHES = 16

ORACLE_MAX_LAYERS = 6
ORACLE_MAX_BATCH_SIZES = 3
ORACLE_MAX_BATCHES = 8
ORACLE_NUM_BUBBLES = 2


class Infeasible(Exception):
    """No plan satisfies the bubble constraints; str(exc) says why."""


@dataclass(frozen=True)
class BubblePlanEntry:
    """What one partition runs in one bubble each cycle: num_batches batches
    of batch_size samples. (0, 0) leaves the bubble unused."""

    batch_size: int
    num_batches: int

    def __post_init__(self) -> None:
        if self.num_batches < 0 or self.batch_size < 0:
            raise ValueError("batch_size and num_batches must be >= 0")
        if (self.batch_size == 0) != (self.num_batches == 0):
            raise ValueError("batch_size and num_batches must be zero together")

    @property
    def samples(self) -> int:
        return self.batch_size * self.num_batches


@dataclass(frozen=True)
class PartitionPlan:
    """One contiguous layer range [lo, hi) plus its per-bubble batch plan."""

    lo: int
    hi: int
    per_bubble: tuple[BubblePlanEntry, ...]
    tps_us: Fraction
    busy_us_per_cycle: int

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError("empty layer range")
        if self.samples_per_cycle == 0:
            raise ValueError("a partition must make progress every cycle")

    @property
    def samples_per_cycle(self) -> int:
        return sum(e.samples for e in self.per_bubble)

    @property
    def tps_ms(self) -> float:
        return float(self.tps_us) / 1000.0


@dataclass(frozen=True)
class ExecutionPlan:
    """Contiguous partitions tiling [0, L) with their summed time-per-sample."""

    partitions: tuple[PartitionPlan, ...]
    period_us: int
    total_tps_us: Fraction

    def __post_init__(self) -> None:
        lo = 0
        for part in self.partitions:
            if part.lo != lo:
                raise ValueError("partitions must tile the layer range in order")
            lo = part.hi
        if self.total_tps_us != sum((p.tps_us for p in self.partitions), Fraction(0)):
            raise ValueError("total_tps_us must equal the sum over partitions")

    @property
    def num_layers(self) -> int:
        return self.partitions[-1].hi

    @property
    def total_tps_ms(self) -> float:
        return float(self.total_tps_us) / 1000.0

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(p.hi for p in self.partitions)

    def range_wall_us(self, samples: int) -> int:
        """Whole-cycle wall time to push `samples` through every partition,
        one partition after another, rounding each up to full cycles."""
        cycles = 0
        for part in self.partitions:
            cycles += -(-samples // part.samples_per_cycle)
        return cycles * self.period_us

    def range_busy_us(self, samples: int) -> int:
        """Bubble time actually occupied while processing `samples`."""
        busy = 0
        for part in self.partitions:
            cycles = -(-samples // part.samples_per_cycle)
            busy += cycles * part.busy_us_per_cycle
        return busy


@dataclass(frozen=True)
class GreedyPlan:
    """Node partitions, entry j running in bubble j mod P of successive cycles."""

    partitions: tuple[tuple[int, ...], ...]
    num_replicas: int


def _range_exec_us(model: ModelProfile, lo: int, hi: int, batch_size: int) -> int:
    return sum(model.layers[i].exec_time_us(batch_size) for i in range(lo, hi))


def _range_peak_mem(model: ModelProfile, lo: int, hi: int, batch_size: int) -> int:
    weights = sum(model.layers[i].weight_bytes for i in range(lo, hi))
    transient = max(model.layers[i].transient_bytes(batch_size) for i in range(lo, hi))
    return weights + transient


def partition_tps(
    model: ModelProfile,
    lo: int,
    hi: int,
    plan: Sequence[BubblePlanEntry],
    cycle: BubbleCycle,
) -> Fraction | None:
    """Time-per-sample of layers [lo, hi) as one partition under `plan`.

    None when any bubble's duration or memory constraint is violated, or
    when the plan makes no progress.
    """
    if not 0 <= lo < hi <= len(model.layers):
        raise ValueError(f"bad layer range [{lo}, {hi})")
    if len(plan) != len(cycle.bubbles):
        raise ValueError("plan must have one entry per bubble")
    total_samples = 0
    busy = 0
    for entry, bubble in zip(plan, cycle.bubbles):
        if entry.num_batches == 0:
            continue
        exec_us = _range_exec_us(model, lo, hi, entry.batch_size)
        if entry.num_batches * exec_us > bubble.usable_us:
            return None
        if _range_peak_mem(model, lo, hi, entry.batch_size) > bubble.free_mem_bytes:
            return None
        total_samples += entry.samples
        busy += entry.num_batches * exec_us
    if total_samples == 0:
        return None
    return Fraction(cycle.period_us, total_samples)


def _max_batches_fit(exec_us: int, usable_us: int, cap: int) -> int:
    """Largest batch count with count * exec_us <= usable_us, capped."""
    if exec_us == 0:
        return cap
    return min(cap, usable_us // exec_us)


def _plan_from_costs(
    lo: int, hi: int, exec_us: dict[int, int], peak_mem: dict[int, int],
    cycle: BubbleCycle, batch_sizes, max_batches,
) -> PartitionPlan | None:
    """Cheapest plan for one partition given its per-batch-size costs.

    Per-bubble choices are independent, so maximizing each bubble's samples
    per cycle minimizes the partition's time-per-sample.
    """
    entries = []
    for bubble in cycle.bubbles:
        best = BubblePlanEntry(0, 0)
        for b in batch_sizes:
            if peak_mem[b] > bubble.free_mem_bytes:
                continue
            n = _max_batches_fit(exec_us[b], bubble.usable_us, max_batches)
            if n >= 1 and b * n >= best.samples:  # prefer the larger batch on ties
                best = BubblePlanEntry(b, n)
        entries.append(best)
    samples = sum(e.samples for e in entries)
    if samples == 0:
        return None
    busy = sum(e.num_batches * exec_us[e.batch_size] for e in entries if e.num_batches)
    return PartitionPlan(lo, hi, tuple(entries), Fraction(cycle.period_us, samples), busy)


def _best_partition_plan(
    model: ModelProfile, lo: int, hi: int, cycle: BubbleCycle, batch_sizes, max_batches
) -> PartitionPlan | None:
    exec_us = {b: _range_exec_us(model, lo, hi, b) for b in batch_sizes}
    peak = {b: _range_peak_mem(model, lo, hi, b) for b in batch_sizes}
    return _plan_from_costs(lo, hi, exec_us, peak, cycle, batch_sizes, max_batches)


def _validate_batch_sizes(model: ModelProfile, batch_sizes) -> tuple[int, ...]:
    sizes = tuple(batch_sizes) if batch_sizes is not None else model.batch_sizes
    if not sizes:
        raise ValueError("batch_sizes must not be empty")
    for b in sizes:
        if b < 1 or b & (b - 1):
            raise ValueError(f"batch sizes must be powers of 2, got {b}")
        if b not in model.batch_sizes:
            raise ValueError(f"batch size {b} not profiled for {model.name}")
    return sizes


def _check_layers_fit(model, cycle, batch_sizes, max_batches) -> None:
    for i in range(len(model.layers)):
        if _best_partition_plan(model, i, i + 1, cycle, batch_sizes, max_batches) is None:
            raise Infeasible(
                f"layer {i} of {model.name} fits no bubble at any profiled batch size"
            )


def dp_optimal_plan(
    model: ModelProfile,
    cycle: BubbleCycle,
    batch_sizes: Sequence[int] | None = None,
    max_batches_per_bubble: int = DEFAULT_MAX_BATCHES,
) -> ExecutionPlan:
    """Minimize total time-per-sample over all contiguous partitionings.

    Ties break toward fewer partitions, then toward the lexicographically
    smallest boundary sequence (earlier first boundary). Raises Infeasible,
    naming the offending layer, when some layer fits no bubble alone.
    """
    sizes = _validate_batch_sizes(model, batch_sizes)
    _check_layers_fit(model, cycle, sizes, max_batches_per_bubble)
    n = len(model.layers)

    # cost table built incrementally: extending a range by one layer adds to
    # its exec-time and weight sums and maxes in its transient memory
    cost: dict[tuple[int, int], PartitionPlan | None] = {}
    for lo in range(n):
        exec_us = {b: 0 for b in sizes}
        weights = 0
        transient = {b: 0 for b in sizes}
        for hi in range(lo + 1, n + 1):
            layer = model.layers[hi - 1]
            weights += layer.weight_bytes
            for b in sizes:
                exec_us[b] += layer.exec_time_us(b)
                transient[b] = max(transient[b], layer.transient_bytes(b))
            peak = {b: weights + transient[b] for b in sizes}
            cost[(lo, hi)] = _plan_from_costs(
                lo, hi, dict(exec_us), peak, cycle, sizes, max_batches_per_bubble
            )

    # value per prefix: (tps, n_partitions, boundary tuple), lexicographic min
    best: list[tuple[Fraction, int, tuple[int, ...]] | None] = [None] * (n + 1)
    choice: list[list[PartitionPlan] | None] = [None] * (n + 1)
    best[0] = (Fraction(0), 0, ())
    choice[0] = []
    for k in range(1, n + 1):
        for i in range(k):
            if best[i] is None or cost[(i, k)] is None:
                continue
            part = cost[(i, k)]
            tps, nparts, bounds = best[i]
            cand = (tps + part.tps_us, nparts + 1, bounds + (k,))
            if best[k] is None or cand < best[k]:
                best[k] = cand
                choice[k] = choice[i] + [part]
    assert best[n] is not None  # guaranteed by the per-layer feasibility check
    return ExecutionPlan(tuple(choice[n]), cycle.period_us, best[n][0])


def fixed_batch_baseline(
    model: ModelProfile,
    cycle: BubbleCycle,
    batch_sizes: Sequence[int] | None = None,
    max_batches_per_bubble: int = DEFAULT_MAX_BATCHES,
) -> ExecutionPlan:
    """One batch size everywhere, largest-possible partitions.

    For each candidate batch size, partitions grow until the next layer
    would overflow the memory of the tightest bubble; the batch size with
    the best resulting total time-per-sample wins.
    """
    sizes = _validate_batch_sizes(model, batch_sizes)
    n = len(model.layers)
    tight_mem = min(b.free_mem_bytes for b in cycle.bubbles)

    best_plan: ExecutionPlan | None = None
    for b in sizes:
        parts: list[PartitionPlan] = []
        lo = 0
        feasible = True
        while lo < n:
            hi = lo + 1
            while hi < n and _range_peak_mem(model, lo, hi + 1, b) <= tight_mem:
                hi += 1
            entries = []
            for bubble in cycle.bubbles:
                exec_us = _range_exec_us(model, lo, hi, b)
                fits_mem = _range_peak_mem(model, lo, hi, b) <= bubble.free_mem_bytes
                cnt = _max_batches_fit(exec_us, bubble.usable_us, max_batches_per_bubble) if fits_mem else 0
                entries.append(BubblePlanEntry(b, cnt) if cnt >= 1 else BubblePlanEntry(0, 0))
            samples = sum(e.samples for e in entries)
            if samples == 0:
                feasible = False
                break
            busy = sum(
                e.num_batches * _range_exec_us(model, lo, hi, e.batch_size)
                for e in entries
                if e.num_batches
            )
            parts.append(PartitionPlan(lo, hi, tuple(entries), Fraction(cycle.period_us, samples), busy))
            lo = hi
        if not feasible:
            continue
        plan = ExecutionPlan(tuple(parts), cycle.period_us, sum((p.tps_us for p in parts), Fraction(0)))
        if best_plan is None or plan.total_tps_us < best_plan.total_tps_us:
            best_plan = plan
    if best_plan is None:
        raise Infeasible(f"{model.name}: no single batch size yields a feasible fixed-batch plan")
    return best_plan


def brute_force_plan_oracle(
    model: ModelProfile,
    cycle: BubbleCycle,
    batch_sizes: Sequence[int] | None = None,
    max_batches_per_bubble: int = ORACLE_MAX_BATCHES,
) -> ExecutionPlan:
    """Exhaustive minimum over every partitioning and every per-bubble plan.

    Deliberately small: enumerates all 2^(L-1) contiguous partitionings and,
    per layer range, the full (batch size, batch count) grid per bubble.
    """
    sizes = _validate_batch_sizes(model, batch_sizes)
    n = len(model.layers)
    if n > ORACLE_MAX_LAYERS:
        raise ValueError(f"oracle cap: at most {ORACLE_MAX_LAYERS} layers")
    if len(sizes) > ORACLE_MAX_BATCH_SIZES:
        raise ValueError(f"oracle cap: at most {ORACLE_MAX_BATCH_SIZES} batch sizes")
    if max_batches_per_bubble > ORACLE_MAX_BATCHES:
        raise ValueError(f"oracle cap: at most {ORACLE_MAX_BATCHES} batches per bubble")
    if len(cycle.bubbles) != ORACLE_NUM_BUBBLES:
        raise ValueError(f"oracle cap: exactly {ORACLE_NUM_BUBBLES} bubbles")

    entry_grid = [BubblePlanEntry(0, 0)] + [
        BubblePlanEntry(b, c) for b in sizes for c in range(1, max_batches_per_bubble + 1)
    ]

    def range_best(lo: int, hi: int) -> PartitionPlan | None:
        best: PartitionPlan | None = None
        for combo in itertools.product(entry_grid, repeat=len(cycle.bubbles)):
            tps = partition_tps(model, lo, hi, combo, cycle)
            if tps is None:
                continue
            if best is None or tps < best.tps_us:
                busy = sum(
                    e.num_batches * _range_exec_us(model, lo, hi, e.batch_size)
                    for e in combo
                    if e.num_batches
                )
                best = PartitionPlan(lo, hi, tuple(combo), tps, busy)
        return best

    range_cache = {
        (lo, hi): range_best(lo, hi) for lo in range(n) for hi in range(lo + 1, n + 1)
    }
    if any(range_cache[(i, i + 1)] is None for i in range(n)):
        bad = next(i for i in range(n) if range_cache[(i, i + 1)] is None)
        raise Infeasible(f"layer {bad} of {model.name} fits no bubble at any profiled batch size")

    best_key: tuple[Fraction, int, tuple[int, ...]] | None = None
    best_parts: list[PartitionPlan] | None = None
    for mask in range(1 << (n - 1)):
        bounds = [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        lo = 0
        parts = []
        total = Fraction(0)
        ok = True
        for hi in bounds:
            part = range_cache[(lo, hi)]
            if part is None:
                ok = False
                break
            parts.append(part)
            total += part.tps_us
            lo = hi
        if not ok:
            continue
        key = (total, len(parts), tuple(bounds))
        if best_key is None or key < best_key:
            best_key, best_parts = key, parts
    assert best_parts is not None
    return ExecutionPlan(tuple(best_parts), cycle.period_us, best_key[0])


def greedy_pack(
    bubble_durations_us: Sequence[int],
    bubble_mems: Sequence[int],
    nodes: Sequence[tuple[int, int]],
) -> GreedyPlan:
    """Spread graph nodes across successive bubbles, cycling round-robin.

    First replicates the node list while one more copy still fits under the
    total bubble time, then packs source nodes in order: a node joins the
    current bubble's partition while the partition stays strictly under the
    bubble's duration and the node's memory fits. Nodes that can fit no
    bubble at all are rejected up front instead of spinning forever.
    """
    if len(bubble_durations_us) != len(bubble_mems):
        raise ValueError("need one memory capacity per bubble")
    if not bubble_durations_us:
        raise ValueError("need at least one bubble")
    if not nodes:
        raise ValueError("need at least one node")
    for idx, (dur, mem) in enumerate(nodes):
        if dur <= 0:
            raise ValueError(f"node {idx} has non-positive duration")
        if not any(dur < b and mem <= m for b, m in zip(bubble_durations_us, bubble_mems)):
            raise Infeasible(
                f"node {idx} (dur={dur}us, mem={mem}B) fits no bubble; "
                f"bubbles={list(zip(bubble_durations_us, bubble_mems))}"
            )

    total_budget = sum(bubble_durations_us)
    base = list(range(len(nodes)))
    total_dur = sum(d for d, _ in nodes)
    work = list(base)
    work_dur = total_dur
    while work_dur + total_dur < total_budget:
        work.extend(base)
        work_dur += total_dur
    replicas = len(work) // len(base)

    partitions: list[tuple[int, ...]] = []
    i = 0
    pos = 0
    while pos < len(work):
        part: list[int] = []
        part_dur = 0
        while pos < len(work):
            dur, mem = nodes[work[pos]]
            if part_dur + dur < bubble_durations_us[i] and mem <= bubble_mems[i]:
                part.append(work[pos])
                part_dur += dur
                pos += 1
            else:
                break
        partitions.append(tuple(part))
        i = (i + 1) % len(bubble_durations_us)
    return GreedyPlan(tuple(partitions), replicas)


def greedy_pack_model(
    model: ModelProfile, cycle: BubbleCycle, batch_size: int
) -> GreedyPlan:
    """Pack a model's layers (at one batch size) into a bubble cycle."""
    nodes = [
        (layer.exec_time_us(batch_size), layer.weight_bytes + layer.transient_bytes(batch_size))
        for layer in model.layers
    ]
    return greedy_pack(
        [b.usable_us for b in cycle.bubbles],
        [b.free_mem_bytes for b in cycle.bubbles],
        nodes,
    )


def plan_to_dict(plan: ExecutionPlan) -> dict:
    """Stable JSON-friendly dump consumed by the CLI and golden tests."""
    return {
        "period_ms": plan.period_us / 1000.0,
        "total_tps_ms": plan.total_tps_ms,
        "partitions": [
            {
                "layers": [p.lo, p.hi],
                "per_bubble": [
                    {"batch_size": e.batch_size, "num_batches": e.num_batches}
                    for e in p.per_bubble
                ],
                "tps_ms": p.tps_ms,
            }
            for p in plan.partitions
        ],
    }
