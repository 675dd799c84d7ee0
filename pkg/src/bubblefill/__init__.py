"""Planning and simulation of fill jobs inside pipeline-parallel bubbles."""

__version__ = "0.1.0"

from .pipeline import (
    BubbleCycle,
    BubbleKind,
    BubbleSpec,
    PipelineConfig,
    ScheduleKind,
    bubble_fraction,
    build_bubble_cycle,
)
from .workload import (
    JobKind,
    JobSpec,
    LayerProfile,
    ModelProfile,
    ModelTemplate,
    TraceRow,
    ingest_trace,
    isolated_throughput,
    synth_arrivals,
    synth_profile,
)
from .partition import (
    BubblePlanEntry,
    ExecutionPlan,
    GreedyPlan,
    Infeasible,
    PartitionPlan,
    brute_force_plan_oracle,
    dp_optimal_plan,
    fixed_batch_baseline,
    greedy_pack,
    partition_tps,
)
from .coordinator import Coordinator, OrderingPolicy, QueueEntry
from .placer import (
    AvgJct,
    Composite,
    JobView,
    MakespanMin,
    ScoringPolicy,
    Sjf,
    avg_jct_score,
    executor_score,
    pick_next_job,
    route_avg_jct,
)
from .sim import OverheadModel, SimConfig, SimEvent, SimReport, gpus_saved, run_sim, sweep
