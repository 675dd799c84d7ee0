"""Fill-job models, the model catalog, and trace ingestion.

A fill-job model is a linearized sequence of per-layer cost entries (time
and memory as functions of batch size). Traces arrive as (arrival, GPU-hours,
QoS) rows; ingestion maps each kept row to a catalog model, picks a job kind,
and converts GPU-hours into a sample count via the model's best isolated
single-GPU throughput.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

L_MAX = 128
TRAINING_PARAM_LIMIT = 700_000_000
DEFAULT_GPU_MEM_BYTES = 16_000_000_000
DEFAULT_BATCH_SIZES = (1, 2, 4, 8)


class JobKind(Enum):
    TRAINING = "training"
    BATCH_INFERENCE = "batch_inference"


class Qos(Enum):
    LATENCY_SENSITIVE = "ls"
    BEST_EFFORT = "be"


@dataclass(frozen=True)
class LayerProfile:
    """Cost of one linearized graph node.

    exec_time_ms maps batch size to the time for one batch through this
    layer (forward only, or fused forward+backward for training profiles).
    mem_bytes maps batch size to the peak bytes while the layer runs,
    including its resident weights; weight_bytes is the resident component,
    so mem_bytes[b] - weight_bytes is the transient part that peaks only
    while this layer executes.
    """

    exec_time_ms: Mapping[int, float]
    mem_bytes: Mapping[int, int]
    weight_bytes: int
    flops_per_sample: float

    def __post_init__(self) -> None:
        if not self.exec_time_ms:
            raise ValueError("empty batch-size set")
        if set(self.exec_time_ms) != set(self.mem_bytes):
            raise ValueError("exec_time_ms and mem_bytes must share one batch-size set")
        if any(v <= 0 for v in self.exec_time_ms.values()):
            raise ValueError("exec times must be > 0")
        if any(v <= 0 for v in self.mem_bytes.values()):
            raise ValueError("memory values must be > 0")
        if self.weight_bytes < 0 or any(v < self.weight_bytes for v in self.mem_bytes.values()):
            raise ValueError("mem_bytes must include the resident weight_bytes")
        sizes = sorted(self.exec_time_ms)
        for a, b in zip(sizes, sizes[1:]):
            if self.exec_time_ms[a] > self.exec_time_ms[b] or self.mem_bytes[a] > self.mem_bytes[b]:
                raise ValueError("exec time and memory must be non-decreasing in batch size")

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(sorted(self.exec_time_ms))

    def exec_time_us(self, batch_size: int) -> int:
        return round(self.exec_time_ms[batch_size] * 1000)

    def transient_bytes(self, batch_size: int) -> int:
        return self.mem_bytes[batch_size] - self.weight_bytes


@dataclass(frozen=True)
class ModelProfile:
    name: str
    layers: tuple[LayerProfile, ...]
    param_count: int
    kind_allowed: frozenset[JobKind]

    def __post_init__(self) -> None:
        if not 1 <= len(self.layers) <= L_MAX:
            raise ValueError(f"need 1..{L_MAX} layers, got {len(self.layers)}")
        sizes = self.layers[0].batch_sizes
        if any(layer.batch_sizes != sizes for layer in self.layers):
            raise ValueError("all layers of a model must share one batch-size set")
        if not self.kind_allowed:
            raise ValueError("kind_allowed must not be empty")

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return self.layers[0].batch_sizes

    @property
    def flops_per_sample(self) -> float:
        return sum(layer.flops_per_sample for layer in self.layers)

    def fingerprint(self) -> tuple:
        """Hashable content key (the mapping fields make the dataclass itself
        unhashable); used to cache plans per model."""
        return (
            self.name,
            self.param_count,
            tuple(
                (
                    tuple(sorted(layer.exec_time_ms.items())),
                    tuple(sorted(layer.mem_bytes.items())),
                    layer.weight_bytes,
                    layer.flops_per_sample,
                )
                for layer in self.layers
            ),
        )

    def exec_time_us(self, batch_size: int) -> int:
        return sum(layer.exec_time_us(batch_size) for layer in self.layers)

    def peak_mem_bytes(self, batch_size: int) -> int:
        """Whole-model residency: all weights plus the largest transient."""
        weights = sum(layer.weight_bytes for layer in self.layers)
        return weights + max(layer.transient_bytes(batch_size) for layer in self.layers)


@dataclass(frozen=True)
class JobSpec:
    id: str
    arrival_s: float
    model: ModelProfile
    kind: JobKind
    samples: int

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.kind not in self.model.kind_allowed:
            raise ValueError(f"{self.model.name} does not allow {self.kind.value} jobs")


@dataclass(frozen=True)
class TraceRow:
    arrival_s: float
    gpu_hours: float
    qos: Qos

    def __post_init__(self) -> None:
        if self.gpu_hours <= 0:
            raise ValueError("gpu_hours must be > 0")


class ModelTemplate(Enum):
    """Built-in fill-job model shapes (name, parameter count, layer count)."""

    EFFICIENTNET = ("efficientnet", 117_000_000, 16)
    BERT_BASE = ("bert_base", 109_000_000, 12)
    BERT_LARGE = ("bert_large", 334_000_000, 24)
    SWIN_LARGE = ("swin_large", 779_000_000, 24)
    XLM_ROBERTA_XL = ("xlm_roberta_xl", 2_800_000_000, 36)

    @property
    def model_name(self) -> str:
        return self.value[0]

    @property
    def param_count(self) -> int:
        return self.value[1]

    @property
    def n_layers(self) -> int:
        return self.value[2]

    @classmethod
    def by_name(cls, name: str) -> "ModelTemplate":
        for t in cls:
            if t.model_name == name:
                return t
        raise KeyError(f"unknown model template {name!r}")


# CNNs have outsized activation footprints relative to their weights.
_ACT_MULT = {ModelTemplate.EFFICIENTNET: 4.0}


@dataclass(frozen=True)
class CostScale:
    """Knobs of the synthetic roofline-ish layer cost model.

    Per layer at batch size b: time = a*b + c with a proportional to the
    layer's parameter count, memory = weights + act*b. Training profiles
    scale time, resident state, and activations by their factors and gain
    one flat optimizer-step layer at the end.
    """

    ms_per_sample_per_gparam: float = 0.4
    fixed_ms: float = 0.05
    weight_bytes_per_param: float = 2.0
    act_bytes_per_sample_per_param: float = 0.5
    train_time_factor: float = 3.0
    train_weight_factor: float = 4.0
    train_act_factor: float = 2.0
    train_flops_factor: float = 3.0
    opt_step_ms: float = 0.2


DEFAULT_COST_SCALE = CostScale()


def synth_profile(
    template: ModelTemplate,
    scale: CostScale = DEFAULT_COST_SCALE,
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
    kind: JobKind = JobKind.BATCH_INFERENCE,
) -> ModelProfile:
    """Deterministic synthetic profile for a catalog model at one job kind."""
    sizes = tuple(batch_sizes)
    if not sizes:
        raise ValueError("batch_sizes must not be empty")
    if list(sizes) != sorted(set(sizes)) or any(b < 1 or b & (b - 1) for b in sizes):
        raise ValueError(f"batch sizes must be ascending powers of 2, got {sizes}")

    kind_allowed = frozenset(
        {JobKind.BATCH_INFERENCE}
        if template.param_count >= TRAINING_PARAM_LIMIT
        else {JobKind.TRAINING, JobKind.BATCH_INFERENCE}
    )
    if kind not in kind_allowed:
        raise ValueError(f"{template.model_name} does not allow {kind.value} jobs")

    training = kind is JobKind.TRAINING
    ppl = template.param_count / template.n_layers
    a = scale.ms_per_sample_per_gparam * ppl / 1e9
    act = scale.act_bytes_per_sample_per_param * ppl * _ACT_MULT.get(template, 1.0)
    weight = scale.weight_bytes_per_param * ppl
    flops = 2.0 * ppl
    if training:
        a *= scale.train_time_factor
        act *= scale.train_act_factor
        weight *= scale.train_weight_factor
        flops *= scale.train_flops_factor

    layer = LayerProfile(
        exec_time_ms={b: a * b + scale.fixed_ms for b in sizes},
        mem_bytes={b: int(weight + act * b) for b in sizes},
        weight_bytes=int(weight),
        flops_per_sample=flops,
    )
    layers = [layer] * template.n_layers
    if training:
        layers.append(
            LayerProfile(
                exec_time_ms={b: scale.opt_step_ms for b in sizes},
                mem_bytes={b: int(weight) + 1 for b in sizes},
                weight_bytes=0,
                flops_per_sample=ppl,
            )
        )
    suffix = "train" if training else "infer"
    return ModelProfile(
        name=f"{template.model_name}-{suffix}",
        layers=tuple(layers),
        param_count=template.param_count,
        kind_allowed=kind_allowed,
    )


@lru_cache(maxsize=None)
def _cached_profile(
    template: ModelTemplate, scale: CostScale, batch_sizes: tuple[int, ...], kind: JobKind
) -> ModelProfile:
    return synth_profile(template, scale, batch_sizes, kind)


def isolated_throughput(
    model: ModelProfile,
    kind: JobKind,
    gpu_mem_bytes: int = DEFAULT_GPU_MEM_BYTES,
) -> float:
    """Best samples/second on one exclusive GPU, over the profiled batch sizes.

    The only memory constraint applied is the single-GPU capacity; a batch
    size whose whole-model residency exceeds it is skipped.
    """
    if kind not in model.kind_allowed:
        raise ValueError(f"{model.name} does not allow {kind.value} jobs")
    best = 0.0
    for b in model.batch_sizes:
        if model.peak_mem_bytes(b) > gpu_mem_bytes:
            continue
        total_ms = sum(layer.exec_time_ms[b] for layer in model.layers)
        best = max(best, 1000.0 * b / total_ms)
    if best == 0.0:
        raise ValueError(f"{model.name} fits no batch size within {gpu_mem_bytes} bytes")
    return best


Catalog = tuple[tuple[ModelTemplate, float], ...]

DEFAULT_CATALOG: Catalog = (
    (ModelTemplate.EFFICIENTNET, 0.104),
    (ModelTemplate.BERT_BASE, 0.35),
    (ModelTemplate.BERT_LARGE, 0.25),
    (ModelTemplate.SWIN_LARGE, 0.20),
    (ModelTemplate.XLM_ROBERTA_XL, 0.096),
)


def _check_catalog(catalog: Catalog) -> None:
    if not catalog:
        raise ValueError("catalog must not be empty")
    total = sum(w for _, w in catalog)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"catalog weights must sum to 1, got {total}")


def ingest_trace(
    rows: Iterable[TraceRow],
    cap_gpu_hours: float,
    catalog: Catalog,
    seed: int,
    gpu_mem_bytes: int = DEFAULT_GPU_MEM_BYTES,
    scale: CostScale = DEFAULT_COST_SCALE,
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
) -> list[JobSpec]:
    """Turn trace rows into fill jobs.

    Drops latency-sensitive rows and rows above the GPU-hour cap, samples a
    catalog model per surviving row, flips training vs batch-inference for
    sub-threshold models (larger models always run batch inference), and
    sizes the job as gpu_hours * 3600 * isolated_throughput samples.
    Deterministic given (rows, seed).
    """
    _check_catalog(catalog)
    rng = np.random.default_rng(seed)
    weights = [w for _, w in catalog]
    sizes = tuple(batch_sizes)
    jobs: list[JobSpec] = []
    for row in rows:
        if row.qos is Qos.LATENCY_SENSITIVE or row.gpu_hours > cap_gpu_hours:
            continue
        template = catalog[int(rng.choice(len(catalog), p=weights))][0]
        if template.param_count < TRAINING_PARAM_LIMIT:
            kind = JobKind.TRAINING if rng.integers(0, 2) == 0 else JobKind.BATCH_INFERENCE
        else:
            kind = JobKind.BATCH_INFERENCE
        model = _cached_profile(template, scale, sizes, kind)
        throughput = isolated_throughput(model, kind, gpu_mem_bytes)
        samples = max(1, round(row.gpu_hours * 3600.0 * throughput))
        jobs.append(JobSpec(f"j{len(jobs):05d}", row.arrival_s, model, kind, samples))
    return jobs


def synth_arrivals(
    rate_per_hour: float,
    horizon_s: float,
    seed: int,
    gpu_hours_range: tuple[float, float] = (0.01, 0.5),
    ls_fraction: float = 0.0,
) -> list[TraceRow]:
    """Poisson arrivals with log-uniform GPU-hours; deterministic given seed."""
    if rate_per_hour <= 0:
        raise ValueError(f"rate must be > 0, got {rate_per_hour}")
    lo, hi = gpu_hours_range
    if not 0 < lo <= hi:
        raise ValueError(f"invalid gpu_hours_range {gpu_hours_range}")
    if not 0.0 <= ls_fraction <= 1.0:
        raise ValueError(f"ls_fraction must be in [0, 1], got {ls_fraction}")
    rng = np.random.default_rng(seed)
    mean_gap_s = 3600.0 / rate_per_hour
    rows: list[TraceRow] = []
    t = 0.0
    while True:
        t += float(rng.exponential(mean_gap_s))
        if t > horizon_s:
            break
        gpu_hours = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        qos = Qos.LATENCY_SENSITIVE if rng.random() < ls_fraction else Qos.BEST_EFFORT
        rows.append(TraceRow(t, gpu_hours, qos))
    return rows


TRACE_HEADER = ["arrival_s", "gpu_hours", "qos"]


def write_trace(path: str | Path, rows: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for row in rows:
            writer.writerow([repr(row.arrival_s), repr(row.gpu_hours), row.qos.value])


def load_trace(path: str | Path) -> list[TraceRow]:
    rows: list[TraceRow] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"trace header must be {','.join(TRACE_HEADER)}, got {reader.fieldnames}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(TraceRow(float(rec["arrival_s"]), float(rec["gpu_hours"]), Qos(rec["qos"])))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"bad trace row at line {lineno}: {exc}") from exc
    return rows


def parse_catalog(text: str) -> Catalog:
    """Parse "name weight" lines (or name:weight pairs on one line)."""
    entries: list[tuple[ModelTemplate, float]] = []
    parts: list[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            parts.extend(p for p in line.replace(",", " ").split() if p)
    for part in parts:
        if ":" in part:
            name, w = part.split(":", 1)
        else:
            raise ValueError(f"catalog entry {part!r} must look like name:weight")
        entries.append((ModelTemplate.by_name(name.strip()), float(w)))
    catalog = tuple(entries)
    _check_catalog(catalog)
    return catalog


def model_to_json(model: ModelProfile) -> str:
    doc = {
        "name": model.name,
        "param_count": model.param_count,
        "kind_allowed": sorted(k.value for k in model.kind_allowed),
        "layers": [
            {
                "exec_time_ms": {str(b): layer.exec_time_ms[b] for b in layer.batch_sizes},
                "mem_bytes": {str(b): layer.mem_bytes[b] for b in layer.batch_sizes},
                "weight_bytes": layer.weight_bytes,
                "flops_per_sample": layer.flops_per_sample,
            }
            for layer in model.layers
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text: str) -> ModelProfile:
    doc = json.loads(text)
    layers = tuple(
        LayerProfile(
            exec_time_ms={int(b): float(v) for b, v in spec["exec_time_ms"].items()},
            mem_bytes={int(b): int(v) for b, v in spec["mem_bytes"].items()},
            weight_bytes=int(spec["weight_bytes"]),
            flops_per_sample=float(spec["flops_per_sample"]),
        )
        for spec in doc["layers"]
    )
    return ModelProfile(
        name=doc["name"],
        layers=layers,
        param_count=int(doc["param_count"]),
        kind_allowed=frozenset(JobKind(k) for k in doc["kind_allowed"]),
    )
