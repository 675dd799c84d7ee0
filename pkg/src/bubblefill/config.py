"""Run configuration files.

One INI-style file with [pipeline], [workload], [policy] and [sim] sections
describes a run; an optional [sweep] section lists axis values to expand
into variants. Unknown sections or keys are hard errors so that a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass
from pathlib import Path

from .coordinator import OrderingPolicy
from .pipeline import DEFAULT_FILL_FRACTION, PipelineConfig, ScheduleKind
from .sim import ROUTING_POLICIES, SimConfig
from .workload import (
    DEFAULT_BATCH_SIZES,
    DEFAULT_CATALOG,
    DEFAULT_GPU_MEM_BYTES,
    Catalog,
    parse_catalog,
)

GB = 1_000_000_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig
    catalog: Catalog
    cap_gpu_hours: float
    gpu_mem_bytes: int

    @property
    def pipeline(self) -> PipelineConfig:
        return self.sim.pipeline


_SCHEMA = {
    "pipeline": {
        "num_stages",
        "num_microbatches",
        "t_fwd_ms",
        "t_bwd_ms",
        "schedule",
        "fwd_free_mem_gb",
        "drain_free_mem_gb",
        "fill_fraction",
    },
    "workload": {
        "catalog",
        "catalog_file",
        "cap_gpu_hours",
        "gpu_capacity_gb",
        "batch_sizes",
        "max_batches_per_bubble",
    },
    "policy": {"routing", "ordering", "chunk_samples"},
    "sim": {"dp_replicas", "workers_per_stage", "seed", "horizon_s"},
    "sweep": None,  # free-form axis keys, validated separately
}

_SWEEP_AXES = {
    "num_microbatches",
    "num_stages",
    "fwd_free_mem_gb",
    "drain_free_mem_gb",
    "fill_fraction",
    "routing",
    "ordering",
}


def _read_ini(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        allowed = _SCHEMA[section]
        if allowed is None:
            continue
        for key in parser[section]:
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
    return parser


def _get(parser, section, key, cast, default):
    if section not in parser or key not in parser[section]:
        return default
    raw = parser[section][key]
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc


def _parse_ordering(parser) -> OrderingPolicy:
    kind = _get(parser, "policy", "ordering", str, "fifo")
    if kind == "concurrent":
        chunk = _get(parser, "policy", "chunk_samples", int, None)
        if chunk is None:
            raise ConfigError("policy.ordering = concurrent requires policy.chunk_samples")
        return OrderingPolicy("concurrent", chunk)
    if "policy" in parser and "chunk_samples" in parser["policy"]:
        raise ConfigError("policy.chunk_samples only applies to concurrent ordering")
    try:
        return OrderingPolicy(kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | Path) -> RunConfig:
    parser = _read_ini(path)
    return _build_run_config(parser, path)


def _build_run_config(parser: configparser.ConfigParser, path) -> RunConfig:
    try:
        schedule = ScheduleKind(_get(parser, "pipeline", "schedule", str, "gpipe"))
    except ValueError as exc:
        raise ConfigError(f"bad value for pipeline.schedule: {exc}") from exc

    try:
        pipeline = PipelineConfig(
            num_stages=_get(parser, "pipeline", "num_stages", int, 4),
            num_microbatches=_get(parser, "pipeline", "num_microbatches", int, 8),
            t_fwd_ms=_get(parser, "pipeline", "t_fwd_ms", float, 1.0),
            t_bwd_ms=_get(parser, "pipeline", "t_bwd_ms", float, 2.0),
            schedule=schedule,
            fwd_free_mem=int(_get(parser, "pipeline", "fwd_free_mem_gb", float, 4.5) * GB),
            drain_free_mem=int(_get(parser, "pipeline", "drain_free_mem_gb", float, 4.5) * GB),
            fill_fraction=_get(parser, "pipeline", "fill_fraction", float, DEFAULT_FILL_FRACTION),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    catalog = DEFAULT_CATALOG
    if "workload" in parser:
        inline = parser["workload"].get("catalog")
        file_ref = parser["workload"].get("catalog_file")
        if inline and file_ref:
            raise ConfigError("workload.catalog and workload.catalog_file are exclusive")
        if inline:
            catalog = parse_catalog(inline)
        elif file_ref:
            ref = Path(file_ref)
            if not ref.is_absolute():
                ref = Path(path).parent / ref
            catalog = parse_catalog(ref.read_text())

    batch_sizes = tuple(
        _get(
            parser,
            "workload",
            "batch_sizes",
            lambda raw: tuple(int(x) for x in raw.replace(",", " ").split()),
            DEFAULT_BATCH_SIZES,
        )
    )

    routing = _get(parser, "policy", "routing", str, "avg_jct")
    if routing not in ROUTING_POLICIES:
        raise ConfigError(f"policy.routing must be one of {ROUTING_POLICIES}, got {routing!r}")

    try:
        sim = SimConfig(
            pipeline=pipeline,
            dp_replicas=_get(parser, "sim", "dp_replicas", int, 1),
            workers_per_stage=_get(parser, "sim", "workers_per_stage", int, 1),
            routing=routing,
            ordering=_parse_ordering(parser),
            batch_sizes=batch_sizes,
            max_batches_per_bubble=_get(parser, "workload", "max_batches_per_bubble", int, 16),
            seed=_get(parser, "sim", "seed", int, 0),
            horizon_s=_get(parser, "sim", "horizon_s", float, 3600.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    return RunConfig(
        sim=sim,
        catalog=catalog,
        cap_gpu_hours=_get(parser, "workload", "cap_gpu_hours", float, 1.0),
        gpu_mem_bytes=int(_get(parser, "workload", "gpu_capacity_gb", float, 16.0) * GB),
    )


@dataclass(frozen=True)
class SweepVariant:
    name: str
    axes: tuple[tuple[str, str], ...]
    run: RunConfig


def load_sweep(path: str | Path) -> list[SweepVariant]:
    """Expand the [sweep] section into the Cartesian product of variants.

    Without a [sweep] section this degenerates to the single base config.
    """
    parser = _read_ini(path)
    base = _build_run_config(parser, path)
    if "sweep" not in parser or not parser["sweep"]:
        return [SweepVariant("v000", (), base)]

    axes: list[tuple[str, list[str]]] = []
    for key, raw in parser["sweep"].items():
        if key not in _SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {key!r}; allowed: {sorted(_SWEEP_AXES)}")
        values = [v for v in raw.replace(",", " ").split() if v]
        if not values:
            raise ConfigError(f"sweep axis {key} has no values")
        axes.append((key, values))

    variants: list[SweepVariant] = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        override = configparser.ConfigParser(inline_comment_prefixes=("#",))
        override.read_dict({s: dict(parser[s]) for s in parser.sections() if s != "sweep"})
        pairs = tuple(zip((k for k, _ in axes), combo))
        for key, value in pairs:
            if key in ("routing", "ordering"):
                if not override.has_section("policy"):
                    override.add_section("policy")
                override["policy"][key] = value
            else:
                if not override.has_section("pipeline"):
                    override.add_section("pipeline")
                override["pipeline"][key] = value
        run = _build_run_config(override, path)
        variants.append(SweepVariant(f"v{len(variants):03d}", pairs, run))
    return variants
