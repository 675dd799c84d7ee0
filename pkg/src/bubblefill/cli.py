"""Command-line entry point.

Subcommands: simulate, partition, sweep, tracegen. Every output directory
gets a manifest.json carrying the tool version, seed, and input hashes;
runs with equal manifests produce byte-identical outputs.

Exit codes: 0 ok, 2 input error, 3 infeasible, 4 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_run_config, load_sweep
from .partition import (
    Infeasible,
    brute_force_plan_oracle,
    dp_optimal_plan,
    fixed_batch_baseline,
    greedy_pack_model,
    plan_to_dict,
)
from .pipeline import build_bubble_cycle
from .sim import SimReport, run_sim
from .workload import (
    JobKind,
    ModelTemplate,
    ingest_trace,
    load_trace,
    model_from_json,
    synth_arrivals,
    synth_profile,
    write_trace,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_ORACLE_MISMATCH = 4

JOBS_CSV_COLUMNS = ["id", "arrival_s", "start_s", "completion_s", "coordinator", "flops"]


def _sha256(path: str | Path | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True))
    return code


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, subcommand: str, seed: int, config_path, trace_path=None) -> None:
    _write_json(
        out_dir / "manifest.json",
        {
            "tool_version": __version__,
            "subcommand": subcommand,
            "seed": seed,
            "config_path": str(config_path) if config_path else None,
            "config_sha256": _sha256(config_path),
            "trace_path": str(trace_path) if trace_path else None,
            "trace_sha256": _sha256(trace_path),
        },
    )


def _write_report(out_dir: Path, report: SimReport) -> None:
    with open(out_dir / "jobs.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(JOBS_CSV_COLUMNS)
        for job_id in sorted(report.per_job):
            rec = report.per_job[job_id]
            writer.writerow(
                [
                    rec.job_id,
                    repr(rec.arrival_s),
                    repr(rec.start_s),
                    repr(rec.completion_s),
                    rec.coordinator,
                    repr(rec.fill_flops),
                ]
            )
    summary = dict(report.scalars())
    summary["tool_version"] = __version__
    summary["rejected_ids"] = sorted(report.rejected)
    _write_json(out_dir / "summary.json", summary)


def _load_jobs(run: RunConfig, trace_path) -> list:
    rows = load_trace(trace_path) if trace_path else []
    return ingest_trace(
        rows,
        cap_gpu_hours=run.cap_gpu_hours,
        catalog=run.catalog,
        seed=run.sim.seed,
        gpu_mem_bytes=run.gpu_mem_bytes,
        batch_sizes=run.sim.batch_sizes,
    )


def cmd_simulate(args) -> int:
    try:
        run = load_run_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            run = RunConfig(
                sim=replace(run.sim, seed=args.seed),
                catalog=run.catalog,
                cap_gpu_hours=run.cap_gpu_hours,
                gpu_mem_bytes=run.gpu_mem_bytes,
            )
        jobs = _load_jobs(run, args.trace)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_sim(run.sim, jobs)
    _write_report(out_dir, report)
    _write_manifest(out_dir, "simulate", run.sim.seed, args.config, args.trace)
    return EXIT_OK


SWEEP_CSV_FIXED = [
    "variant",
    "bubble_ratio",
    "avg_jct_s",
    "p99_jct_s",
    "makespan_s",
    "completed",
    "rejected",
    "recovered_tflops_wallclock",
    "recovered_tflops_active",
    "mean_rel_perf",
    "mean_fill_gpu_hours",
    "gpus_saved",
    "main_job_slowdown",
]


def cmd_sweep(args) -> int:
    try:
        variants = load_sweep(args.config)
        base_jobs = {v.name: _load_jobs(v.run, args.trace) for v in variants}
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    axis_names = [k for k, _ in variants[0].axes]
    rows = []
    for variant in variants:
        report = run_sim(variant.run.sim, base_jobs[variant.name])
        vdir = out_dir / variant.name
        vdir.mkdir(exist_ok=True)
        _write_report(vdir, report)
        row = {"variant": variant.name, **dict(variant.axes)}
        for key, value in report.scalars().items():
            row[key] = value
        rows.append(row)

    with open(out_dir / "sweep.csv", "w", newline="") as f:
        writer = csv.writer(f)
        header = ["variant", *axis_names, *SWEEP_CSV_FIXED[1:]]
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row["variant"], *[row[a] for a in axis_names]]
                + [repr(row[k]) if isinstance(row[k], float) else row[k] for k in SWEEP_CSV_FIXED[1:]]
            )
    _write_manifest(out_dir, "sweep", variants[0].run.sim.seed, args.config, args.trace)
    return EXIT_OK


def cmd_partition(args) -> int:
    try:
        run = load_run_config(args.config)
        if args.model_file:
            model = model_from_json(Path(args.model_file).read_text())
            batch_sizes = model.batch_sizes  # external profiles fix their own grid
        else:
            template = ModelTemplate.by_name(args.model)
            kind = JobKind.TRAINING if args.kind == "train" else JobKind.BATCH_INFERENCE
            model = synth_profile(template, batch_sizes=run.sim.batch_sizes, kind=kind)
            batch_sizes = run.sim.batch_sizes
        cycle = build_bubble_cycle(run.pipeline, args.stage)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc: dict = {"algo": args.algo, "model": model.name, "stage": args.stage}
    try:
        if args.algo == "greedy":
            batch = args.batch_size or model.batch_sizes[0]
            plan = greedy_pack_model(model, cycle, batch)
            doc["batch_size"] = batch
            doc["num_replicas"] = plan.num_replicas
            doc["partitions"] = [list(p) for p in plan.partitions]
        else:
            build = dp_optimal_plan if args.algo == "dp" else fixed_batch_baseline
            plan = build(model, cycle, batch_sizes, run.sim.max_batches_per_bubble)
            doc.update(plan_to_dict(plan))
            if args.oracle:
                try:
                    oracle = brute_force_plan_oracle(
                        model, cycle, batch_sizes, run.sim.max_batches_per_bubble
                    )
                except ValueError as exc:
                    doc["oracle"] = f"skipped: {exc}"
                else:
                    if args.algo == "dp" and oracle.total_tps_us != plan.total_tps_us:
                        return _fail(
                            EXIT_ORACLE_MISMATCH,
                            "oracle_mismatch",
                            f"dp={plan.total_tps_ms} oracle={oracle.total_tps_ms}",
                        )
                    doc["oracle"] = "ok"
    except Infeasible as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc))

    doc["tool_version"] = __version__
    _write_json(out_dir / "plan.json", doc)
    _write_manifest(out_dir, "partition", run.sim.seed, args.config)
    return EXIT_OK


def cmd_tracegen(args) -> int:
    import configparser

    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(args.params) as f:
            parser.read_file(f)
        if parser.sections() != ["tracegen"]:
            raise ConfigError("params file must contain exactly one [tracegen] section")
        allowed = {"rate_per_hour", "horizon_s", "seed", "gpu_hours_min", "gpu_hours_max", "ls_fraction"}
        unknown = set(parser["tracegen"]) - allowed
        if unknown:
            raise ConfigError(f"unknown tracegen keys: {sorted(unknown)}")
        sec = parser["tracegen"]
        rate = float(sec.get("rate_per_hour", "60"))
        horizon = float(sec.get("horizon_s", "3600"))
        seed = args.seed if args.seed is not None else int(sec.get("seed", "0"))
        rows = synth_arrivals(
            rate,
            horizon,
            seed,
            gpu_hours_range=(
                float(sec.get("gpu_hours_min", "0.01")),
                float(sec.get("gpu_hours_max", "0.5")),
            ),
            ls_fraction=float(sec.get("ls_fraction", "0.0")),
        )
    except (ConfigError, ValueError, OSError, configparser.Error) as exc:
        return _fail(EXIT_INPUT, "input", str(exc))
    write_trace(args.out, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblefill")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one simulation")
    sim.add_argument("--config", required=True)
    sim.add_argument("--trace")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int)
    sim.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="run every [sweep] variant")
    swp.add_argument("--config", required=True)
    swp.add_argument("--trace")
    swp.add_argument("--out", required=True)
    swp.set_defaults(func=cmd_sweep)

    par = sub.add_parser("partition", help="plan one model against one stage")
    par.add_argument("--config", required=True)
    par.add_argument("--model")
    par.add_argument("--model-file")
    par.add_argument("--kind", choices=["train", "infer"], default="infer")
    par.add_argument("--stage", type=int, default=0)
    par.add_argument("--algo", choices=["dp", "greedy", "fixed"], default="dp")
    par.add_argument("--batch-size", type=int)
    par.add_argument("--oracle", action="store_true")
    par.add_argument("--out", required=True)
    par.set_defaults(func=cmd_partition)

    gen = sub.add_parser("tracegen", help="synthesize an arrival trace")
    gen.add_argument("--params", required=True)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_tracegen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "partition" and not (args.model or args.model_file):
        return _fail(EXIT_INPUT, "input", "partition needs --model or --model-file")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
