"""Render simulation outputs into the standard figures.

Consumes only the simulator's stable file contract (jobs.csv, summary.json,
sweep.csv) and never imports simulator internals. Rendering is pinned for
reproducibility: Agg backend, fixed fonts and figure geometry, inputs
sorted before plotting, and no timestamps, so re-rendering identical
inputs yields identical image bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

FIGURE_KINDS = ("scaling_bars", "jct_cdf", "policy_bars", "ablation_lines")

_POLICY_METRICS = ("avg_jct_s", "p99_jct_s", "makespan_s")

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


class SchemaError(ValueError):
    """An input file is missing a column or field the figure kind needs."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    labels: tuple[str, ...] = ()
    axis: str | None = None
    metric: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"kind must be one of {FIGURE_KINDS}, got {self.kind!r}")
        if not self.inputs:
            raise ValueError("need at least one input file")
        if self.labels and len(self.labels) != len(self.inputs):
            raise ValueError("labels must match inputs one to one")
        for path in self.inputs:
            if not Path(path).is_file():
                raise FileNotFoundError(f"input {path} does not exist")

    @classmethod
    def from_json(cls, text: str) -> "FigureSpec":
        doc = json.loads(text)
        unknown = set(doc) - {"kind", "inputs", "output", "labels", "axis", "metric"}
        if unknown:
            raise ValueError(f"unknown figure-spec keys: {sorted(unknown)}")
        return cls(
            kind=doc["kind"],
            inputs=tuple(doc["inputs"]),
            output=doc["output"],
            labels=tuple(doc.get("labels", ())),
            axis=doc.get("axis"),
            metric=doc.get("metric"),
        )

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels else Path(self.inputs[i]).parent.name or f"run{i}"


def _read_csv(path: str, required: list[str]) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        cols = reader.fieldnames or []
        for col in required:
            if col not in cols:
                raise SchemaError(f"{path}: missing column {col!r} (have {cols})")
        return list(reader)


def _read_summary(path: str, required: list[str]) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in required:
        if key not in doc:
            raise SchemaError(f"{path}: missing field {key!r}")
    return doc


def _new_axes():
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    return fig, ax


def _save(fig, output: str) -> None:
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata: no creation date sneaks into the PNG
    fig.savefig(output, format="png", metadata={"Software": "bubbleplots"})
    plt.close(fig)


def _scaling_bars(spec: FigureSpec) -> dict:
    axis = spec.axis or "num_microbatches"
    metric = spec.metric or "recovered_tflops_wallclock"
    rows = _read_csv(spec.inputs[0], ["variant", axis, "bubble_ratio", metric])
    rows.sort(key=lambda r: r["variant"])
    fig, ax = _new_axes()
    xs = range(len(rows))
    values = [float(r[metric]) for r in rows]
    ratios = [float(r["bubble_ratio"]) for r in rows]
    ax.bar(xs, values, color="#4878d0")
    for x, v, ratio in zip(xs, values, ratios):
        ax.annotate(f"{ratio:.3f}", (x, v), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r[axis] for r in rows])
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} vs {axis} (bars annotated with bubble ratio)")
    _save(fig, spec.output)
    return {"bars": len(rows), "annotations": [f"{r:.3f}" for r in ratios]}


def _jct_cdf(spec: FigureSpec) -> dict:
    fig, ax = _new_axes()
    total = 0
    for i, path in enumerate(spec.inputs):
        rows = _read_csv(path, ["id", "arrival_s", "completion_s"])
        jcts = sorted(float(r["completion_s"]) - float(r["arrival_s"]) for r in rows)
        total += len(jcts)
        if jcts:
            fractions = [(k + 1) / len(jcts) for k in range(len(jcts))]
            ax.step(jcts, fractions, where="post", label=spec.label(i))
    if total == 0:
        ax.annotate("no jobs", (0.5, 0.5), xycoords="axes fraction", ha="center", fontsize=14)
    elif len(spec.inputs) > 1 or spec.labels:
        ax.legend()
    ax.set_xlabel("job completion time (s)")
    ax.set_ylabel("fraction of jobs")
    ax.set_ylim(0, 1.05)
    ax.set_title("JCT CDF")
    _save(fig, spec.output)
    return {"jobs": total, "annotations": ["no jobs"] if total == 0 else []}


def _policy_bars(spec: FigureSpec) -> dict:
    summaries = [_read_summary(path, list(_POLICY_METRICS)) for path in spec.inputs]
    fig, ax = _new_axes()
    n = len(summaries)
    width = 0.8 / n
    for i, summary in enumerate(summaries):
        xs = [k + i * width for k in range(len(_POLICY_METRICS))]
        ax.bar(xs, [float(summary[m]) for m in _POLICY_METRICS], width, label=spec.label(i))
    ax.set_xticks([k + 0.4 - width / 2 for k in range(len(_POLICY_METRICS))])
    ax.set_xticklabels(_POLICY_METRICS)
    ax.set_ylabel("seconds")
    ax.set_title("policy comparison")
    ax.legend()
    _save(fig, spec.output)
    return {"runs": n, "metrics": list(_POLICY_METRICS)}


def _ablation_lines(spec: FigureSpec) -> dict:
    axis = spec.axis
    if axis is None:
        raise SchemaError("ablation_lines needs an 'axis' column name")
    metric = spec.metric or "mean_fill_gpu_hours"
    fig, ax = _new_axes()
    points = 0
    for i, path in enumerate(spec.inputs):
        rows = _read_csv(path, [axis, metric])
        pairs = sorted((float(r[axis]), float(r[metric])) for r in rows)
        points += len(pairs)
        ax.plot([x for x, _ in pairs], [y for _, y in pairs], marker="o", label=spec.label(i))
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} vs {axis}")
    if len(spec.inputs) > 1 or spec.labels:
        ax.legend()
    _save(fig, spec.output)
    return {"points": points}


_RENDERERS = {
    "scaling_bars": _scaling_bars,
    "jct_cdf": _jct_cdf,
    "policy_bars": _policy_bars,
    "ablation_lines": _ablation_lines,
}


def render(spec: FigureSpec) -> dict:
    """Render one figure; returns a small summary of what was drawn."""
    with plt.rc_context(_RC):
        info = _RENDERERS[spec.kind](spec)
    return {"kind": spec.kind, "output": spec.output, **info}
