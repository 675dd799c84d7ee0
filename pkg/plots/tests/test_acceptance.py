"""Secondary acceptance: render every figure kind from real simulator
outputs produced through the primary's CLI, with byte-identical re-renders.
"""

import hashlib
import json
import subprocess
import sys
import textwrap
from pathlib import Path

import pytest

from bubbleplots.cli import main as plots_main

PRIMARY_SRC = Path(__file__).resolve().parents[2] / "src"

RUN_CONFIG = textwrap.dedent(
    """
    [pipeline]
    num_stages = 4
    num_microbatches = 8
    t_fwd_ms = 1.0
    t_bwd_ms = 2.0
    fwd_free_mem_gb = 0.5
    drain_free_mem_gb = 4.5

    [policy]
    routing = avg_jct
    ordering = {ordering}

    [sim]
    seed = 9
    horizon_s = 900
    """
)

SWEEP_SECTION = "\n[sweep]\nnum_microbatches = 64 32 16 8\n"

TRACE_PARAMS = textwrap.dedent(
    """
    [tracegen]
    rate_per_hour = 160
    horizon_s = 900
    seed = 9
    gpu_hours_min = 0.002
    gpu_hours_max = 0.03
    """
)


def run_primary(*args) -> None:
    env = {"PYTHONPATH": str(PRIMARY_SRC), "PATH": "/usr/bin:/bin:/usr/local/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "bubblefill.cli", *args],
        capture_output=True,
        text=True,
        env=env,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr


@pytest.fixture(scope="module")
def sim_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("primary_outputs")
    params = root / "gen.ini"
    params.write_text(TRACE_PARAMS)
    trace = root / "trace.csv"
    run_primary("tracegen", "--params", str(params), "--out", str(trace))

    outs = {}
    for ordering in ("fifo", "sjf"):
        cfg = root / f"{ordering}.ini"
        cfg.write_text(RUN_CONFIG.format(ordering=ordering))
        out = root / ordering
        run_primary("simulate", "--config", str(cfg), "--trace", str(trace), "--out", str(out))
        outs[ordering] = out

    sweep_cfg = root / "sweep.ini"
    sweep_cfg.write_text(RUN_CONFIG.format(ordering="fifo") + SWEEP_SECTION)
    sweep_out = root / "sweep"
    run_primary("sweep", "--config", str(sweep_cfg), "--trace", str(trace), "--out", str(sweep_out))
    outs["sweep"] = sweep_out

    # an empty run exercises the no-jobs path
    empty_out = root / "empty"
    run_primary("simulate", "--config", str(root / "fifo.ini"), "--out", str(empty_out))
    outs["empty"] = empty_out
    return outs


def render_spec(tmp_path, name, **doc) -> dict:
    spec_path = tmp_path / f"{name}.json"
    spec_path.write_text(json.dumps(doc))
    rc = plots_main(["render", "--spec", str(spec_path)])
    assert rc == 0
    return doc


def test_all_figure_kinds_render_from_real_outputs(tmp_path, sim_outputs, capsys):
    figures = [
        dict(
            kind="scaling_bars",
            inputs=[str(sim_outputs["sweep"] / "sweep.csv")],
            output=str(tmp_path / "scaling.png"),
            axis="num_microbatches",
        ),
        dict(
            kind="jct_cdf",
            inputs=[str(sim_outputs["fifo"] / "jobs.csv"), str(sim_outputs["sjf"] / "jobs.csv")],
            labels=["fifo", "sjf"],
            output=str(tmp_path / "cdf.png"),
        ),
        dict(
            kind="jct_cdf",
            inputs=[str(sim_outputs["empty"] / "jobs.csv")],
            output=str(tmp_path / "cdf_empty.png"),
        ),
        dict(
            kind="policy_bars",
            inputs=[
                str(sim_outputs["fifo"] / "summary.json"),
                str(sim_outputs["sjf"] / "summary.json"),
            ],
            labels=["fifo", "sjf"],
            output=str(tmp_path / "policies.png"),
        ),
        dict(
            kind="ablation_lines",
            inputs=[str(sim_outputs["sweep"] / "sweep.csv")],
            output=str(tmp_path / "ablation.png"),
            axis="num_microbatches",
            metric="avg_jct_s",
        ),
    ]
    for i, doc in enumerate(figures):
        render_spec(tmp_path, f"spec{i}", **doc)
        assert Path(doc["output"]).stat().st_size > 0
    print(f"PASS: plot contract ({len(figures)} figures rendered from real simulator outputs)")


def test_rerender_byte_identical(tmp_path, sim_outputs):
    digests = []
    for tag in ("a", "b"):
        out = tmp_path / f"fig_{tag}.png"
        render_spec(
            tmp_path,
            f"spec_{tag}",
            kind="scaling_bars",
            inputs=[str(sim_outputs["sweep"] / "sweep.csv")],
            output=str(out),
            axis="num_microbatches",
        )
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    assert digests[0] == digests[1]
    print("PASS: plot re-render byte-identical")


def test_schema_error_exit_code(tmp_path, sim_outputs, capsys):
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(
        json.dumps(
            {
                "kind": "scaling_bars",
                "inputs": [str(sim_outputs["fifo"] / "jobs.csv")],  # wrong file for this kind
                "output": str(tmp_path / "x.png"),
                "axis": "num_microbatches",
            }
        )
    )
    rc = plots_main(["render", "--spec", str(spec_path)])
    assert rc == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "missing column" in err["message"]
    assert "variant" in err["message"]
