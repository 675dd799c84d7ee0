import json
import textwrap
from pathlib import Path

import pytest

from bubblefill.cli import main

BASE_CONFIG = textwrap.dedent(
    """
    [pipeline]
    num_stages = 4
    num_microbatches = 8
    t_fwd_ms = 1.0
    t_bwd_ms = 2.0
    schedule = gpipe
    fwd_free_mem_gb = 4.5
    drain_free_mem_gb = 4.5

    [workload]
    cap_gpu_hours = 1.0
    batch_sizes = 1 2 4 8

    [policy]
    routing = avg_jct
    ordering = fifo

    [sim]
    workers_per_stage = 1
    seed = 7
    horizon_s = 3600
    """
)

TRACEGEN_PARAMS = textwrap.dedent(
    """
    [tracegen]
    rate_per_hour = 40
    horizon_s = 1800
    seed = 3
    gpu_hours_min = 0.01
    gpu_hours_max = 0.2
    """
)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(BASE_CONFIG)
    return path


def read(path):
    return Path(path).read_bytes()


class TestSimulate:
    def test_empty_trace(self, tmp_path, config_file):
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["makespan_s"] == 0.0
        assert summary["completed"] == 0
        assert (out / "jobs.csv").read_text().strip() == "id,arrival_s,start_s,completion_s,coordinator,flops"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7

    def test_bubble_ratio_in_summary(self, tmp_path):
        cfg = tmp_path / "p16.ini"
        cfg.write_text(BASE_CONFIG.replace("num_stages = 4", "num_stages = 16"))
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["bubble_ratio"] == pytest.approx(15 / 23)

    def test_malformed_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[pipeline]\nnum_stagez = 4\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        err = json.loads(capsys.readouterr().out)
        assert "num_stagez" in err["message"]

    def test_round_trip_with_tracegen(self, tmp_path, config_file):
        params = tmp_path / "gen.ini"
        params.write_text(TRACEGEN_PARAMS)
        trace = tmp_path / "trace.csv"
        assert main(["tracegen", "--params", str(params), "--out", str(trace)]) == 0
        out = tmp_path / "out"
        rc = main(
            ["simulate", "--config", str(config_file), "--trace", str(trace), "--out", str(out)]
        )
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["completed"] > 0

    def test_byte_identical_reruns(self, tmp_path, config_file):
        params = tmp_path / "gen.ini"
        params.write_text(TRACEGEN_PARAMS)
        trace = tmp_path / "trace.csv"
        main(["tracegen", "--params", str(params), "--out", str(trace)])
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert (
                main(
                    [
                        "simulate",
                        "--config",
                        str(config_file),
                        "--trace",
                        str(trace),
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
        for name in ("jobs.csv", "summary.json", "manifest.json"):
            assert read(out1 / name) == read(out2 / name)


class TestTracegen:
    def test_deterministic(self, tmp_path):
        params = tmp_path / "gen.ini"
        params.write_text(TRACEGEN_PARAMS)
        t1, t2 = tmp_path / "t1.csv", tmp_path / "t2.csv"
        assert main(["tracegen", "--params", str(params), "--out", str(t1)]) == 0
        assert main(["tracegen", "--params", str(params), "--out", str(t2)]) == 0
        assert read(t1) == read(t2)

    def test_zero_rate_is_input_error(self, tmp_path):
        params = tmp_path / "gen.ini"
        params.write_text("[tracegen]\nrate_per_hour = 0\n")
        assert main(["tracegen", "--params", str(params), "--out", str(tmp_path / "t.csv")]) == 2

    def test_zero_horizon_writes_header_only(self, tmp_path):
        params = tmp_path / "gen.ini"
        params.write_text("[tracegen]\nrate_per_hour = 60\nhorizon_s = 0\n")
        out = tmp_path / "t.csv"
        assert main(["tracegen", "--params", str(params), "--out", str(out)]) == 0
        assert out.read_text().strip() == "arrival_s,gpu_hours,qos"


class TestPartition:
    def test_dp_plan_for_catalog_model(self, tmp_path, config_file):
        out = tmp_path / "plan"
        rc = main(
            [
                "partition",
                "--config",
                str(config_file),
                "--model",
                "bert_base",
                "--stage",
                "3",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["algo"] == "dp"
        assert doc["partitions"][0]["layers"][0] == 0

    def test_greedy_hand_trace_instance(self, tmp_path):
        # stage cycle with two 10ms fully-usable bubbles and 4GB memory;
        # three 4ms/2GB nodes pack as [[0, 1], [2]]
        cfg = tmp_path / "greedy.ini"
        cfg.write_text(
            textwrap.dedent(
                """
                [pipeline]
                num_stages = 3
                num_microbatches = 8
                t_fwd_ms = 5.0
                t_bwd_ms = 5.0
                fwd_free_mem_gb = 4.0
                drain_free_mem_gb = 4.0
                fill_fraction = 1.0
                """
            )
        )
        model = tmp_path / "model.json"
        model.write_text(
            json.dumps(
                {
                    "name": "three-node",
                    "param_count": 1000000,
                    "kind_allowed": ["batch_inference"],
                    "layers": [
                        {
                            "exec_time_ms": {"1": 4.0},
                            "mem_bytes": {"1": 2000000000},
                            "weight_bytes": 0,
                            "flops_per_sample": 1e9,
                        }
                    ]
                    * 3,
                }
            )
        )
        out = tmp_path / "plan"
        rc = main(
            [
                "partition",
                "--config",
                str(cfg),
                "--model-file",
                str(model),
                "--stage",
                "1",
                "--algo",
                "greedy",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["partitions"] == [[0, 1], [2]]

    def test_oracle_flag_ok(self, tmp_path, config_file):
        cfg = tmp_path / "small.ini"
        cfg.write_text(
            BASE_CONFIG.replace(
                "batch_sizes = 1 2 4 8", "batch_sizes = 1 2\nmax_batches_per_bubble = 8"
            )
        )
        model = tmp_path / "m.json"
        model.write_text(
            json.dumps(
                {
                    "name": "tiny",
                    "param_count": 1000,
                    "kind_allowed": ["batch_inference"],
                    "layers": [
                        {
                            "exec_time_ms": {"1": 1.0, "2": 2.0},
                            "mem_bytes": {"1": 1000, "2": 2000},
                            "weight_bytes": 500,
                            "flops_per_sample": 1e6,
                        }
                    ]
                    * 3,
                }
            )
        )
        out = tmp_path / "plan"
        rc = main(
            [
                "partition",
                "--config",
                str(cfg),
                "--model-file",
                str(model),
                "--algo",
                "dp",
                "--oracle",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["oracle"] == "ok"

    def test_oracle_mismatch_exit_code(self, tmp_path, monkeypatch):
        # a disagreeing oracle must surface as exit 4
        import bubblefill.cli as cli_mod
        from fractions import Fraction

        class FakePlan:
            total_tps_us = Fraction(1, 7)
            total_tps_ms = 1 / 7

        monkeypatch.setattr(cli_mod, "brute_force_plan_oracle", lambda *a, **k: FakePlan())
        cfg = tmp_path / "run.ini"
        cfg.write_text(BASE_CONFIG)
        rc = main(
            [
                "partition",
                "--config",
                str(cfg),
                "--model",
                "bert_base",
                "--algo",
                "dp",
                "--oracle",
                "--out",
                str(tmp_path / "plan"),
            ]
        )
        assert rc == 4

    def test_infeasible_exit_code(self, tmp_path, config_file):
        model = tmp_path / "fat.json"
        model.write_text(
            json.dumps(
                {
                    "name": "fat",
                    "param_count": 1000,
                    "kind_allowed": ["batch_inference"],
                    "layers": [
                        {
                            "exec_time_ms": {"1": 1.0},
                            "mem_bytes": {"1": 100_000_000_000},
                            "weight_bytes": 0,
                            "flops_per_sample": 1e6,
                        }
                    ],
                }
            )
        )
        rc = main(
            [
                "partition",
                "--config",
                str(config_file),
                "--model-file",
                str(model),
                "--out",
                str(tmp_path / "plan"),
            ]
        )
        assert rc == 3

    def test_model_required(self, config_file, tmp_path):
        assert main(["partition", "--config", str(config_file), "--out", str(tmp_path / "p")]) == 2


class TestSweep:
    def test_microbatch_axis(self, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text(
            BASE_CONFIG.replace("num_stages = 4", "num_stages = 16")
            + "\n[sweep]\nnum_microbatches = 64 32 16 8\n"
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 5
        header = lines[0].split(",")
        icol = header.index("bubble_ratio")
        ratios = [float(line.split(",")[icol]) for line in lines[1:]]
        assert ratios == sorted(ratios)
        assert ratios[0] == pytest.approx(15 / 79)
        assert ratios[-1] == pytest.approx(15 / 23)
        for i in range(4):
            assert (out / f"v{i:03d}" / "summary.json").exists()

    def test_no_sweep_section_degenerates(self, tmp_path, config_file):
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(config_file), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_two_axes_cartesian(self, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text(
            BASE_CONFIG + "\n[sweep]\nnum_microbatches = 8 16\nfwd_free_mem_gb = 0.5 1.0 1.5\n"
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 7  # header + 2*3 variants

    def test_unknown_axis_rejected(self, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text(BASE_CONFIG + "\n[sweep]\nnot_an_axis = 1 2\n")
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
