"""Command line: schemas, exit codes, artifacts, determinism."""
import csv
import json

import pytest

from fractalqos.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from fractalqos.trace import read_trace_csv

LINEAR_TOPOLOGY = {
    "nodes": [
        {"id": "A", "role": "host"},
        {"id": "R", "role": "router"},
        {"id": "B", "role": "host"},
    ],
    "links": [
        {"from": "A", "to": "R", "capacity": 100.0, "cost": 1.0,
         "channels": [100.0]},
        {"from": "R", "to": "B", "capacity": 100.0, "cost": 1.0,
         "channels": [100.0]},
    ],
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def gen_config(tmp_path):
    return write_json(tmp_path / "gen.json", {
        "spec": {"length": 4096, "target_hurst": 0.8, "mean_rate": 50.0,
                 "std_rate": 15.0, "seed": 7},
        "attack": {"windows": [[1000, 1200]], "intensity_multiplier": 6.0},
    })


@pytest.fixture
def run_config(tmp_path):
    write_json(tmp_path / "topology.json", LINEAR_TOPOLOGY)
    return write_json(tmp_path / "run.json", {
        "scenario": {
            "topology_path": "topology.json",
            "modes": ["none", "both"],
            "load_ratio": 0.7,
            "duration": 4096,
            "seed": 0,
            "node_defaults": {"service_rate": 60.0, "buffer": 120},
        },
        "flows": [{
            "flow_id": "f0", "src": "A", "dst": "B",
            "spec": {"length": 4096, "target_hurst": 0.8, "mean_rate": 20.0,
                     "std_rate": 7.0, "seed": 0},
            "qos": {"qs": 0, "max_loss": 0.01, "max_delay_ms": 50.0},
            "attack": {"windows": [[1500, 1900]],
                       "intensity_multiplier": 8.0},
        }],
        "sweep": {"loads": [0.3, 0.7], "seeds": [0]},
    })


class TestGenerate:
    def test_writes_trace_with_attack_labels(self, gen_config, tmp_path):
        out = tmp_path / "trace.csv"
        assert main(["generate", "--config", gen_config,
                     "--out", str(out)]) == EXIT_OK
        trace = read_trace_csv(str(out))
        assert len(trace) == 4096
        assert trace.labels[1000:1200].all()
        assert not trace.labels[:1000].any()

    def test_refuses_existing_output(self, gen_config, tmp_path):
        out = tmp_path / "trace.csv"
        out.write_text("occupied")
        assert main(["generate", "--config", gen_config,
                     "--out", str(out)]) == EXIT_CONFIG
        assert out.read_text() == "occupied"

    def test_force_overwrites(self, gen_config, tmp_path):
        out = tmp_path / "trace.csv"
        out.write_text("occupied")
        assert main(["generate", "--config", gen_config, "--out", str(out),
                     "--force"]) == EXIT_OK
        assert out.read_text() != "occupied"

    def test_seed_override_changes_trace(self, gen_config, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
        main(["generate", "--config", gen_config, "--out", str(a),
              "--seed", "1"])
        main(["generate", "--config", gen_config, "--out", str(b),
              "--seed", "2"])
        main(["generate", "--config", gen_config, "--out", str(c),
              "--seed", "1"])
        assert a.read_text() == c.read_text()
        assert a.read_text() != b.read_text()

    def test_rejects_unknown_key(self, tmp_path):
        cfg = write_json(tmp_path / "bad.json", {
            "spec": {"length": 4096, "target_hurst": 0.8, "mean_rate": 50.0},
            "surprise": True,
        })
        assert main(["generate", "--config", cfg,
                     "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG

    def test_rejects_malformed_json(self, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        assert main(["generate", "--config", str(cfg),
                     "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


class TestAnalyze:
    def test_prints_profile_json(self, gen_config, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        main(["generate", "--config", gen_config, "--out", str(out)])
        assert main(["analyze", str(out)]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert {"lambda", "hurst", "sigma_var", "delta_h"} <= set(doc)
        assert "security" in doc  # attack labels present in the trace

    def test_degenerate_trace_exits_runtime(self, tmp_path, capsys):
        out = tmp_path / "flat.csv"
        with open(out, "w") as fh:
            fh.write("slot,count,label\n")
            fh.writelines(f"{i},5,0\n" for i in range(4096))
        assert main(["analyze", str(out)]) == EXIT_RUNTIME
        assert "degenerate-trace" in capsys.readouterr().err


class TestCalibrate:
    def test_small_grid_round_trips(self, tmp_path):
        cfg = write_json(tmp_path / "cal.json", {
            "targets": [{"qs": 0, "max_loss": 0.02, "max_delay_ms": 50.0}],
            "grid": {"h_values": [0.6, 0.8], "sigma_values": [0.5],
                     "rho_values": [0.4, 1.0], "trace_length": 4096},
            "seeds": 3,
        })
        out = tmp_path / "table.json"
        assert main(["calibrate", "--config", cfg, "--out", str(out)]) == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["axes"]["h"] == [0.6, 0.8]


class TestSimulate:
    def test_writes_report_and_event_logs(self, run_config, tmp_path):
        out = tmp_path / "results"
        assert main(["simulate", "--config", run_config,
                     "--out", str(out)]) == EXIT_OK
        with open(out / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["mode"] for r in rows] == ["none", "both"]
        assert float(rows[1]["lost_data_pct"]) <= float(rows[0]["lost_data_pct"])
        assert (out / "events-none.jsonl").exists()
        assert (out / "events-both.jsonl").exists()

    def test_deterministic_outputs(self, run_config, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", run_config, "--out", str(out_a)])
        main(["simulate", "--config", run_config, "--out", str(out_b)])
        assert (out_a / "report.csv").read_text() == (
            out_b / "report.csv").read_text()
        assert (out_a / "events-both.jsonl").read_text() == (
            out_b / "events-both.jsonl").read_text()

    def test_rejects_unknown_mode_in_config(self, tmp_path, run_config):
        doc = json.loads((tmp_path / "run.json").read_text())
        doc["scenario"]["modes"] = ["creative"]
        bad = write_json(tmp_path / "bad-run.json", doc)
        assert main(["simulate", "--config", bad,
                     "--out", str(tmp_path / "x")]) == EXIT_CONFIG


class TestSweep:
    def test_grid_rows_and_plot_series(self, run_config, tmp_path):
        out = tmp_path / "sweep-out"
        assert main(["sweep", "--config", run_config, "--out", str(out),
                     "--emit-plot"]) == EXIT_OK
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 1 * 2  # loads x seeds x modes
        with open(out / "plot_loss.csv") as fh:
            plot = list(csv.DictReader(fh))
        assert [r["load"] for r in plot] == ["0.3", "0.7"]
        assert "lost_data_pct_both" in plot[0]
        assert (out / "plot_utilization.csv").exists()

    def test_requires_sweep_section(self, tmp_path, run_config):
        doc = json.loads((tmp_path / "run.json").read_text())
        del doc["sweep"]
        cfg = write_json(tmp_path / "nosweep.json", doc)
        assert main(["sweep", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == EXIT_CONFIG
