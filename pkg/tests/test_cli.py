import json
from pathlib import Path

import pytest

from oea.cli import main

DATA = Path(__file__).parent / "data"

SIM_FLAGS = ["--mode", "oea", "--k", "4", "--k0", "2", "--p", "0.7", "--kmax", "5", "--maxp", "8",
             "--n-experts", "16", "--batch", "6", "--steps", "4", "--layers", "2",
             "--gen", "clustered", "--seed", "3", "--toy-dims", "8", "12"]
SWEEP_FLAGS = ["--k", "4", "--n-experts", "16", "--batch", "6", "--steps", "4", "--seed", "3",
               "--toy-dims", "8", "12"]


def run(*argv):
    return main([str(a) for a in argv])


def test_route_golden(tmp_path):
    out = tmp_path / "plan.json"
    assert run("route", "--mode", "simplified", "--k0", "1", "--k", "2",
               "--scores", DATA / "hand.ndjson", "--out", out) == 0
    assert out.read_text() == (DATA / "golden_route.json").read_text()
    doc = json.loads(out.read_text())
    assert doc["plans"][0]["sets"] == [[0, 2], [2, 0]]
    assert doc["plans"][1]["sets"][1] == []


def test_route_vanilla_single_token(tmp_path):
    scores = tmp_path / "s.ndjson"
    row = [1 / 16] * 16
    scores.write_text(json.dumps({"version": 1, "step": 0, "layer": 0, "scores": [row]}) + "\n")
    out = tmp_path / "plan.json"
    assert run("route", "--mode", "vanilla", "--k", "8", "--scores", scores, "--out", out) == 0
    assert json.loads(out.read_text())["plans"][0]["T"] == 8


def test_route_bad_row(capsys):
    assert run("route", "--k", "2", "--scores", DATA / "bad_row.ndjson") == 2
    err = capsys.readouterr().err
    assert "row 1" in err and "negative" in err


def test_route_invalid_config(capsys):
    assert run("route", "--mode", "oea", "--k", "2", "--k0", "3", "--scores", DATA / "hand.ndjson") == 2
    assert "error" in capsys.readouterr().err


def test_simulate_golden(tmp_path):
    assert run("simulate", *SIM_FLAGS, "--out", tmp_path) == 0
    assert (tmp_path / "trace.csv").read_text() == (DATA / "golden_trace.csv").read_text()
    assert (tmp_path / "summary.json").read_text() == (DATA / "golden_summary.json").read_text()


def test_simulate_reduction(tmp_path):
    assert run("simulate", "--routing", "simplified", "--k0", "8", "--n-experts", "64",
               "--steps", "10", "--seed", "1", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["normalized_average"] == {"T": 1.0, "latency": 1.0}


def test_simulate_requires_seed(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path) == 2
    assert "--seed" in capsys.readouterr().err


def test_simulate_replay(tmp_path):
    assert run("simulate", "--gen", "replay", "--trace", DATA / "hand.ndjson", "--k", "2",
               "--out", tmp_path) == 0
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[2] == "3"


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "steps": 2, "n_experts": 32, "k": 2}))
    assert run("simulate", "--config", cfg, "--steps", "3", "--out", tmp_path / "o") == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    gen = summary["config"]["generator"]
    assert (gen["seed"], gen["steps"], gen["n_experts"]) == (3, 3, 32)


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sed": 3}))
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
    assert "sed" in capsys.readouterr().err


def test_sweep_golden(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("sweep", *SWEEP_FLAGS, "--out", out) == 0
    assert out.read_text() == (DATA / "golden_sweep.csv").read_text()


def test_sweep_grid_file(tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"mode": "vanilla", "k": 4}, {"mode": "pruned", "k": 4, "k0": 2}]))
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--grid-file", grid, "--n-experts", "16", "--steps", "2", "--seed", "0",
               "--out", out) == 0
    assert len(out.read_text().splitlines()) == 3


def test_pareto_fixture(tmp_path):
    out = tmp_path / "front.csv"
    assert run("pareto", "--input", DATA / "pareto3.csv", "--out", out) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    assert [(float(r[7]), float(r[9])) for r in rows] == [(10.0, 0.5), (12.0, 0.3)]


def test_pareto_needs_quality(tmp_path, capsys):
    src = tmp_path / "s.csv"
    assert run("sweep", "--n-experts", "16", "--k", "2", "--steps", "2", "--seed", "0", "--out", src) == 0
    assert run("pareto", "--input", src) == 2
    assert "quality_delta" in capsys.readouterr().err


def test_fit_latency_noiseless(tmp_path):
    out = tmp_path / "fit.json"
    assert run("fit-latency", "--input", DATA / "line.csv", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["slope_us_per_expert"] == pytest.approx(2.0, abs=1e-12)
    assert doc["intercept_us"] == pytest.approx(6.4, abs=1e-12)
    assert doc["r_squared"] == 1.0
    assert doc["schema_version"] == 1


def test_fit_latency_degenerate(tmp_path, capsys):
    src = tmp_path / "flat.csv"
    src.write_text("T,latency_us\n5,1\n5,2\n")
    assert run("fit-latency", "--input", src) == 2
    assert "distinct" in capsys.readouterr().err


def test_padding_masked(tmp_path):
    out = tmp_path / "pad.json"
    assert run("padding", "--pad-to", "8", "--batch", "7", "--masked", "--steps", "50",
               "--seed", "1", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["headline"] == {"variant": "masked", "delta_T_vs_unpadded": 0.0}
    assert doc["masked_matches_unpadded_stepwise"] is True


def test_padding_rejects_shrink(capsys):
    assert run("padding", "--pad-to", "4", "--batch", "7", "--seed", "1") == 2
    assert "pad_to" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["simulate", *SIM_FLAGS],
    ["sweep", *SWEEP_FLAGS, "--grid", "full", "--steps", "2"],
    ["padding", "--pad-to", "9", "--batch", "7", "--steps", "20", "--seed", "5", "--gen", "clustered"],
])
def test_byte_identical_repeats_with_workers(tmp_path, argv):
    outputs = []
    for i, workers in enumerate((None, 4, 4)):
        extra = [] if workers is None or argv[0] == "padding" else ["--workers", str(workers)]
        if argv[0] == "simulate":
            extra += ["--layers", "3"]
        target = tmp_path / f"run{i}"
        if argv[0] != "simulate":
            target = tmp_path / f"run{i}.out"
        assert run(*argv, *extra, "--out", target) == 0
        if target.is_dir():
            outputs.append(tuple(p.read_bytes() for p in sorted(target.iterdir())))
        else:
            outputs.append(target.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
