"""Tests for the forecast command-line interface."""

from __future__ import annotations

import json

import pytest

from markerpred.cli import build_parser, main
from markerpred.signal import MarkerRecord, synthetic_record, write_record


@pytest.fixture()
def dataset(tmp_path):
    paths = []
    for i, cls in enumerate(("regular", "irregular")):
        rec = synthetic_record(duration_s=70.0, seed=60 + i, label=f"seq{i}")
        rec = MarkerRecord(positions=rec.positions,
                           sample_period=rec.sample_period,
                           label=rec.label, breathing_class=cls)
        write_record(tmp_path / f"seq{i}.csv", rec)
        paths.append(f"seq{i}.csv")
    (tmp_path / "dataset.json").write_text(json.dumps({"sequences": paths}))
    return tmp_path


def _write_config(tmp_path, **overrides):
    raw = {
        "algorithms": ["lms", "none"],
        "horizons_s": [0.4],
        "data_manifest": "dataset.json",
        "out_dir": "out",
        "grids": {"lms": {"eta": [0.02, 0.05], "L": [10]}},
        "n_cv": 1,
        "n_test": 1,
        "master_seed": 3,
    }
    raw.update(overrides)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(raw))
    return path


def test_parser_wires_all_subcommands():
    parser = build_parser()
    args = parser.parse_args(["run", "--config", "x.json"])
    assert args.command == "run" and args.config == "x.json"
    args = parser.parse_args(
        ["cv", "--algo", "uoro", "--seq", "a.csv", "--horizon", "0.6"]
    )
    assert args.algo == "uoro" and args.horizon == 0.6
    args = parser.parse_args(["bench", "--algo", "rtrl", "--q", "55",
                              "--shl", "5.5"])
    assert args.q == 55 and args.shl == 5.5
    args = parser.parse_args(["report", "--in", "results"])
    assert args.in_dir == "results"


def test_parser_rejects_unknown_algorithm():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["cv", "--algo", "lstm", "--seq", "a.csv",
                           "--horizon", "0.6"])


def test_run_command_executes_config(dataset, capsys):
    config = _write_config(dataset)
    assert main(["run", "--config", str(config)]) == 0
    out = capsys.readouterr().out
    assert "lms" in out and "none" in out and "all" in out
    out_dir = dataset / "out"
    assert (out_dir / "summary_lms.csv").exists()
    assert (out_dir / "summary_none.csv").exists()
    assert (out_dir / "runs_lms_seq0_h0.4.csv").exists()
    assert (out_dir / "manifest_none.json").exists()


def test_run_command_single_algorithm_key(dataset):
    config = _write_config(dataset)
    raw = json.loads(config.read_text())
    del raw["algorithms"]
    raw["algorithm"] = "none"
    config.write_text(json.dumps(raw))
    assert main(["run", "--config", str(config)]) == 0
    assert (dataset / "out" / "summary_none.csv").exists()


def test_run_command_requires_algorithm_key(dataset):
    config = _write_config(dataset)
    raw = json.loads(config.read_text())
    del raw["algorithms"]
    config.write_text(json.dumps(raw))
    with pytest.raises(ValueError, match="algorithm"):
        main(["run", "--config", str(config)])


def test_cv_command_prints_choice_and_writes_surface(dataset, capsys):
    assert main([
        "cv", "--algo", "linreg", "--seq", str(dataset / "seq0.csv"),
        "--horizon", "0.4", "--out", str(dataset / "cvout"),
    ]) == 0
    out = capsys.readouterr().out
    assert "chose (L=" in out and "mean cv RMSE" in out
    assert (dataset / "cvout" / "cv_linreg_h0.4.csv").exists()


def test_bench_command_converts_seconds_to_steps(capsys):
    assert main(["bench", "--algo", "uoro", "--q", "10", "--shl", "1.0",
                 "--steps", "20"]) == 0
    out = capsys.readouterr().out
    assert "q=10, L=10" in out and "median" in out


def test_bench_command_rejects_subsecond_step_history():
    with pytest.raises(ValueError, match="below one step"):
        main(["bench", "--algo", "uoro", "--q", "10", "--shl", "0.01",
              "--steps", "5"])


def test_report_command_rebuilds_tables(dataset, capsys):
    config = _write_config(dataset, algorithms=["none"])
    assert main(["run", "--config", str(config)]) == 0
    capsys.readouterr()
    assert main(["report", "--in", str(dataset / "out")]) == 0
    out = capsys.readouterr().out
    assert "none" in out and "all" in out
