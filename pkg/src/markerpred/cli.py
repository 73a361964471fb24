"""Command-line entry points for the forecasting benchmark.

Subcommands:

    forecast run    --config experiment.json
    forecast cv     --algo uoro --seq record.csv --horizon 0.6
    forecast bench  --algo uoro --q 90 --shl 9.0
    forecast report --in results/

Horizons and signal history lengths are given in seconds on the command
line and converted to steps by rounding against the sequence's sampling
period (or --rate for the benchmark, which has no sequence).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from markerpred.harness import (
    ALGORITHMS,
    STOCHASTIC_ALGORITHMS,
    METRIC_NAMES,
    AggregateReport,
    ExperimentConfig,
    bench_step_time,
    grid_search,
    report_from_dir,
    run_experiment,
    write_cv_csv,
)
from markerpred.signal import load_record

logger = logging.getLogger(__name__)


def _config_from_file(path: Path) -> list[ExperimentConfig]:
    """Expand a JSON experiment file into one config per algorithm.

    The file carries either "algorithm" (a string) or "algorithms" (a
    list); "grids" optionally maps algorithm names to grid overrides.
    Relative paths are resolved against the config file's directory.
    """
    with open(path) as f:
        raw = json.load(f)
    if "algorithms" in raw:
        algorithms = raw["algorithms"]
    elif "algorithm" in raw:
        algorithms = [raw["algorithm"]]
    else:
        raise ValueError(f"{path}: config needs 'algorithm' or 'algorithms'")
    base = path.parent
    grids = raw.get("grids", {})
    configs = []
    for algo in algorithms:
        grid = grids.get(algo)
        if grid is not None:
            grid = {k: tuple(v) for k, v in grid.items()}
        configs.append(ExperimentConfig(
            algorithm=algo,
            horizons_s=tuple(raw["horizons_s"]),
            data_manifest=base / raw["data_manifest"],
            out_dir=base / raw["out_dir"],
            grid=grid,
            n_cv=raw.get("n_cv", 50),
            n_test=raw.get("n_test", 300),
            master_seed=raw.get("master_seed", 0),
            max_horizon_s=raw.get("max_horizon_s", 2.0),
            save_loss_traces=raw.get("save_loss_traces", False),
        ))
    return configs


def _print_report(report: AggregateReport) -> None:
    for row in report.rows:
        cells = []
        for name in METRIC_NAMES:
            hr = row.half_ranges[name]
            if hr is None:
                cells.append(f"{name}={row.means[name]:.3f}")
            else:
                cells.append(f"{name}={row.means[name]:.3f}±{hr:.3f}")
        print(f"{report.algorithm:7s} {row.cohort:10s} "
              f"({row.n_conditions} conditions)  " + "  ".join(cells))


def _cmd_run(args: argparse.Namespace) -> int:
    for config in _config_from_file(Path(args.config)):
        report = run_experiment(config)
        _print_report(report)
        print(f"outputs written to {config.out_dir}")
    return 0


def _cmd_cv(args: argparse.Namespace) -> int:
    record = load_record(Path(args.seq))
    config = ExperimentConfig(
        algorithm=args.algo,
        horizons_s=(args.horizon,),
        data_manifest="unused",
        out_dir=args.out or ".",
        n_cv=args.n_cv,
        n_test=1,
        master_seed=args.master_seed,
    )
    results = grid_search(args.algo, record, (args.horizon,), config)
    cv = results[args.horizon]
    chosen = next(e for e in cv.entries if e.hyper == cv.chosen)
    print(f"{args.algo} on {record.label!r} at h={args.horizon:g}s: "
          f"chose ({cv.chosen.key()}) with mean cv RMSE "
          f"{chosen.mean_rmse:.4f} mm over {chosen.n_runs} run(s)")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"cv_{args.algo}_h{args.horizon:g}.csv"
        write_cv_csv(path, cv)
        print(f"surface written to {path}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    L = round(args.shl * args.rate)
    if L < 1:
        raise ValueError(f"--shl {args.shl}s is below one step at {args.rate} Hz")
    ms = bench_step_time(
        args.algo, q=args.q, L=L, n_markers=args.markers, n_steps=args.steps,
    )
    print(f"{args.algo} step (q={args.q}, L={L}, {args.markers} markers): "
          f"median {ms:.3f} ms over {args.steps} steps")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    reports = report_from_dir(Path(args.in_dir))
    for report in reports.values():
        _print_report(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forecast",
        description="Online forecasting benchmark for 3D marker trajectories.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log per-condition progress"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full protocol from a config file")
    p_run.add_argument("--config", required=True, help="experiment JSON file")
    p_run.set_defaults(func=_cmd_run)

    p_cv = sub.add_parser("cv", help="grid-search one sequence and horizon")
    p_cv.add_argument("--algo", required=True, choices=ALGORITHMS)
    p_cv.add_argument("--seq", required=True, help="sequence CSV file")
    p_cv.add_argument("--horizon", required=True, type=float,
                      help="forecast horizon in seconds")
    p_cv.add_argument("--n-cv", type=int, default=50,
                      help="runs per tuple (default 50)")
    p_cv.add_argument("--master-seed", type=int, default=0)
    p_cv.add_argument("--out", help="directory for the surface CSV")
    p_cv.set_defaults(func=_cmd_cv)

    p_bench = sub.add_parser("bench", help="time one training step")
    p_bench.add_argument("--algo", required=True, choices=STOCHASTIC_ALGORITHMS)
    p_bench.add_argument("--q", required=True, type=int, help="hidden state size")
    p_bench.add_argument("--shl", required=True, type=float,
                         help="signal history length in seconds")
    p_bench.add_argument("--rate", type=float, default=10.0,
                         help="sampling rate in Hz (default 10)")
    p_bench.add_argument("--markers", type=int, default=3)
    p_bench.add_argument("--steps", type=int, default=1000,
                         help="measured steps (default 1000)")
    p_bench.set_defaults(func=_cmd_bench)

    p_report = sub.add_parser("report", help="recompute tables from stored runs")
    p_report.add_argument("--in", dest="in_dir", required=True,
                          help="directory holding runs_*.csv files")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
