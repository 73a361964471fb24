"""Experiment orchestration: cross-validation, evaluation, aggregation.

The protocol, per sequence and per horizon:

    1. grid search: every hyperparameter tuple is scored by its mean
       cross-validation RMSE over n_cv seeded runs (one run for methods
       without random initialization), and the argmin is selected with a
       deterministic tie-break;
    2. evaluation: the chosen tuple is re-run n_test times (again one run
       for deterministic methods), scoring the test range, with Gaussian
       95% intervals per metric;
    3. aggregation: per-condition results combine into overall and
       per-breathing-class tables plus per-horizon curves.

Online methods (uoro, rtrl, lms) learn from step 0 and never stop
updating; the partition ranges only decide which predictions are scored.
Cross-validation runs stop at the end of the cross-validation range, so
test data never influences hyperparameter selection. The offline linear
regression is fit on its training range only.

Runs are flagged as diverged when a trainer raises on a non-finite
quantity; diverged runs are excluded from statistics but counted, and a
tuple whose runs all diverge is dropped from selection with a warning.

Every random draw descends from (master_seed, sequence, horizon, tuple,
run, phase) through a stable hash, so any subset of the experiment can be
reproduced bit-for-bit in isolation; tasks are independent and results
are reduced in a fixed order.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import platform
import re
import time
import warnings
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

import markerpred
from markerpred.baselines import (
    fit_linreg,
    init_lms,
    lms_step,
    no_prediction,
    predict_linreg,
)
from markerpred.metrics import (
    CiSummary,
    MetricSet,
    PredictionTrace,
    ci_aggregate,
    ci_per_condition,
    compute_metrics,
)
from markerpred.rnn import NonFiniteError, RnnDims, init_params
from markerpred.rtrl import init_influence, rtrl_step
from markerpred.signal import (
    MarkerRecord,
    Partition,
    build_io,
    fit_normalizer,
    load_record,
    make_partition,
)
from markerpred.uoro import UoroHyper, init_memory, uoro_step

logger = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "STOCHASTIC_ALGORITHMS",
    "DEFAULT_GRIDS",
    "METRIC_NAMES",
    "CLIP_TAU",
    "ExperimentConfig",
    "HyperChoice",
    "CvEntry",
    "CvResult",
    "RunRecord",
    "RunResult",
    "EvalResult",
    "TableRow",
    "CurvePoint",
    "AggregateReport",
    "derive_seed",
    "iter_grid",
    "partition_scheme",
    "run_sequence_online",
    "grid_search",
    "evaluate",
    "aggregate",
    "bench_step_time",
    "load_dataset",
    "run_experiment",
    "report_from_dir",
]

ALGORITHMS = ("uoro", "rtrl", "lms", "linreg", "none")
STOCHASTIC_ALGORITHMS = ("uoro", "rtrl")
METRIC_NAMES = ("mae", "rmse", "nrmse", "max_error", "jitter")

# Shared gradient-clipping threshold for every trained method.
CLIP_TAU = 2.0

# Shipped cross-validation ranges per algorithm.
DEFAULT_GRIDS: dict[str, dict[str, tuple]] = {
    "uoro": {
        "eta": (0.05, 0.1, 0.2),
        "sigma_init": (0.02, 0.05),
        "L": (10, 30, 50, 70, 90),
        "q": (10, 30, 50, 70, 90),
    },
    "rtrl": {
        "eta": (0.02, 0.05, 0.1, 0.2),
        "sigma_init": (0.01, 0.02, 0.05),
        "L": (10, 25, 40, 55),
        "q": (10, 25, 40, 55),
    },
    "lms": {
        "eta": (0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2),
        "L": (10, 30, 50, 70, 90),
    },
    "linreg": {"L": (10, 20, 30, 40, 50, 60, 70, 80, 90)},
    "none": {},
}

_GRID_KEYS = ("eta", "sigma_init", "L", "q")


@dataclass(frozen=True)
class HyperChoice:
    """One grid point; fields an algorithm does not use stay None."""

    eta: float | None = None
    sigma_init: float | None = None
    L: int | None = None
    q: int | None = None

    def key(self) -> str:
        """Canonical text form, used for seeding and file output."""
        parts = [
            f"{name}={getattr(self, name)!r}"
            for name in _GRID_KEYS
            if getattr(self, name) is not None
        ]
        return ",".join(parts) if parts else "default"

    def sort_key(self) -> tuple:
        """Deterministic tie-break: smaller q, then L, then eta, then
        sigma_init."""
        return (
            self.q if self.q is not None else 0,
            self.L if self.L is not None else 0,
            self.eta if self.eta is not None else 0.0,
            self.sigma_init if self.sigma_init is not None else 0.0,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun one algorithm's experiment.

    horizons_s are in seconds, validated against (0, max_horizon_s].
    grid falls back to the algorithm's shipped default when None.
    """

    algorithm: str
    horizons_s: tuple[float, ...]
    data_manifest: str | Path
    out_dir: str | Path
    grid: dict[str, tuple] | None = None
    n_cv: int = 50
    n_test: int = 300
    master_seed: int = 0
    max_horizon_s: float = 2.0
    save_loss_traces: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )
        if not self.horizons_s:
            raise ValueError("horizons_s must be non-empty")
        for h in self.horizons_s:
            if not 0 < h <= self.max_horizon_s:
                raise ValueError(
                    f"horizon {h}s outside (0, {self.max_horizon_s}]s"
                )
        if self.n_cv < 1 or self.n_test < 1:
            raise ValueError("n_cv and n_test must be >= 1")
        if self.grid is not None and self.algorithm != "none":
            if not all(len(v) > 0 for v in self.grid.values()):
                raise ValueError("grid axes must be non-empty")

    def effective_grid(self) -> dict[str, tuple]:
        return DEFAULT_GRIDS[self.algorithm] if self.grid is None else self.grid


@dataclass(frozen=True)
class RunResult:
    """Outcome of one seeded pass over a sequence."""

    trace: PredictionTrace | None
    losses: np.ndarray | None
    loss_start: int | None
    diverged: bool = False
    diverged_at: int | None = None
    diverged_quantity: str | None = None


@dataclass(frozen=True)
class CvEntry:
    hyper: HyperChoice
    mean_rmse: float
    n_diverged: int
    n_runs: int


@dataclass(frozen=True)
class CvResult:
    algorithm: str
    sequence: str
    horizon_s: float
    entries: tuple[CvEntry, ...]
    chosen: HyperChoice


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    seed: int
    diverged: bool
    diverged_quantity: str | None
    metrics: MetricSet | None


@dataclass(frozen=True)
class EvalResult:
    algorithm: str
    sequence: str
    breathing_class: str
    horizon_s: float
    hyper: HyperChoice
    runs: tuple[RunRecord, ...]
    ci: dict[str, CiSummary | None]
    n_diverged: int
    mean_loss_trace: np.ndarray | None = None
    loss_trace_start: int | None = None

    def metric_mean(self, name: str) -> float:
        values = [getattr(r.metrics, name) for r in self.runs if not r.diverged]
        if not values:
            raise ValueError("all runs diverged; no metric mean available")
        return float(np.mean(values))


@dataclass(frozen=True)
class TableRow:
    cohort: str
    n_sequences: int
    n_conditions: int
    means: dict[str, float]
    half_ranges: dict[str, float | None]


@dataclass(frozen=True)
class CurvePoint:
    horizon_s: float
    n_sequences: int
    means: dict[str, float]


@dataclass(frozen=True)
class AggregateReport:
    algorithm: str
    rows: tuple[TableRow, ...]
    curve: tuple[CurvePoint, ...]


# ------------------------------ seeding ------------------------------------


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and any identifying parts."""
    text = "|".join([str(master_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ------------------------------ grids --------------------------------------


def iter_grid(algorithm: str, grid: dict[str, tuple]) -> list[HyperChoice]:
    """Expand a grid specification into an ordered list of tuples."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    keys = [k for k in _GRID_KEYS if k in grid]
    unknown = set(grid) - set(_GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid axes {sorted(unknown)}")
    if not keys:
        return [HyperChoice()]
    choices = []
    for combo in itertools.product(*(sorted(set(grid[k])) for k in keys)):
        choices.append(HyperChoice(**dict(zip(keys, combo))))
    return choices


def partition_scheme(algorithm: str) -> str:
    """Offline regression trains on 54 s and validates on 6 s; every other
    method uses the 30 s / 30 s online split."""
    return "offline_54_6" if algorithm == "linreg" else "online_30_30"


# ------------------------------ single runs --------------------------------


def _trace_from_steps(
    record: MarkerRecord, preds: list[np.ndarray], ks: list[int]
) -> PredictionTrace:
    n_m = record.n_markers
    pred = np.stack(preds).reshape(len(preds), n_m, 3)
    true = record.positions[ks[0] : ks[-1] + 1]
    return PredictionTrace(pred=pred, true=true, k_min=ks[0])


def run_sequence_online(
    algorithm: str,
    record: MarkerRecord,
    partition: Partition,
    hyper: HyperChoice,
    h: int,
    seed: int,
    scoring_range: range | None = None,
    collect_loss: bool = False,
) -> RunResult:
    """One seeded pass over a sequence, scoring one step range.

    Online methods start at step 0 and update their weights on every
    windowed sample whose target precedes the end of the scoring range;
    predictions whose target lands inside the scoring range are collected,
    denormalized to mm, and paired with the true positions. The offline
    regression fits once on the training range; `none` holds the last
    observed position.

    Args:
        algorithm: one of ALGORITHMS.
        record: the sequence, in mm.
        partition: step ranges from `make_partition`.
        hyper: grid point; fields irrelevant to the algorithm are ignored.
        h: horizon in steps (>= 1).
        seed: seed for weight initialization and sign draws.
        scoring_range: defaults to the partition's test range.
        collect_loss: also return the per-sample training loss trace.

    Returns:
        RunResult; on divergence the trace is None and the failing step
        and quantity are recorded instead.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    scoring = partition.test if scoring_range is None else scoring_range

    if algorithm == "none":
        ks = [k for k in scoring if k - h >= 0]
        preds = [no_prediction(record, h, k - h) for k in ks]
        return RunResult(
            trace=_trace_from_steps(record, preds, ks), losses=None, loss_start=None
        )

    normalizer = fit_normalizer(record, partition.train)
    n_m = record.n_markers
    L = hyper.L
    if L is None:
        raise ValueError(f"{algorithm} requires a signal history length L")
    p = 3 * n_m

    if algorithm == "linreg":
        train_samples = [
            build_io(record, normalizer, L, h, n)
            for n in range(max(0, partition.train.stop - (L + h - 1)))
        ]
        model = fit_linreg(train_samples)
        preds, ks = [], []
        for k in scoring:
            n = k - (L + h - 1)
            if n < 0:
                continue
            sample = build_io(record, normalizer, L, h, n)
            y = predict_linreg(model, sample.u)
            preds.append(normalizer.denormalize(y.reshape(n_m, 3)).ravel())
            ks.append(k)
        return RunResult(
            trace=_trace_from_steps(record, preds, ks), losses=None, loss_start=None
        )

    # Online trainers: uoro, rtrl, lms.
    first_n = 0
    last_n = scoring.stop - (L + h - 1) - 1
    if last_n < first_n:
        raise ValueError(
            f"scoring range {scoring} unreachable with L={L}, h={h}"
        )
    if algorithm == "uoro":
        dims = RnnDims(q=hyper.q, m=3 * n_m * L, p=p)
        params = init_params(dims, hyper.sigma_init, seed)
        x = np.zeros(dims.q)
        memory = init_memory(dims)
        uoro_hyper = UoroHyper(
            eta=hyper.eta, tau=CLIP_TAU, sigma_init=hyper.sigma_init,
            L=L, q=hyper.q,
        )
        nu_rng = np.random.default_rng([seed, 1])
    elif algorithm == "rtrl":
        dims = RnnDims(q=hyper.q, m=3 * n_m * L, p=p)
        params = init_params(dims, hyper.sigma_init, seed)
        x = np.zeros(dims.q)
        influence = init_influence(dims)
    else:
        lms = init_lms(m=3 * n_m * L, p=p, eta=hyper.eta, tau=CLIP_TAU)

    preds: list[np.ndarray] = []
    ks: list[int] = []
    losses = np.empty(last_n - first_n + 1) if collect_loss else None
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(first_n, last_n + 1):
            sample = build_io(record, normalizer, L, h, n)
            try:
                if algorithm == "uoro":
                    step = uoro_step(
                        params, x, memory, sample.u, sample.target, uoro_hyper, nu_rng
                    )
                    params, x, memory = step.params, step.x, step.memory
                elif algorithm == "rtrl":
                    step = rtrl_step(
                        params, x, influence, sample.u, sample.target,
                        eta=hyper.eta, tau=CLIP_TAU,
                    )
                    params, x, influence = step.params, step.x, step.influence
                else:
                    step = lms_step(lms, sample.u, sample.target)
                    lms = step.filter
            except NonFiniteError as err:
                return RunResult(
                    trace=None, losses=None, loss_start=None,
                    diverged=True, diverged_at=n, diverged_quantity=err.quantity,
                )
            if collect_loss:
                losses[n - first_n] = step.loss
            if sample.target_index in scoring:
                preds.append(
                    normalizer.denormalize(step.y.reshape(n_m, 3)).ravel()
                )
                ks.append(sample.target_index)

    return RunResult(
        trace=_trace_from_steps(record, preds, ks),
        losses=losses,
        loss_start=first_n + L + h - 1 if collect_loss else None,
    )


# ------------------------------ grid search --------------------------------


def _n_runs(algorithm: str, requested: int) -> int:
    """Methods without random initialization need a single run."""
    return requested if algorithm in STOCHASTIC_ALGORITHMS else 1


def grid_search(
    algorithm: str,
    record: MarkerRecord,
    horizons_s: tuple[float, ...],
    config: ExperimentConfig,
) -> dict[float, CvResult]:
    """Mean cross-validation RMSE per grid point, per horizon.

    Each tuple runs n_cv times (once for deterministic methods) scoring
    the cross-validation range; diverged runs are dropped from the mean,
    fully diverged tuples are excluded with a warning, and the argmin of
    the surviving means is chosen with the deterministic tie-break.

    Raises:
        RuntimeError: every tuple diverged for some horizon.
    """
    partition = make_partition(record, partition_scheme(algorithm))
    grid = iter_grid(algorithm, config.effective_grid())
    n_runs = _n_runs(algorithm, config.n_cv)
    results: dict[float, CvResult] = {}
    for h_s in horizons_s:
        h = _horizon_steps(h_s, record)
        entries = []
        for hyper in grid:
            rmses, n_div = [], 0
            for r in range(n_runs):
                seed = derive_seed(
                    config.master_seed, record.label, h, hyper.key(), r, "cv"
                )
                outcome = run_sequence_online(
                    algorithm, record, partition, hyper, h, seed,
                    scoring_range=partition.cross_validation,
                )
                if outcome.diverged:
                    n_div += 1
                else:
                    rmses.append(compute_metrics(outcome.trace).rmse)
            if rmses:
                mean_rmse = float(np.mean(rmses))
            else:
                mean_rmse = float("nan")
                warnings.warn(
                    f"{algorithm} tuple ({hyper.key()}) diverged in all "
                    f"{n_runs} cross-validation runs on {record.label!r} "
                    f"at h={h_s}s; excluded",
                    stacklevel=2,
                )
            entries.append(
                CvEntry(hyper=hyper, mean_rmse=mean_rmse, n_diverged=n_div,
                        n_runs=n_runs)
            )
        alive = [e for e in entries if not np.isnan(e.mean_rmse)]
        if not alive:
            raise RuntimeError(
                f"every {algorithm} tuple diverged on {record.label!r} at "
                f"h={h_s}s; nothing to select"
            )
        chosen = min(alive, key=lambda e: (e.mean_rmse,) + e.hyper.sort_key())
        logger.info(
            "%s cv %s h=%.3gs: chose (%s) rmse=%.4f mm",
            algorithm, record.label, h_s, chosen.hyper.key(), chosen.mean_rmse,
        )
        results[h_s] = CvResult(
            algorithm=algorithm,
            sequence=record.label,
            horizon_s=h_s,
            entries=tuple(entries),
            chosen=chosen.hyper,
        )
    return results


def _horizon_steps(h_s: float, record: MarkerRecord) -> int:
    h = round(h_s / record.sample_period)
    if h < 1:
        raise ValueError(
            f"horizon {h_s}s is below one step at "
            f"{1.0 / record.sample_period:g} Hz"
        )
    return h


# ------------------------------ evaluation ---------------------------------


def evaluate(
    algorithm: str,
    record: MarkerRecord,
    hyper: HyperChoice,
    h_s: float,
    config: ExperimentConfig,
) -> EvalResult:
    """Score the chosen tuple on the test range over n_test seeded runs.

    Deterministic methods run once and report no confidence intervals;
    otherwise each metric gets a Gaussian 95% interval over the
    non-diverged runs (absent when fewer than two survive).
    """
    partition = make_partition(record, partition_scheme(algorithm))
    h = _horizon_steps(h_s, record)
    n_runs = _n_runs(algorithm, config.n_test)
    runs: list[RunRecord] = []
    loss_sum, loss_count, loss_start = None, 0, None
    for r in range(n_runs):
        seed = derive_seed(
            config.master_seed, record.label, h, hyper.key(), r, "test"
        )
        outcome = run_sequence_online(
            algorithm, record, partition, hyper, h, seed,
            collect_loss=config.save_loss_traces,
        )
        if outcome.diverged:
            runs.append(RunRecord(
                run_index=r, seed=seed, diverged=True,
                diverged_quantity=outcome.diverged_quantity, metrics=None,
            ))
            continue
        runs.append(RunRecord(
            run_index=r, seed=seed, diverged=False, diverged_quantity=None,
            metrics=compute_metrics(outcome.trace),
        ))
        if config.save_loss_traces and outcome.losses is not None:
            if loss_sum is None:
                loss_sum = np.zeros_like(outcome.losses)
                loss_start = outcome.loss_start
            loss_sum += outcome.losses
            loss_count += 1

    alive = [r.metrics for r in runs if not r.diverged]
    ci: dict[str, CiSummary | None] = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(m, name) for m in alive])
        ci[name] = ci_per_condition(values) if values.size >= 2 else None
    return EvalResult(
        algorithm=algorithm,
        sequence=record.label,
        breathing_class=record.breathing_class,
        horizon_s=h_s,
        hyper=hyper,
        runs=tuple(runs),
        ci=ci,
        n_diverged=sum(r.diverged for r in runs),
        mean_loss_trace=None if loss_sum is None else loss_sum / loss_count,
        loss_trace_start=loss_start,
    )


# ------------------------------ aggregation --------------------------------


def aggregate(
    results: dict[tuple[str, float], EvalResult],
    sequences: tuple[str, ...],
    horizons_s: tuple[float, ...],
    classes: dict[str, str],
    cohort_exclude: tuple[str, ...] = (),
) -> AggregateReport:
    """Combine per-(sequence, horizon) results into report tables.

    The overall row averages each metric's per-condition means over the
    full sequence x horizon grid and aggregates the per-condition interval
    half-ranges by the root-sum-of-squares rule. Breathing-class cohort
    rows do the same over the matching sequences, skipping labels in
    cohort_exclude (which stay in the overall row). Curves average over
    sequences per horizon.

    Raises:
        ValueError: the result grid is incomplete; the message lists every
            missing or fully diverged cell.
    """
    missing = []
    for label in sequences:
        for h_s in horizons_s:
            cell = results.get((label, h_s))
            if cell is None:
                missing.append(f"({label}, {h_s}s): absent")
            elif all(r.diverged for r in cell.runs):
                missing.append(f"({label}, {h_s}s): all runs diverged")
    if missing:
        raise ValueError(
            "incomplete result grid; cannot aggregate:\n  " + "\n  ".join(missing)
        )
    if not sequences or not horizons_s:
        raise ValueError("empty sequence or horizon list")

    algorithm = next(iter(results.values())).algorithm

    def row_for(cohort: str, labels: tuple[str, ...]) -> TableRow:
        cells = [results[(lab, h)] for lab in labels for h in horizons_s]
        means, halves = {}, {}
        for name in METRIC_NAMES:
            means[name] = float(np.mean([c.metric_mean(name) for c in cells]))
            cis = [c.ci[name] for c in cells]
            if all(s is not None for s in cis):
                halves[name] = ci_aggregate(np.array([s.half_range for s in cis]))
            else:
                halves[name] = None
        return TableRow(
            cohort=cohort, n_sequences=len(labels),
            n_conditions=len(cells), means=means, half_ranges=halves,
        )

    rows = [row_for("all", tuple(sequences))]
    for cohort in ("regular", "irregular"):
        labels = tuple(
            lab for lab in sequences
            if classes.get(lab) == cohort and lab not in cohort_exclude
        )
        if labels:
            rows.append(row_for(cohort, labels))

    curve = []
    for h_s in horizons_s:
        cells = [results[(lab, h_s)] for lab in sequences]
        curve.append(CurvePoint(
            horizon_s=h_s,
            n_sequences=len(sequences),
            means={
                name: float(np.mean([c.metric_mean(name) for c in cells]))
                for name in METRIC_NAMES
            },
        ))
    return AggregateReport(algorithm=algorithm, rows=tuple(rows), curve=tuple(curve))


# ------------------------------ benchmarking -------------------------------


def bench_step_time(
    algorithm: str,
    q: int,
    L: int,
    n_markers: int = 3,
    n_steps: int = 1000,
    seed: int = 0,
) -> float:
    """Median wall-clock milliseconds per training step.

    Chains real steps on synthetic bounded inputs (10 unmeasured warm-up
    steps, then n_steps measured ones) so caches and allocator are warm.
    Only the recurrent trainers are worth timing here.
    """
    if algorithm not in STOCHASTIC_ALGORITHMS:
        raise ValueError("step-time benchmark supports 'uoro' and 'rtrl' only")
    dims = RnnDims(q=q, m=3 * n_markers * L, p=3 * n_markers)
    params = init_params(dims, sigma_init=0.02, seed=seed)
    rng = np.random.default_rng([seed, 2])
    x = np.zeros(dims.q)
    warmup = 10
    inputs = rng.uniform(-1.0, 1.0, size=(n_steps + warmup, dims.m + 1))
    inputs[:, 0] = 1.0
    targets = rng.uniform(-1.0, 1.0, size=(n_steps + warmup, dims.p))

    if algorithm == "uoro":
        memory = init_memory(dims)
        hyper = UoroHyper(eta=0.05, tau=CLIP_TAU, sigma_init=0.02, L=L, q=q)
    else:
        influence = init_influence(dims)

    elapsed = np.empty(n_steps)
    for i in range(n_steps + warmup):
        t0 = time.perf_counter()
        if algorithm == "uoro":
            step = uoro_step(params, x, memory, inputs[i], targets[i], hyper, rng)
            params, x, memory = step.params, step.x, step.memory
        else:
            step = rtrl_step(
                params, x, influence, inputs[i], targets[i],
                eta=0.05, tau=CLIP_TAU,
            )
            params, x, influence = step.params, step.x, step.influence
        t1 = time.perf_counter()
        if i >= warmup:
            elapsed[i - warmup] = t1 - t0
    return float(np.median(elapsed) * 1e3)


# ------------------------------ dataset loading ----------------------------


def load_dataset(
    manifest_path: str | Path,
) -> tuple[list[MarkerRecord], tuple[str, ...]]:
    """Read a dataset manifest: JSON with a "sequences" list of CSV paths
    (relative to the manifest) and an optional "cohort_exclude" label list.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    paths = manifest.get("sequences")
    if not paths:
        raise ValueError(f"{manifest_path}: manifest lists no sequences")
    records = [
        load_record(manifest_path.parent / p) for p in paths
    ]
    labels = [r.label for r in records]
    if len(set(labels)) != len(labels):
        raise ValueError(f"{manifest_path}: duplicate sequence labels {labels}")
    return records, tuple(manifest.get("cohort_exclude", ()))


# ------------------------------ output files -------------------------------


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _condition_stem(algorithm: str, label: str, h_s: float) -> str:
    return f"{algorithm}_{_safe(label)}_h{h_s:g}"


def write_cv_csv(path: Path, result: CvResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["algorithm", "sequence", "horizon_s", "eta", "sigma_init", "L",
             "q", "mean_cv_rmse_mm", "n_diverged", "n_runs", "chosen"]
        )
        for e in result.entries:
            writer.writerow([
                result.algorithm, result.sequence, repr(result.horizon_s),
                _opt(e.hyper.eta), _opt(e.hyper.sigma_init),
                _opt(e.hyper.L), _opt(e.hyper.q),
                repr(e.mean_rmse), e.n_diverged, e.n_runs,
                int(e.hyper == result.chosen),
            ])


def write_runs_csv(path: Path, result: EvalResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["algorithm", "sequence", "breathing_class", "horizon_s", "hyper",
             "run_index", "seed", "diverged", "diverged_quantity",
             *METRIC_NAMES]
        )
        for r in result.runs:
            base = [
                result.algorithm, result.sequence, result.breathing_class,
                repr(result.horizon_s), result.hyper.key(),
                r.run_index, r.seed, int(r.diverged),
                r.diverged_quantity or "",
            ]
            if r.diverged:
                writer.writerow(base + [""] * len(METRIC_NAMES))
            else:
                writer.writerow(
                    base + [repr(getattr(r.metrics, n)) for n in METRIC_NAMES]
                )


def write_loss_csv(path: Path, result: EvalResult) -> None:
    if result.mean_loss_trace is None:
        return
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["target_step", "mean_loss"])
        for i, value in enumerate(result.mean_loss_trace):
            writer.writerow([result.loss_trace_start + i, repr(float(value))])


def write_summary_csv(path: Path, report: AggregateReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["algorithm", "cohort", "n_sequences", "n_conditions"]
        for name in METRIC_NAMES:
            header += [name, f"{name}_ci_half_range"]
        writer.writerow(header)
        for row in report.rows:
            line = [report.algorithm, row.cohort, row.n_sequences, row.n_conditions]
            for name in METRIC_NAMES:
                line.append(repr(row.means[name]))
                hr = row.half_ranges[name]
                line.append("" if hr is None else repr(hr))
            writer.writerow(line)


def write_curve_csv(path: Path, report: AggregateReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["algorithm", "horizon_s", "n_sequences", *METRIC_NAMES])
        for point in report.curve:
            writer.writerow(
                [report.algorithm, repr(point.horizon_s), point.n_sequences]
                + [repr(point.means[n]) for n in METRIC_NAMES]
            )


def _opt(value) -> str:
    return "" if value is None else repr(value)


# ------------------------------ full protocol ------------------------------


def run_experiment(config: ExperimentConfig) -> AggregateReport:
    """Execute the whole protocol for one algorithm and write all outputs.

    Produces, under config.out_dir: one cross-validation surface CSV and
    one per-run metrics CSV per (sequence, horizon); optional loss-trace
    CSVs; a Table-3-style summary CSV; a per-horizon curve CSV; and a
    manifest.json recording the configuration, seeds, versions, and chosen
    tuples.
    """
    records, cohort_exclude = load_dataset(config.data_manifest)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[tuple[str, float], EvalResult] = {}
    chosen_map: dict[str, dict[str, str]] = {}
    for record in records:
        cv_results = grid_search(
            config.algorithm, record, config.horizons_s, config
        )
        chosen_map[record.label] = {}
        for h_s, cv in cv_results.items():
            stem = _condition_stem(config.algorithm, record.label, h_s)
            write_cv_csv(out_dir / f"cv_{stem}.csv", cv)
            result = evaluate(config.algorithm, record, cv.chosen, h_s, config)
            write_runs_csv(out_dir / f"runs_{stem}.csv", result)
            if config.save_loss_traces:
                write_loss_csv(out_dir / f"loss_{stem}.csv", result)
            results[(record.label, h_s)] = result
            chosen_map[record.label][f"{h_s:g}"] = cv.chosen.key()

    report = aggregate(
        results,
        sequences=tuple(r.label for r in records),
        horizons_s=config.horizons_s,
        classes={r.label: r.breathing_class for r in records},
        cohort_exclude=cohort_exclude,
    )
    write_summary_csv(out_dir / f"summary_{config.algorithm}.csv", report)
    write_curve_csv(out_dir / f"curve_{config.algorithm}.csv", report)

    manifest = {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "package_version": markerpred.__version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "config": {
            **{k: v for k, v in asdict(config).items()
               if k not in ("data_manifest", "out_dir")},
            "data_manifest": str(config.data_manifest),
            "out_dir": str(config.out_dir),
        },
        "seed_scheme": "sha256(master_seed|sequence|h_steps|tuple|run|phase)",
        "sequences": [
            {"label": r.label, "breathing_class": r.breathing_class,
             "n_steps": r.n_steps, "sample_period_s": r.sample_period}
            for r in records
        ],
        "cohort_exclude": list(cohort_exclude),
        "chosen_hyperparameters": chosen_map,
        "n_diverged_total": sum(r.n_diverged for r in results.values()),
    }
    manifest_file = out_dir / f"manifest_{config.algorithm}.json"
    with open(manifest_file, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return report


# ------------------------------ reporting ----------------------------------


def report_from_dir(in_dir: str | Path) -> dict[str, AggregateReport]:
    """Rebuild summary and curve CSVs from stored per-run CSVs.

    Scans in_dir for runs_*.csv files (self-contained rows), reconstructs
    the per-condition statistics, re-aggregates per algorithm, and
    rewrites the summary and curve files. Returns the reports keyed by
    algorithm.
    """
    in_dir = Path(in_dir)
    per_algo: dict[str, dict[tuple[str, float], EvalResult]] = {}
    classes: dict[str, str] = {}
    for path in sorted(in_dir.glob("runs_*.csv")):
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            continue
        algo = rows[0]["algorithm"]
        label = rows[0]["sequence"]
        h_s = float(rows[0]["horizon_s"])
        classes[label] = rows[0]["breathing_class"]
        runs = []
        for row in rows:
            diverged = row["diverged"] == "1"
            metrics = None
            if not diverged:
                metrics = MetricSet(
                    **{n: float(row[n]) for n in METRIC_NAMES}
                )
            runs.append(RunRecord(
                run_index=int(row["run_index"]), seed=int(row["seed"]),
                diverged=diverged,
                diverged_quantity=row["diverged_quantity"] or None,
                metrics=metrics,
            ))
        alive = [r.metrics for r in runs if not r.diverged]
        ci = {}
        for name in METRIC_NAMES:
            values = np.array([getattr(m, name) for m in alive])
            ci[name] = ci_per_condition(values) if values.size >= 2 else None
        per_algo.setdefault(algo, {})[(label, h_s)] = EvalResult(
            algorithm=algo, sequence=label,
            breathing_class=classes[label], horizon_s=h_s,
            hyper=HyperChoice(), runs=tuple(runs), ci=ci,
            n_diverged=sum(r.diverged for r in runs),
        )

    if not per_algo:
        raise ValueError(f"no runs_*.csv files under {in_dir}")
    reports = {}
    for algo, results in per_algo.items():
        labels = tuple(sorted({k[0] for k in results}))
        horizons = tuple(sorted({k[1] for k in results}))
        report = aggregate(results, labels, horizons, classes)
        write_summary_csv(in_dir / f"summary_{algo}.csv", report)
        write_curve_csv(in_dir / f"curve_{algo}.csv", report)
        reports[algo] = report
    return reports
