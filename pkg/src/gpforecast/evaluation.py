"""Forecast benchmark: horizon sweep, history-count sweep and CSV reports.

Maneuver ``i`` (1-based, trip order) is forecast with the previous ``i - 1``
maneuvers as its history.  Forecasts are issued after every prefix end in the
grid and scored against the held-out samples of the same window; errors are
summarised by the nearest-rank 95th percentile of the absolute error.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyInput, GpForecastError
from .gp import LinearKernelParams, TrainingSet, fit_posterior, optimize_hyperparams, predict_arrays
from .history import DEFAULT_PARAMS, ManeuverBank, assemble_training_set, derive_seed, warm_start_params
from .ingest import WINDOW_LEN
from .models import ForecasterKind, ForecastRequest, constant_speed_forecast

logger = logging.getLogger(__name__)

MODEL_ORDER = tuple(k.value for k in ForecasterKind)
LAST_SAMPLE = WINDOW_LEN - 1

POOLING_MODES = ("records", "maneuver")

FIG3_COLUMNS = ("model", "horizon_s", "reception_rate_hz", "p95_abs_error_ft", "n_records")
HISTORY_COLUMNS = ("model", "history_count", "p95_abs_error_ft", "n_records")


def reception_rate(horizon: float) -> float:
    """Update rate (Hz) equivalent to forecasting ``horizon`` seconds ahead at 10 Hz."""
    if not 0.1 - 1e-9 <= horizon <= 3.0 + 1e-9:
        raise ValueError(f"horizon must lie in [0.1, 3.0] s, got {horizon}")
    return 1.0 / (horizon + 0.1)


def p95_abs_error(errors) -> float:
    """Nearest-rank 95th percentile: element ``ceil(0.95 n) - 1`` of the sorted list."""
    errs = np.sort(np.abs(np.asarray(errors, dtype=float).reshape(-1)))
    n = errs.size
    if n == 0:
        raise EmptyInput("p95 of an empty error list")
    rank = (95 * n + 99) // 100
    return float(errs[rank - 1])


@dataclass(frozen=True)
class EvaluationGrid:
    """Horizons and prefix ends in 0.1 s samples; a forecast needs ``p + h <= 30``."""

    horizons: tuple[int, ...] = tuple(range(1, 31))
    prefix_ends: tuple[int, ...] = tuple(range(1, 30))

    def __post_init__(self):
        if not self.horizons or min(self.horizons) < 1 or max(self.horizons) > LAST_SAMPLE:
            raise ValueError("horizons must be sample counts in 1..30")
        if not self.prefix_ends or min(self.prefix_ends) < 1:
            raise ValueError("prefix ends must be sample indices >= 1 (two observations)")
        if min(self.prefix_ends) + min(self.horizons) > LAST_SAMPLE:
            raise ValueError("no (prefix end, horizon) pair fits inside the window")
        object.__setattr__(self, "horizons", tuple(sorted(set(self.horizons))))
        object.__setattr__(self, "prefix_ends", tuple(sorted(set(self.prefix_ends))))

    def horizons_after(self, p: int) -> list[int]:
        return [h for h in self.horizons if p + h <= LAST_SAMPLE]


@dataclass(frozen=True)
class EvalSettings:
    models: tuple[str, ...] = MODEL_ORDER
    threshold: float = 1.0
    budget: int = 50
    refit: str = "prefix"
    history_mode: str = "augment"
    velocity_window: int = 2
    init: LinearKernelParams = DEFAULT_PARAMS
    fix_c: bool = False
    seed: int = 0
    pooling: str = "records"

    def __post_init__(self):
        unknown = set(self.models) - set(MODEL_ORDER)
        if unknown or not self.models:
            raise ValueError(f"models must be a non-empty subset of {MODEL_ORDER}")
        object.__setattr__(self, "models", tuple(m for m in MODEL_ORDER if m in self.models))
        if self.refit not in ("prefix", "start"):
            raise ValueError("refit must be 'prefix' or 'start'")
        if self.history_mode not in ("augment", "model_bank"):
            raise ValueError("history_mode must be 'augment' or 'model_bank'")
        if not 0 < self.threshold <= 3.0:
            raise ValueError("threshold must lie in (0, 3.0] s")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")

    @property
    def needs_gp(self) -> bool:
        return "gp" in self.models or "compound" in self.models

    @property
    def needs_baseline(self) -> bool:
        return "baseline" in self.models or "compound" in self.models


@dataclass(frozen=True)
class ForecastRecord:
    maneuver_id: str
    maneuver_index: int
    history_count: int
    prefix_end: float
    horizon: float
    truth: float
    predicted: dict = field(compare=False)
    train_max_t_current: float = math.nan

    def abs_error(self, model: str) -> float:
        return abs(self.predicted[model] - self.truth)


@dataclass(frozen=True)
class RecordFailure:
    maneuver_id: str
    prefix_end: float
    model: str
    message: str


@dataclass
class RecordSet:
    records: list[ForecastRecord]
    failures: list[RecordFailure]


def _evaluate_maneuver(args) -> tuple[list[ForecastRecord], list[RecordFailure]]:
    index, history, grid, settings = args
    count = index - 1
    entry = history[count]
    window = entry.window
    mid = window.maneuver_id
    hist_train = None
    if settings.history_mode == "augment" and count > 0:
        hist_train = assemble_training_set(history, count, None)
    params = warm_start_params(history, count, settings.init)

    records, failures = [], []
    fitted_once = False
    for p in grid.prefix_ends:
        hs = grid.horizons_after(p)
        if not hs:
            continue
        t_pre, y_pre = window.t[: p + 1], window.y[: p + 1]
        horizons = np.array(hs) / 10.0
        req = ForecastRequest(t_pre, y_pre, horizons)
        targets = np.array([p + h for h in hs])
        preds: dict[str, np.ndarray] = {}
        train_max = float(t_pre[-1])

        if settings.needs_baseline:
            base = constant_speed_forecast(req, settings.velocity_window)
            preds["baseline"] = np.array([b.mean for b in base])
        if settings.needs_gp:
            prefix = TrainingSet.from_arrays(t_pre, y_pre, mid)
            train = prefix if hist_train is None else TrainingSet.concat([hist_train, prefix])
            try:
                if settings.budget > 1 and (settings.refit == "prefix" or not fitted_once):
                    params = optimize_hyperparams(
                        train, params, settings.budget,
                        seed=derive_seed(settings.seed, index, p), fix_c=settings.fix_c,
                    )
                    fitted_once = True
                post = fit_posterior(params, train)
                preds["gp"] = predict_arrays(post, req.target_times)[0]
                train_max = float(np.max(train.times_from(mid)))
            except GpForecastError as exc:
                logger.warning("%s prefix %.1f s: GP failed: %s", mid, p / 10.0, exc)
                failures.append(RecordFailure(mid, p / 10.0, "gp", str(exc)))
        if "compound" in settings.models and "gp" in preds:
            preds["compound"] = np.where(
                horizons >= settings.threshold - 1e-9, preds["gp"], preds["baseline"]
            )
        elif "compound" in settings.models:
            failures.append(RecordFailure(mid, p / 10.0, "compound", "GP sub-model failed"))

        for j, (h, tgt) in enumerate(zip(hs, targets)):
            records.append(
                ForecastRecord(
                    maneuver_id=mid,
                    maneuver_index=index,
                    history_count=count,
                    prefix_end=p / 10.0,
                    horizon=h / 10.0,
                    truth=float(window.y[tgt]),
                    predicted={m: float(preds[m][j]) for m in settings.models if m in preds},
                    train_max_t_current=train_max,
                )
            )
    return records, failures


def generate_records(
    bank: ManeuverBank,
    grid: EvaluationGrid = EvaluationGrid(),
    settings: EvalSettings = EvalSettings(),
    workers: int = 1,
) -> RecordSet:
    """Forecast every maneuver of ``bank`` with its predecessors as history.

    Each task receives a bank snapshot holding maneuvers ``1..i``, so results
    do not depend on ``workers``.
    """
    if len(bank) == 0:
        raise EmptyInput("empty corpus")
    tasks = [(i, bank.snapshot(i), grid, settings) for i in range(1, len(bank) + 1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_maneuver, tasks))
    else:
        results = [_evaluate_maneuver(t) for t in tasks]
    records = [r for recs, _ in results for r in recs]
    failures = [f for _, fails in results for f in fails]
    return RecordSet(records, failures)


def leakage_violations(records) -> list[ForecastRecord]:
    """Records whose training data reached the forecast issue time or beyond."""
    return [
        r for r in records
        if not (r.train_max_t_current <= r.prefix_end + 1e-12 and r.horizon > 0)
    ]


@dataclass(frozen=True)
class HorizonRow:
    model: str
    horizon: float
    reception_rate: float
    p95: float
    n_records: int


@dataclass(frozen=True)
class HistoryRow:
    model: str
    history_count: int
    p95: float
    n_records: int


@dataclass
class ExperimentReport:
    fig3: list[HorizonRow] = field(default_factory=list)
    fig4: list[HistoryRow] = field(default_factory=list)
    fig5: list[HistoryRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    n_records: int = 0
    failures: dict = field(default_factory=dict)
    leakage_violations: int = 0

    def p95(self, table: str, model: str) -> dict:
        rows = getattr(self, table)
        key = "horizon" if table == "fig3" else "history_count"
        return {getattr(r, key): r.p95 for r in rows if r.model == model}


def _models_in(records) -> list[str]:
    seen = {m for r in records for m in r.predicted}
    return [m for m in MODEL_ORDER if m in seen]


def horizon_table(records, pooling: str = "records") -> list[HorizonRow]:
    """p95 per (model, horizon).

    ``records`` pools every record of a horizon into one list; ``maneuver``
    takes each maneuver's p95 first and reports the p95 of those values.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"pooling must be one of {POOLING_MODES}")
    pooled = defaultdict(lambda: defaultdict(list))
    for r in records:
        for m in r.predicted:
            pooled[m, round(r.horizon * 10)][r.maneuver_id].append(r.abs_error(m))
    rows = []
    for m in _models_in(records):
        for h in sorted(k for mm, k in pooled if mm == m):
            per_maneuver = pooled[m, h].values()
            n = sum(len(e) for e in per_maneuver)
            if pooling == "records":
                p95 = p95_abs_error([x for e in per_maneuver for x in e])
            else:
                p95 = p95_abs_error([p95_abs_error(e) for e in per_maneuver])
            rows.append(HorizonRow(m, h / 10.0, reception_rate(h / 10.0), p95, n))
    return rows


def history_table(records, horizon_band=(0.1, 3.0), phase=(0.0, 3.0)) -> list[HistoryRow]:
    """p95 per (model, history count) over records inside the band and phase.

    ``phase`` bounds the prefix end as a half-open interval ``(lo, hi]``,
    ``horizon_band`` bounds the horizon as a closed interval.
    """
    eps = 1e-9
    groups = defaultdict(list)
    for r in records:
        if not (phase[0] + eps < r.prefix_end <= phase[1] + eps):
            continue
        if not (horizon_band[0] - eps <= r.horizon <= horizon_band[1] + eps):
            continue
        for m in r.predicted:
            groups[m, r.history_count].append(r.abs_error(m))
    rows = []
    for m in _models_in(records):
        for c in sorted(k for mm, k in groups if mm == m):
            errs = groups[m, c]
            rows.append(HistoryRow(m, c, p95_abs_error(errs), len(errs)))
    return rows


def _failure_counts(failures) -> dict:
    counts = defaultdict(int)
    for f in failures:
        counts[f.model] += 1
    return dict(counts)


def run_horizon_sweep(
    bank: ManeuverBank,
    grid: EvaluationGrid = EvaluationGrid(),
    settings: EvalSettings = EvalSettings(),
    workers: int = 1,
    records: RecordSet | None = None,
) -> ExperimentReport:
    """p95 absolute error and reception rate per (model, horizon), pooled over maneuvers and prefixes."""
    rs = records or generate_records(bank, grid, settings, workers)
    return ExperimentReport(
        fig3=horizon_table(rs.records, settings.pooling),
        n_records=len(rs.records),
        failures=_failure_counts(rs.failures),
        leakage_violations=len(leakage_violations(rs.records)),
    )


def run_history_sweep(
    bank: ManeuverBank,
    band: tuple[float, float] = (0.1, 3.0),
    phase: tuple[float, float] = (0.0, 3.0),
    settings: EvalSettings = EvalSettings(),
    workers: int = 1,
    records: RecordSet | None = None,
) -> list[HistoryRow]:
    if len(bank) < 2:
        raise ValueError("history sweep needs at least 2 maneuvers")
    rs = records or generate_records(bank, EvaluationGrid(), settings, workers)
    return history_table(rs.records, band, phase)


FIG4_BAND = (2.0, 3.0)
FIG4_PHASE = (0.0, 1.0)


def run_experiment(
    bank: ManeuverBank,
    grid: EvaluationGrid = EvaluationGrid(),
    settings: EvalSettings = EvalSettings(),
    workers: int = 1,
    config: dict | None = None,
) -> tuple[ExperimentReport, RecordSet]:
    """Generate records once and build all three tables from them."""
    rs = generate_records(bank, grid, settings, workers)
    report = run_horizon_sweep(bank, grid, settings, records=rs)
    if len(bank) >= 2:
        report.fig4 = history_table(rs.records, FIG4_BAND, FIG4_PHASE)
        report.fig5 = history_table(rs.records)
    report.config = dict(config or {})
    return report, rs


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_report(report: ExperimentReport, out_dir) -> list[Path]:
    """Write fig3.csv, fig4.csv, fig5.csv and summary.txt; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not (report.fig3 or report.fig4 or report.fig5):
        logger.warning("empty report: writing header-only CSV files")
    paths = [out / "fig3.csv", out / "fig4.csv", out / "fig5.csv", out / "summary.txt"]
    _write_csv(paths[0], FIG3_COLUMNS,
               [(r.model, r.horizon, r.reception_rate, r.p95, r.n_records) for r in report.fig3])
    for path, rows in ((paths[1], report.fig4), (paths[2], report.fig5)):
        _write_csv(path, HISTORY_COLUMNS, [(r.model, r.history_count, r.p95, r.n_records) for r in rows])

    lines = ["# run configuration"]
    lines += [f"{k}={v}" for k, v in report.config.items()]
    lines += ["", "# counts", f"records={report.n_records}",
              f"leakage_violations={report.leakage_violations}"]
    for m in MODEL_ORDER:
        if m in report.failures:
            lines.append(f"failures_{m}={report.failures[m]}")
    lines.append(f"failures_total={sum(report.failures.values())}")
    if report.fig3:
        lines += ["", "# p95 absolute error (ft) by horizon"]
        models = _models_in_rows(report.fig3)
        lines.append("horizon_s reception_hz " + " ".join(models))
        by = {(r.model, r.horizon): r for r in report.fig3}
        for h in sorted({r.horizon for r in report.fig3}):
            vals = " ".join(_fmt(by[m, h].p95) if (m, h) in by else "-" for m in models)
            lines.append(f"{h:.1f} {_fmt(reception_rate(h))} {vals}")
    paths[3].write_text("\n".join(lines) + "\n")
    return paths


def _models_in_rows(rows) -> list[str]:
    seen = {r.model for r in rows}
    return [m for m in MODEL_ORDER if m in seen]


def read_report(out_dir) -> ExperimentReport:
    """Load the CSV tables written by :func:`emit_report`."""
    out = Path(out_dir)
    report = ExperimentReport()
    with open(out / "fig3.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            report.fig3.append(HorizonRow(
                row["model"], float(row["horizon_s"]), float(row["reception_rate_hz"]),
                float(row["p95_abs_error_ft"]), int(row["n_records"]),
            ))
    for name in ("fig4", "fig5"):
        path = out / f"{name}.csv"
        if not path.exists():
            continue
        with open(path, newline="") as fh:
            rows = [HistoryRow(r["model"], int(r["history_count"]), float(r["p95_abs_error_ft"]),
                               int(r["n_records"])) for r in csv.DictReader(fh)]
        setattr(report, name, rows)
    return report


def settings_dict(settings: EvalSettings) -> dict:
    d = asdict(settings)
    d["init"] = settings.init.as_dict()
    return d
