"""Experimental protocol: chronological split, anchored multi-horizon
forecasting, error metrics, glycemic confusion matrices, and ablations.

The split is chronological (first 80% train, last 20% test, with the final
20% of train designated validation but not used by the default pipeline). The
posterior is fitted once on the train segment; each test anchor then lets the
filter consume the full history up to the anchor before forecasting 1..H
steps ahead, so no forecast ever sees its own target.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .bsts.components import (
    ComponentSpec,
    SpikeSlabSettings,
    assemble_model,
    circadian_seasonal,
    day_seasonal,
    meal_seasonal,
    regression,
    semi_local_trend,
)
from .bsts.sampler import forecast_anchors, mcmc_fit
from .dataset import GlucoseSeries
from .errors import CapacityError, ConfigError, RangeError, SchemaError

ABLATION_NAMES = ("similar_subjects", "day_seasonal", "meal_seasonal", "circadian_seasonal")
GLYCEMIC_BANDS = ("hypo", "normal", "hyper")


@dataclass(frozen=True)
class EvalConfig:
    split_ratio: float = 0.8
    validation_fraction_of_train: float = 0.2
    window: int = 8
    horizons: tuple[int, ...] = (1, 2, 3, 4)
    hypo_max: float = 70.0
    hyper_min: float = 180.0
    draws: int = 1000
    burn: int = 200
    seed: int = 0
    m_similar: int = 2
    forecast_thin: int = 1
    mape_denominator: str = "forecast"

    def __post_init__(self) -> None:
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if not 0.0 <= self.validation_fraction_of_train < 1.0:
            raise ConfigError("validation_fraction_of_train must lie in [0, 1)")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be a nonempty list of steps >= 1")
        if not self.hypo_max < self.hyper_min:
            raise ConfigError("hypo_max must be below hyper_min")
        if self.draws <= self.burn:
            raise ConfigError("draws must exceed burn")
        if self.forecast_thin < 1:
            raise ConfigError("forecast_thin must be >= 1")
        if self.mape_denominator not in ("forecast", "actual"):
            raise ConfigError("mape_denominator must be 'forecast' or 'actual'")


def compute_metrics(
    actual: Sequence[float], predicted: Sequence[float], mape_denominator: str = "forecast"
) -> tuple[float, float, float]:
    """(MAE, RMSE, MAPE%) with the MAPE denominator on the forecast values."""
    x = np.asarray(actual, dtype=float)
    y = np.asarray(predicted, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise SchemaError(f"series shapes differ or are empty: {x.shape} vs {y.shape}")
    if not np.all(np.isfinite(y)):
        raise RangeError("predicted values must be finite")
    err = x - y
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    denom = y if mape_denominator == "forecast" else x
    if np.any(denom == 0.0):
        raise RangeError("MAPE denominator contains zero")
    mape = float(np.mean(np.abs(err) / np.abs(denom)) * 100.0)
    return mae, rmse, mape


def glycemic_band(value: float, hypo_max: float = 70.0, hyper_min: float = 180.0) -> int:
    if value < hypo_max:
        return 0
    if value > hyper_min:
        return 2
    return 1


def glycemic_confusion(
    actual: Sequence[float],
    predicted: Sequence[float],
    hypo_max: float = 70.0,
    hyper_min: float = 180.0,
) -> tuple[np.ndarray, float]:
    """3x3 counts (rows actual, columns predicted; hypo/normal/hyper order)."""
    x = np.asarray(actual, dtype=float)
    y = np.asarray(predicted, dtype=float)
    if x.shape != y.shape:
        raise SchemaError(f"series shapes differ: {x.shape} vs {y.shape}")
    matrix = np.zeros((3, 3), dtype=np.int64)
    for a, p in zip(x, y):
        matrix[glycemic_band(a, hypo_max, hyper_min), glycemic_band(p, hypo_max, hyper_min)] += 1
    accuracy = float(np.trace(matrix) / matrix.sum()) if matrix.sum() else 0.0
    return matrix, accuracy


@dataclass(frozen=True)
class HorizonReport:
    horizon: int
    mae: float
    rmse: float
    mape: float
    n: int
    forecast_min: float
    forecast_max: float
    confusion: np.ndarray
    accuracy: float


@dataclass(frozen=True)
class MetricsReport:
    subject_id: str
    horizons: tuple[int, ...]
    reports: Mapping[int, HorizonReport]
    n_train: int
    n_test: int
    validation_range: tuple[int, int]

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "validation_range": list(self.validation_range),
            "horizons": {
                str(h): {
                    "mae": r.mae,
                    "rmse": r.rmse,
                    "mape": r.mape,
                    "n": r.n,
                    "forecast_min": r.forecast_min,
                    "forecast_max": r.forecast_max,
                    "accuracy": r.accuracy,
                    "confusion": [[int(c) for c in row] for row in r.confusion],
                }
                for h, r in sorted(self.reports.items())
            },
        }


@dataclass(frozen=True)
class ForecastPipeline:
    """Component selection and regression design for one tester's run.

    `regressors`, when present, must cover the tester's full series (train and
    test rows) so that anchored forecasts can read future regressor values;
    similar subjects' trajectories are historical data, so their future values
    are known. `custom_specs` replaces the standard trend + three-seasonal
    stack entirely (a regression spec is still appended for the design).
    """

    use_day: bool = True
    use_meal: bool = True
    use_circadian: bool = True
    circadian_durations: tuple[int, int] = (48, 24)
    regressors: Optional[np.ndarray] = None
    regressor_names: tuple[str, ...] = ()
    spike_slab: Optional[SpikeSlabSettings] = None
    custom_specs: Optional[tuple[ComponentSpec, ...]] = None

    def __post_init__(self) -> None:
        if self.regressors is not None:
            x = np.asarray(self.regressors, dtype=float)
            object.__setattr__(self, "regressors", x)
            if x.ndim != 2 or x.shape[1] != len(self.regressor_names):
                raise SchemaError("regressors must be (n, J) matching regressor_names")

    def component_specs(self, series: GlucoseSeries, n_train: int) -> list[ComponentSpec]:
        if self.custom_specs is not None:
            specs = list(self.custom_specs)
            has_regression = any(s.kind == "regression" for s in specs)
            if self.regressors is not None and self.regressor_names and not has_regression:
                specs.append(regression(self.regressor_names, self.spike_slab))
            return specs
        offset = (series.start.hour * 60 + series.start.minute) // 15
        specs = [semi_local_trend()]
        if self.use_day:
            base = day_seasonal()
            specs.append(replace(base, phase=offset % sum(base.durations)))
        if self.use_meal:
            base = meal_seasonal()
            specs.append(replace(base, phase=offset % sum(base.durations)))
        if self.use_circadian:
            base = circadian_seasonal(self.circadian_durations)
            specs.append(replace(base, phase=offset % sum(base.durations)))
        if self.regressors is not None and self.regressor_names:
            specs.append(regression(self.regressor_names, self.spike_slab))
        return specs


def train_test_split_sizes(n: int, cfg: EvalConfig) -> tuple[int, int, tuple[int, int]]:
    n_train = int(math.floor(n * cfg.split_ratio))
    n_test = n - n_train
    val_len = int(math.floor(n_train * cfg.validation_fraction_of_train))
    validation_range = (n_train - val_len, n_train)
    return n_train, n_test, validation_range


def sliding_window_eval(
    pipeline: ForecastPipeline, series: GlucoseSeries, cfg: EvalConfig
) -> MetricsReport:
    """Fit on the train segment, forecast every test anchor, aggregate metrics.

    Anchors step one interval at a time; anchor t forecasts y_{t+h} for each
    configured horizon using data up to and including t only.
    """
    y = series.cgm
    n = y.size
    max_h = max(cfg.horizons)
    n_train, n_test, validation_range = train_test_split_sizes(n, cfg)
    min_len = int(math.ceil((cfg.window + max_h + 1) / (1.0 - cfg.split_ratio))) + 1
    if n_train < cfg.window + 2 or n_test < max_h + 1:
        raise CapacityError(
            f"series of length {n} is too short for split {cfg.split_ratio} with window "
            f"{cfg.window} and horizon {max_h}; need at least {min_len} points"
        )

    x_full = pipeline.regressors
    if x_full is not None and x_full.shape[0] < n:
        raise SchemaError(f"regressors cover {x_full.shape[0]} rows but the series has {n}")

    specs = pipeline.component_specs(series, n_train)
    x_train = x_full[:n_train] if x_full is not None else None
    model = assemble_model(specs, y[:n_train], x_train)
    draws = mcmc_fit(model, y[:n_train], x=x_train, draws=cfg.draws, burn=cfg.burn, seed=cfg.seed)

    anchors = np.arange(n_train - 1, n - max_h)
    rng = np.random.default_rng([cfg.seed, 0xF0C5])
    forecasts = forecast_anchors(
        model,
        draws,
        y,
        anchors=anchors,
        horizons=cfg.horizons,
        x=x_full,
        rng=rng,
        thin=cfg.forecast_thin,
    )

    reports: dict[int, HorizonReport] = {}
    for h in cfg.horizons:
        predicted = forecasts[h]["mean"]
        actual = y[anchors + h]
        mae, rmse, mape = compute_metrics(actual, predicted, cfg.mape_denominator)
        confusion, accuracy = glycemic_confusion(actual, predicted, cfg.hypo_max, cfg.hyper_min)
        reports[h] = HorizonReport(
            horizon=h,
            mae=mae,
            rmse=rmse,
            mape=mape,
            n=int(actual.size),
            forecast_min=float(np.min(predicted)),
            forecast_max=float(np.max(predicted)),
            confusion=confusion,
            accuracy=accuracy,
        )

    return MetricsReport(
        subject_id=series.subject_id,
        horizons=tuple(cfg.horizons),
        reports=reports,
        n_train=n_train,
        n_test=n_test,
        validation_range=validation_range,
    )


@dataclass(frozen=True)
class EvalSubject:
    """One tester plus the regression design its pipeline would use."""

    series: GlucoseSeries
    regressors: Optional[np.ndarray] = None
    regressor_names: tuple[str, ...] = ()


def build_similarity_design(
    tester: GlucoseSeries,
    similar: Sequence[GlucoseSeries],
    gl_columns: Optional[Mapping[str, np.ndarray]] = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Design matrix of similar subjects' CGM (and optional GL) trajectories.

    Columns are aligned to the tester's grid index; shorter donor series are
    cycled so every tester row has a value.
    """
    n = len(tester)
    columns = []
    names = []
    for donor in similar:
        idx = np.arange(n) % len(donor)
        columns.append(donor.cgm[idx])
        names.append(f"sim_{donor.subject_id}_cgm")
        if gl_columns is not None and donor.subject_id in gl_columns:
            gl = np.asarray(gl_columns[donor.subject_id], dtype=float)
            columns.append(gl[np.arange(n) % gl.size])
            names.append(f"sim_{donor.subject_id}_gl")
    if not columns:
        raise SchemaError("no similar-subject columns to build")
    return np.column_stack(columns), tuple(names)


def _pipeline_for(subject: EvalSubject, removal: Optional[str]) -> ForecastPipeline:
    use_regressors = removal != "similar_subjects" and subject.regressors is not None
    return ForecastPipeline(
        use_day=removal != "day_seasonal",
        use_meal=removal != "meal_seasonal",
        use_circadian=removal != "circadian_seasonal",
        regressors=subject.regressors if use_regressors else None,
        regressor_names=subject.regressor_names if use_regressors else (),
    )


@dataclass(frozen=True)
class AblationTable:
    rows: Mapping[str, Mapping[int, dict]]  # row -> horizon -> {metric: (mean, sd)}
    horizons: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            row: {
                str(h): {metric: [stats[0], stats[1]] for metric, stats in cells.items()}
                for h, cells in per_h.items()
            }
            for row, per_h in self.rows.items()
        }

    def render_text(self) -> str:
        lines = []
        header = f"{'experiment':<28}{'metric':<12}" + "".join(
            f"{f'{h}-step':>18}" for h in self.horizons
        )
        lines.append(header)
        lines.append("-" * len(header))
        for row_name, per_h in self.rows.items():
            for metric in ("mae", "rmse", "mape"):
                cells = []
                for h in self.horizons:
                    mean, sd = per_h[h][metric]
                    cells.append(f"{mean:10.2f} ± {sd:5.2f}")
                label = row_name if metric == "mae" else ""
                lines.append(f"{label:<28}{metric.upper():<12}" + "".join(f"{c:>18}" for c in cells))
        return "\n".join(lines)


def run_ablation(
    base_cfg: EvalConfig,
    removals: Sequence[str],
    subjects: Sequence[EvalSubject],
    seed: int = 0,
) -> AblationTable:
    """Evaluate the baseline plus each single-component removal.

    Each removal drops exactly one component relative to the baseline; rows
    report per-horizon mean ± sd over subjects.
    """
    for removal in removals:
        if removal not in ABLATION_NAMES:
            raise ConfigError(f"unknown ablation {removal!r}; expected one of {ABLATION_NAMES}")
    if not subjects:
        raise ConfigError("at least one subject is required")

    rows: dict[str, dict[int, dict]] = {}
    conditions: list[tuple[str, Optional[str]]] = [("baseline", None)]
    conditions += [(name, name) for name in sorted(set(removals))]
    for row_name, removal in conditions:
        per_subject: dict[int, dict[str, list[float]]] = {
            h: {"mae": [], "rmse": [], "mape": []} for h in base_cfg.horizons
        }
        for i, subject in enumerate(subjects):
            cfg = replace(base_cfg, seed=seed + 1000 * i)
            pipeline = _pipeline_for(subject, removal)
            report = sliding_window_eval(pipeline, subject.series, cfg)
            for h in base_cfg.horizons:
                r = report.reports[h]
                per_subject[h]["mae"].append(r.mae)
                per_subject[h]["rmse"].append(r.rmse)
                per_subject[h]["mape"].append(r.mape)
        rows[row_name] = {
            h: {
                metric: (
                    float(np.mean(values)),
                    float(np.std(values)) if len(values) > 1 else 0.0,
                )
                for metric, values in metrics.items()
            }
            for h, metrics in per_subject.items()
        }
    return AblationTable(rows=rows, horizons=tuple(base_cfg.horizons))


def render_metrics_text(report: MetricsReport) -> str:
    lines = [
        f"subject {report.subject_id}  (train {report.n_train}, test {report.n_test}, "
        f"validation rows {report.validation_range[0]}..{report.validation_range[1] - 1})"
    ]
    header = f"{'metric':<14}" + "".join(f"{f'{h}-step':>14}" for h in report.horizons)
    lines.append(header)
    lines.append("-" * len(header))
    for metric in ("mae", "rmse", "mape", "accuracy"):
        cells = []
        for h in report.horizons:
            r = report.reports[h]
            value = getattr(r, metric)
            cells.append(f"{value * 100.0 if metric == 'accuracy' else value:14.2f}")
        lines.append(f"{metric.upper():<14}" + "".join(cells))
    cells = [
        f"({report.reports[h].forecast_min:.1f}, {report.reports[h].forecast_max:.1f})"
        for h in report.horizons
    ]
    lines.append(f"{'range':<14}" + "".join(f"{c:>14}" for c in cells))
    return "\n".join(lines)


def write_metrics_json(path: Path | str, reports: Sequence[MetricsReport]) -> None:
    payload = [r.to_json() for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def write_confusion_csv(path: Path | str, report: MetricsReport) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["horizon", "actual_band"] + [f"pred_{b}" for b in GLYCEMIC_BANDS])
        for h in report.horizons:
            matrix = report.reports[h].confusion
            for i, band in enumerate(GLYCEMIC_BANDS):
                writer.writerow([h, band] + [int(v) for v in matrix[i]])
