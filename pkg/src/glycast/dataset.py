"""Clinical records, CGM time series, and the glycemic-index table.

All loaders are pure functions of the file bytes: they either return a fully
validated value or raise; no partially valid object ever escapes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import GridError, FoodLookupError, ParseError, RangeError, SchemaError

STEP_MINUTES = 15
STEP = timedelta(minutes=STEP_MINUTES)

CGM_RANGE = (20.0, 700.0)
MARKER_RANGE = (20.0, 700.0)

CLINICAL_COLUMNS = (
    "subject_id",
    "gender",
    "age",
    "height_m",
    "weight_kg",
    "bmi",
    "hba1c",
    "ga",
    "tc",
    "tg",
    "hdl",
    "ldl",
    "cr",
    "egfr",
    "ua",
    "bun",
    "fpg_mgdl",
    "hpp2_mgdl",
)

# Numeric record attributes in column order; fpg/hpp2 carry the _mgdl suffix
# only in the file header.
NUMERIC_FIELDS = (
    "age",
    "height_m",
    "weight_kg",
    "bmi",
    "hba1c",
    "ga",
    "tc",
    "tg",
    "hdl",
    "ldl",
    "cr",
    "egfr",
    "ua",
    "bun",
    "fpg",
    "hpp2",
)

# Features eligible for mean imputation and network encoding. UA/BUN are
# excluded (dropped wholesale during preprocessing) as are the FPG/2HPP
# markers themselves.
IMPUTABLE_FEATURES = (
    "age",
    "height_m",
    "weight_kg",
    "bmi",
    "hba1c",
    "ga",
    "tc",
    "tg",
    "hdl",
    "ldl",
    "cr",
    "egfr",
)


@dataclass(frozen=True)
class ClinicalRecord:
    """One subject's anthropometric and biochemical profile.

    Units are fixed: height m, weight kg, bmi kg/m2, hba1c mmol/mol, ga %,
    lipids mmol/L, cr umol/L, egfr mL/min/1.73m2, fpg/hpp2 mg/dL. Any numeric
    field may be missing (None).
    """

    subject_id: str
    gender: Optional[str] = None  # "male" | "female"
    age: Optional[float] = None
    height_m: Optional[float] = None
    weight_kg: Optional[float] = None
    bmi: Optional[float] = None
    hba1c: Optional[float] = None
    ga: Optional[float] = None
    tc: Optional[float] = None
    tg: Optional[float] = None
    hdl: Optional[float] = None
    ldl: Optional[float] = None
    cr: Optional[float] = None
    egfr: Optional[float] = None
    ua: Optional[float] = None
    bun: Optional[float] = None
    fpg: Optional[float] = None
    hpp2: Optional[float] = None

    def __post_init__(self) -> None:
        if self.gender is not None and self.gender not in ("male", "female"):
            raise RangeError(f"subject {self.subject_id}: gender must be male/female, got {self.gender!r}")
        if self.age is not None and not self.age > 0:
            raise RangeError(f"subject {self.subject_id}: age must be > 0, got {self.age}")
        if self.height_m is not None and not (0.5 < self.height_m < 2.5):
            raise RangeError(f"subject {self.subject_id}: height {self.height_m} m outside (0.5, 2.5)")
        if self.weight_kg is not None and not self.weight_kg > 0:
            raise RangeError(f"subject {self.subject_id}: weight must be > 0, got {self.weight_kg}")
        for name in ("bmi", "hba1c", "ga", "tc", "tg", "hdl", "ldl", "cr", "egfr", "ua", "bun"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise RangeError(f"subject {self.subject_id}: {name} must be > 0, got {value}")
        for name in ("fpg", "hpp2"):
            value = getattr(self, name)
            if value is not None and not (MARKER_RANGE[0] < value < MARKER_RANGE[1]):
                raise RangeError(
                    f"subject {self.subject_id}: {name} {value} mg/dL outside {MARKER_RANGE}"
                )

    def missing_features(self) -> tuple[str, ...]:
        """Names of imputable features absent from this record."""
        return tuple(f for f in IMPUTABLE_FEATURES if getattr(self, f) is None)

    def with_values(self, **kwargs: Optional[float]) -> "ClinicalRecord":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class MealEvent:
    """A dietary entry attached to a grid point of its owning series.

    Either (description, grams) for raw records or a pre-quantified gl.
    """

    timestamp: datetime
    grid_index: int
    description: Optional[str] = None
    grams: Optional[float] = None
    gl: Optional[float] = None


@dataclass(frozen=True)
class GlucoseSeries:
    """CGM values on a strict 15-minute grid with attached meal events."""

    subject_id: str
    start: datetime
    cgm: np.ndarray
    meals: tuple[MealEvent, ...] = ()

    def __post_init__(self) -> None:
        cgm = np.asarray(self.cgm, dtype=float)
        object.__setattr__(self, "cgm", cgm)
        if cgm.ndim != 1 or cgm.size == 0:
            raise GridError(f"subject {self.subject_id}: cgm must be a nonempty 1-d sequence")
        lo, hi = CGM_RANGE
        bad = np.where((cgm <= lo) | (cgm >= hi))[0]
        if bad.size:
            raise RangeError(
                f"subject {self.subject_id}: cgm value {cgm[bad[0]]} at index {bad[0]} "
                f"outside ({lo}, {hi}) mg/dL"
            )
        for meal in self.meals:
            if not 0 <= meal.grid_index < cgm.size:
                raise GridError(
                    f"subject {self.subject_id}: meal at {meal.timestamp} attached outside the grid"
                )

    def __len__(self) -> int:
        return int(self.cgm.size)

    def timestamp_at(self, index: int) -> datetime:
        return self.start + index * STEP

    def timestamps(self) -> list[datetime]:
        return [self.start + i * STEP for i in range(len(self))]


@dataclass(frozen=True)
class GlycemicTable:
    """Food-pattern table of (glycemic index, available carbohydrate per 100 g)."""

    entries: tuple[tuple[str, float, float], ...]
    _by_pattern: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        seen: dict[str, tuple[float, float]] = {}
        for pattern, gi, cho in self.entries:
            key = pattern.strip().lower()
            if not key:
                raise SchemaError("empty food pattern")
            if key in seen:
                raise SchemaError(f"duplicate food pattern {pattern!r}")
            if gi < 0:
                raise RangeError(f"pattern {pattern!r}: gi must be >= 0, got {gi}")
            if not 0 <= cho <= 100:
                raise RangeError(f"pattern {pattern!r}: cho_per_100g {cho} outside [0, 100]")
            seen[key] = (gi, cho)
        object.__setattr__(self, "_by_pattern", seen)

    def lookup(self, description: str) -> tuple[float, float]:
        """Longest-pattern substring match; returns (gi, cho_per_100g)."""
        text = description.strip().lower()
        best: Optional[str] = None
        for pattern in self._by_pattern:
            if pattern in text:
                if best is None or len(pattern) > len(best) or (len(pattern) == len(best) and pattern < best):
                    best = pattern
        if best is None:
            raise FoodLookupError(f"no glycemic-table pattern matches {description!r}")
        return self._by_pattern[best]


def _parse_timestamp(raw: str, row: int) -> datetime:
    text = raw.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"row {row}: bad timestamp {raw!r}: {exc}") from None


def _parse_float(raw: str, column: str, row: int) -> Optional[float]:
    text = raw.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}: non-numeric value {raw!r} in column {column}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: non-finite value in column {column}")
    return value


def _read_rows(path: Path | str, expected: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        raw_header = [h.strip() for h in header]
        header = [h.lower() for h in raw_header]
        expected_set = {c.lower() for c in expected}
        for raw, column in zip(raw_header, header):
            if column not in expected_set:
                raise SchemaError(f"{path}: unknown column {raw}")
        missing = [c for c in expected if c.lower() not in header and not _optional_column(c)]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        rows = []
        for cells in reader:
            if not any(cell.strip() for cell in cells):
                continue
            rows.append({header[i]: (cells[i] if i < len(cells) else "") for i in range(len(header))})
        return rows


def _optional_column(name: str) -> bool:
    return name.startswith("meal_")


def load_clinical(path: Path | str) -> list[ClinicalRecord]:
    """Load one clinical CSV (one row per subject admission) into records.

    Blank cells become missing markers; row order is preserved.
    """
    rows = _read_rows(path, CLINICAL_COLUMNS)
    records: list[ClinicalRecord] = []
    for i, row in enumerate(rows):
        subject_id = row.get("subject_id", "").strip()
        if not subject_id:
            raise ParseError(f"row {i}: empty subject_id")
        gender_raw = row.get("gender", "").strip().lower()
        gender = gender_raw if gender_raw else None
        values: dict[str, Optional[float]] = {}
        for column, attr in zip(CLINICAL_COLUMNS[2:], NUMERIC_FIELDS):
            values[attr] = _parse_float(row.get(column, ""), column, i)
        records.append(ClinicalRecord(subject_id=subject_id, gender=gender, **values))
    return records


TIMESERIES_COLUMNS = ("timestamp", "cgm_mgdl", "meal_desc", "meal_grams", "meal_gl")


def load_timeseries(path: Path | str, subject_id: Optional[str] = None) -> GlucoseSeries:
    """Load one subject's CGM series from CSV.

    Rows carrying a cgm value must form the strict 15-minute grid. Rows with a
    blank cgm cell are meal-only entries and may sit off-grid; each meal is
    attached to the nearest grid point, ties toward the earlier point.
    """
    path = Path(path)
    rows = _read_rows(path, TIMESERIES_COLUMNS)
    if subject_id is None:
        subject_id = path.stem

    grid: list[tuple[datetime, float]] = []
    meal_rows: list[tuple[datetime, Optional[str], Optional[float], Optional[float], int]] = []
    for i, row in enumerate(rows):
        ts = _parse_timestamp(row.get("timestamp", ""), i)
        cgm = _parse_float(row.get("cgm_mgdl", ""), "cgm_mgdl", i)
        desc = row.get("meal_desc", "").strip() or None
        grams = _parse_float(row.get("meal_grams", ""), "meal_grams", i)
        gl = _parse_float(row.get("meal_gl", ""), "meal_gl", i)
        if cgm is not None:
            lo, hi = CGM_RANGE
            if not (lo < cgm < hi):
                raise RangeError(f"row {i}: cgm {cgm} mg/dL outside ({lo}, {hi})")
            grid.append((ts, cgm))
        if desc is not None or gl is not None:
            meal_rows.append((ts, desc, grams, gl, i))
        elif cgm is None:
            raise ParseError(f"row {i}: neither cgm_mgdl nor meal columns present")

    if not grid:
        raise GridError(f"{path}: no cgm rows")
    start = grid[0][0]
    for k, (ts, _) in enumerate(grid):
        expected = start + k * STEP
        if ts == expected:
            continue
        if k > 0 and ts == grid[k - 1][0]:
            raise GridError(f"duplicate timestamp {ts.isoformat()}")
        raise GridError(f"grid gap or misaligned timestamp {ts.isoformat()} (expected {expected.isoformat()})")

    n = len(grid)
    meals: list[MealEvent] = []
    for ts, desc, grams, gl, i in meal_rows:
        offset = (ts - start).total_seconds() / STEP.total_seconds()
        index = int(math.floor(offset + 0.5))
        if offset - math.floor(offset) == 0.5:
            index = int(math.floor(offset))  # tie: attach to the earlier point
        if not 0 <= index < n:
            raise GridError(f"row {i}: meal at {ts.isoformat()} falls outside the cgm grid")
        meals.append(MealEvent(timestamp=ts, grid_index=index, description=desc, grams=grams, gl=gl))

    return GlucoseSeries(
        subject_id=subject_id,
        start=start,
        cgm=np.array([v for _, v in grid], dtype=float),
        meals=tuple(meals),
    )


def load_gl_table(path: Path | str) -> GlycemicTable:
    """Load the (pattern, gi, cho_per_100g) reference table."""
    rows = _read_rows(path, ("pattern", "gi", "cho_per_100g"))
    entries = []
    for i, row in enumerate(rows):
        pattern = row.get("pattern", "").strip()
        gi = _parse_float(row.get("gi", ""), "gi", i)
        cho = _parse_float(row.get("cho_per_100g", ""), "cho_per_100g", i)
        if not pattern or gi is None or cho is None:
            raise ParseError(f"row {i}: pattern, gi, and cho_per_100g are all required")
        entries.append((pattern, gi, cho))
    return GlycemicTable(entries=tuple(entries))


def _format_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_clinical(path: Path | str, records: Iterable[ClinicalRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CLINICAL_COLUMNS)
        for record in records:
            row = [record.subject_id, record.gender or ""]
            row.extend(_format_number(getattr(record, attr)) for attr in NUMERIC_FIELDS)
            writer.writerow(row)


def write_timeseries(path: Path | str, series: GlucoseSeries) -> None:
    path = Path(path)
    meals_by_index: dict[int, list[MealEvent]] = {}
    for meal in series.meals:
        meals_by_index.setdefault(meal.grid_index, []).append(meal)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TIMESERIES_COLUMNS)
        for i, value in enumerate(series.cgm):
            grid_ts = series.timestamp_at(i)
            attached = meals_by_index.get(i, [])
            # A meal shares the grid row only when it sits exactly on the grid
            # point; off-grid meals keep their own timestamp on a cgm-less row.
            merged = next((m for m in attached if m.timestamp == grid_ts), None)
            writer.writerow(
                [
                    grid_ts.isoformat(),
                    _format_number(float(value)),
                    (merged.description or "") if merged else "",
                    _format_number(merged.grams) if merged else "",
                    _format_number(merged.gl) if merged else "",
                ]
            )
            for extra in attached:
                if extra is merged:
                    continue
                writer.writerow(
                    [
                        extra.timestamp.isoformat(),
                        "",
                        extra.description or "",
                        _format_number(extra.grams),
                        _format_number(extra.gl),
                    ]
                )


def write_gl_table(path: Path | str, table: GlycemicTable) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("pattern", "gi", "cho_per_100g"))
        for pattern, gi, cho in table.entries:
            writer.writerow([pattern, _format_number(gi), _format_number(cho)])
