from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from glycast.dataset import ClinicalRecord, GlucoseSeries, MealEvent

START = datetime(2024, 1, 1, tzinfo=timezone.utc)


def grid_timestamps(n, start=START):
    return [start + timedelta(minutes=15 * i) for i in range(n)]


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def complete_record():
    def make(subject_id="P1", **overrides):
        base = dict(
            subject_id=subject_id,
            gender="male",
            age=55.0,
            height_m=1.70,
            weight_kg=70.0,
            bmi=24.2,
            hba1c=75.0,
            ga=24.0,
            tc=4.9,
            tg=1.8,
            hdl=1.1,
            ldl=3.1,
            cr=65.0,
            egfr=110.0,
            ua=330.0,
            bun=6.0,
            fpg=160.0,
            hpp2=260.0,
        )
        base.update(overrides)
        return ClinicalRecord(**base)

    return make


@pytest.fixture
def simple_series():
    def make(n=96, subject_id="P1", meals=(), values=None):
        cgm = np.full(n, 120.0) if values is None else np.asarray(values, dtype=float)
        return GlucoseSeries(subject_id=subject_id, start=START, cgm=cgm, meals=tuple(meals))

    return make


@pytest.fixture
def meal_at():
    def make(index, gl=None, description=None, grams=None, timestamp=None):
        return MealEvent(
            timestamp=timestamp or (START + timedelta(minutes=15 * index)),
            grid_index=index,
            description=description,
            grams=grams,
            gl=gl,
        )

    return make
