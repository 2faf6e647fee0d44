"""Selection of the subjects whose inferred glucose markers sit closest to a
tester's measured values."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import CapacityError, RangeError, SchemaError


@dataclass(frozen=True)
class MarkerPoint:
    """A subject's (FPG, 2HPP) point in mg/dL, inferred or measured."""

    subject_id: str
    fpg: float
    hpp2: float
    source: str = "inferred"  # "inferred" | "measured"

    def __post_init__(self) -> None:
        if self.source not in ("inferred", "measured"):
            raise RangeError(f"source must be inferred/measured, got {self.source!r}")
        for name, value in (("fpg", self.fpg), ("hpp2", self.hpp2)):
            if not (math.isfinite(value) and value > 0):
                raise RangeError(f"subject {self.subject_id}: {name} must be finite and > 0, got {value}")


def marker_distance(a: MarkerPoint, b: MarkerPoint) -> float:
    return math.hypot(a.fpg - b.fpg, a.hpp2 - b.hpp2)


def select_similar(pool: Sequence[MarkerPoint], tester: MarkerPoint, m: int) -> list[str]:
    """The m pool subject_ids nearest the tester, ascending by distance.

    Distances are raw-mg/dL Euclidean; ties break by subject_id.
    """
    if any(point.subject_id == tester.subject_id for point in pool):
        raise SchemaError(f"tester {tester.subject_id} must not appear in the pool")
    if not 1 <= m <= len(pool):
        raise CapacityError(f"m must lie in 1..{len(pool)}, got {m}")
    ranked = sorted(pool, key=lambda p: (marker_distance(p, tester), p.subject_id))
    return [point.subject_id for point in ranked[:m]]


def selection_log(pool: Sequence[MarkerPoint], tester: MarkerPoint, selected: Sequence[str]) -> dict:
    by_id = {point.subject_id: point for point in pool}
    return {
        "tester": {"subject_id": tester.subject_id, "fpg": tester.fpg, "hpp2": tester.hpp2},
        "selected": [
            {"subject_id": sid, "distance": marker_distance(by_id[sid], tester)} for sid in selected
        ],
    }


def write_selection_log(path: Path | str, log: dict) -> None:
    Path(path).write_text(json.dumps(log, indent=2, sort_keys=True), encoding="utf-8")
