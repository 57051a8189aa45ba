"""Coverage, mean set size and size-stratified coverage violation (SSCV).

Prediction sets may be given as a boolean membership matrix ``(n, C)`` or as
a sequence of label collections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


def _sizes_and_hits(sets, labels=None):
    if isinstance(sets, np.ndarray) and sets.dtype == bool:
        masks = np.atleast_2d(sets)
        sizes = masks.sum(axis=1)
        hits = None
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (masks.shape[0],):
                raise ParameterError("sets and labels differ in length")
            hits = masks[np.arange(len(labels)), labels]
        return sizes, hits, masks.shape[1]
    sets = [set(s) for s in sets]
    sizes = np.array([len(s) for s in sets], dtype=np.int64)
    hits = None
    if labels is not None:
        labels = list(labels)
        if len(labels) != len(sets):
            raise ParameterError("sets and labels differ in length")
        hits = np.array([int(y) in s for s, y in zip(sets, labels)], dtype=bool)
    return sizes, hits, None


def coverage(sets, labels) -> float:
    """Fraction of examples whose label is in its set."""
    _, hits, _ = _sizes_and_hits(sets, labels)
    if hits.size == 0:
        raise ParameterError("no examples")
    return float(hits.mean())


def mean_size(sets) -> float:
    sizes, _, _ = _sizes_and_hits(sets)
    if sizes.size == 0:
        raise ParameterError("no examples")
    return float(sizes.mean())


def _check_strata(strata, num_classes):
    strata = [tuple(sorted(set(int(s) for s in stratum))) for stratum in strata]
    flat = [s for stratum in strata for s in stratum]
    if any(not stratum for stratum in strata):
        raise ParameterError("strata must be nonempty")
    if len(flat) != len(set(flat)):
        raise ParameterError("strata overlap")
    if num_classes is not None and sorted(flat) != list(range(num_classes + 1)):
        raise ParameterError(f"strata must partition the sizes 0..{num_classes}")
    return strata


def stratum_table(sets, labels, strata=None, num_classes=None):
    """``[(sizes, count, coverage or None), ...]``; default strata are single sizes."""
    sizes, hits, C = _sizes_and_hits(sets, labels)
    C = num_classes if num_classes is not None else C
    if strata is None:
        top = C if C is not None else int(sizes.max(initial=0))
        strata = [(s,) for s in range(top + 1)]
    else:
        strata = _check_strata(strata, C)
    table = []
    for stratum in strata:
        member = np.isin(sizes, stratum)
        count = int(member.sum())
        table.append((stratum, count, float(hits[member].mean()) if count else None))
    return table


def sscv(sets, labels, alpha: float, strata=None, num_classes=None):
    """Largest |stratum coverage - (1 - alpha)| over nonempty strata; None if all are empty."""
    deviations = [
        abs(cov - (1.0 - alpha))
        for _, count, cov in stratum_table(sets, labels, strata, num_classes)
        if count
    ]
    return max(deviations) if deviations else None


@dataclass(frozen=True)
class MetricsReport:
    coverage: float
    mean_size: float
    sscv: float | None
    strata: list = field(default_factory=list)

    CSV_HEADER = "coverage,mean_size,sscv"

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "mean_size": self.mean_size,
            "sscv": self.sscv,
            "strata": [{"sizes": list(s), "count": c, "coverage": cov} for s, c, cov in self.strata],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def csv_row(self) -> str:
        from .dataio import fmt_float

        sscv_text = "nan" if self.sscv is None else fmt_float(self.sscv)
        return f"{fmt_float(self.coverage)},{fmt_float(self.mean_size)},{sscv_text}"


def report(sets, labels, alpha: float, strata=None, num_classes=None) -> MetricsReport:
    table = stratum_table(sets, labels, strata, num_classes)
    deviations = [abs(cov - (1.0 - alpha)) for _, count, cov in table if count]
    return MetricsReport(
        coverage=coverage(sets, labels),
        mean_size=mean_size(sets),
        sscv=max(deviations) if deviations else None,
        strata=table,
    )
