"""Evaluation artifacts over ensemble results.

Cumulative infection curves with empirical 95% bands, multi-scale
severity clusters (grid-cell aggregation of infection events), hourly
event histograms, and policy comparisons.  All functions are pure reads
of immutable EnsembleResults.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid
from .engine import EnsembleResult
from .errors import InvalidInputError


@dataclass
class CurveSeries:
    name: str
    day_keys: list[int]
    mean: list[float]
    ci_low: list[float]
    ci_high: list[float]
    clips: list[str] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "days": self.day_keys,
            "mean": self.mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "clips": self.clips,
        }


@dataclass
class SeverityCluster:
    cell: int
    count: int
    polygon: list[tuple[float, float]]
    color: str

    def to_payload(self) -> dict:
        return {
            "cell": grid.cell_to_hex(self.cell),
            "count": self.count,
            "polygon": [[lat, lon] for lat, lon in self.polygon],
            "color": self.color,
        }


def cumulative_curve(er: EnsembleResult, name: str = "", clips=None) -> CurveSeries:
    if not er.kept:
        raise InvalidInputError("ensemble has no kept runs")
    return CurveSeries(
        name=name or er.meta.get("name", ""),
        day_keys=[int(d) for d in er.day_keys],
        mean=[float(x) for x in er.mean],
        ci_low=[float(x) for x in er.ci_low],
        ci_high=[float(x) for x in er.ci_high],
        clips=list(clips or er.meta.get("clips", [])),
    )


def _severity_color(count: int, edges: tuple[float, float]) -> str:
    if count <= edges[0]:
        return "green"
    if count <= edges[1]:
        return "orange"
    return "red"


def severity_clusters(
    er: EnsembleResult, res: int, backend=None
) -> list[SeverityCluster]:
    """Infection events of kept runs aggregated to the requested resolution.

    Counts are raw event totals over kept runs (divide by len(kept) for
    per-run means); mass is conserved across resolutions.
    """
    backend = backend or grid.get_backend()
    counts: dict[int, int] = {}
    for run in er.kept_runs():
        for c in run.event_cell.tolist():
            counts[c] = counts.get(c, 0) + 1
    if not counts:
        return []
    agg: dict[int, int] = {}
    for cell, n in counts.items():
        parent = cell if grid.cell_level(cell) <= res else backend.parent_cell(cell, res)
        agg[parent] = agg.get(parent, 0) + n
    vals = sorted(agg.values())
    edges = (
        float(np.percentile(vals, 33.4)),
        float(np.percentile(vals, 66.7)),
    )
    return [
        SeverityCluster(cell, n, backend.cell_boundary(cell), _severity_color(n, edges))
        for cell, n in sorted(agg.items())
    ]


def hourly_histogram(
    er: EnsembleResult, region_cells, res: int | None = None,
    tz_offset: int = 9 * 3600, backend=None,
) -> dict:
    """24 bins of percentages of the region's infection events by local hour."""
    backend = backend or grid.get_backend()
    region = {int(c) for c in region_cells}
    if not region:
        raise InvalidInputError("region must be non-empty")
    if res is None:
        res = max(grid.cell_level(c) for c in region)
    bins = np.zeros(24, dtype=np.int64)
    for run in er.kept_runs():
        for c, t in zip(run.event_cell.tolist(), run.event_t.tolist()):
            cc = c if grid.cell_level(c) <= res else backend.parent_cell(c, res)
            if cc in region:
                bins[((t + tz_offset) // 3600) % 24] += 1
    total = int(bins.sum())
    if total == 0:
        return {"bins": [0.0] * 24, "total": 0, "no_data": True}
    return {
        "bins": [100.0 * b / total for b in bins.tolist()],
        "total": total,
        "no_data": False,
    }


def compare_policies(results: list[EnsembleResult], name: str) -> dict:
    """Aligned curves plus a final-day mean ranking; configs must match."""
    if len(results) < 2:
        raise InvalidInputError("comparison needs at least 2 results")
    ref = results[0]
    for er in results[1:]:
        diffs = []
        if list(er.day_keys) != list(ref.day_keys):
            diffs.append("horizon")
        if er.population != ref.population:
            diffs.append("population")
        if diffs:
            raise InvalidInputError(f"incomparable results; fields differ: {diffs}")
    curves = [cumulative_curve(er) for er in results]
    finals = [c.mean[-1] for c in curves]
    ranking = sorted(range(len(curves)), key=lambda i: (finals[i], i))
    return {
        "name": name,
        "curves": [c.to_payload() for c in curves],
        "final_day_means": finals,
        "ranking": ranking,
    }


def curve_from_daily_csv(fobj, kept: list[int]) -> CurveSeries:
    """Independent recomputation of the curve from an exported daily CSV.

    Used to cross-check the API payload against the persisted raw runs.
    """
    import csv

    reader = csv.DictReader(fobj)
    per_run: dict[int, list[tuple[int, int]]] = {}
    for row in reader:
        per_run.setdefault(int(row["run"]), []).append(
            (int(row["day"]), int(row["cum_infections"]))
        )
    keep = sorted(set(kept))
    days = sorted({d for r in keep for d, _ in per_run[r]})
    mat = np.array(
        [[dict(per_run[r])[d] for d in days] for r in keep], dtype=np.float64
    )
    return CurveSeries(
        name="",
        day_keys=days,
        mean=[float(x) for x in mat.mean(axis=0)],
        ci_low=[float(x) for x in np.percentile(mat, 2.5, axis=0)],
        ci_high=[float(x) for x in np.percentile(mat, 97.5, axis=0)],
    )
