"""Mobility restriction policies compiled into trajectory replacements.

Telecommuting replaces workdays of a sampled share of a region's workers
with stay-at-home days; lockdown freezes users who start inside the
region and reroutes visitors onto their own clean historical days;
screening compiles into an in-simulation detection plan.  Policies
compose in a fixed order (telecommuting, then lockdown) with screening
plans merged.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from . import grid
from .errors import InvalidInputError
from .mobility import HistoryIndex, TrajectorySet

log = logging.getLogger(__name__)

DEFAULT_DETECT_PROB = 0.879  # abnormal-temperature probability for infectious


def _date_to_day_key(s: str) -> int:
    y, m, d = (int(x) for x in s.split("-"))
    return (date(y, m, d) - date(1970, 1, 1)).days


@dataclass(frozen=True)
class TelecomRegion:
    polygon: grid.GeoPolygon | None
    reduction: float
    cells: frozenset = frozenset()  # direct cell targeting, alternative to polygon

    def __post_init__(self):
        if not (0.0 <= self.reduction <= 1.0):
            raise InvalidInputError("reduction rate must be in [0, 1]")


@dataclass(frozen=True)
class PolicySpec:
    kind: str  # lockdown | telecommuting | screening
    name: str
    start_day: int  # local calendar-day key (days since 1970-01-01)
    days: int
    polygons: tuple[grid.GeoPolygon, ...] = ()
    regions: tuple[TelecomRegion, ...] = ()
    cells: frozenset = frozenset()
    detect_prob: float = DEFAULT_DETECT_PROB
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("lockdown", "telecommuting", "screening"):
            raise InvalidInputError(f"unknown policy kind: {self.kind}")
        if self.days < 1:
            raise InvalidInputError("policy duration must be >= 1 day")
        if not (0.0 <= self.detect_prob <= 1.0):
            raise InvalidInputError("detect_prob must be in [0, 1]")

    @property
    def day_range(self) -> range:
        return range(self.start_day, self.start_day + self.days)

    @classmethod
    def from_json(cls, doc, district_polygons: dict | None = None):
        """Parse the wire-format policy document."""
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        kind = doc.get("kind")
        if kind not in ("lockdown", "telecommuting", "screening"):
            raise InvalidInputError(f"unknown policy kind: {kind!r}")
        start = doc.get("start")
        if isinstance(start, str):
            start_day = _date_to_day_key(start)
        elif isinstance(start, int):
            start_day = start
        else:
            raise InvalidInputError("policy needs a 'start' date")
        kwargs = dict(
            kind=kind,
            name=doc.get("name", kind),
            start_day=start_day,
            days=int(doc.get("days", 1)),
            rng_seed=int(doc.get("rng_seed", 0)),
        )
        if kind == "lockdown":
            kwargs["polygons"] = tuple(
                grid.GeoPolygon(ring) for ring in doc.get("polygons", [])
            )
        elif kind == "telecommuting":
            regions = []
            for r in doc.get("regions", []):
                poly = None
                cells: frozenset = frozenset()
                if "polygon" in r:
                    poly = grid.GeoPolygon(r["polygon"])
                elif "district" in r:
                    table = district_polygons or {}
                    if r["district"] not in table:
                        raise InvalidInputError(f"unknown district {r['district']!r}")
                    poly = grid.GeoPolygon(table[r["district"]])
                elif "cells" in r:
                    cells = frozenset(grid.hex_to_cell(c) for c in r["cells"])
                else:
                    raise InvalidInputError("telecommuting region needs polygon/district/cells")
                regions.append(TelecomRegion(poly, float(r.get("reduction", 1.0)), cells))
            kwargs["regions"] = tuple(regions)
        else:
            kwargs["cells"] = frozenset(grid.hex_to_cell(c) for c in doc.get("cells", []))
            kwargs["detect_prob"] = float(doc.get("detect_prob", DEFAULT_DETECT_PROB))
        return cls(**kwargs)

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "name": self.name,
            "start": date.fromordinal(date(1970, 1, 1).toordinal() + self.start_day).isoformat(),
            "days": self.days,
            "rng_seed": self.rng_seed,
        }
        if self.kind == "lockdown":
            out["polygons"] = [[list(p) for p in poly.ring] for poly in self.polygons]
        elif self.kind == "telecommuting":
            out["regions"] = [
                (
                    {"polygon": [list(p) for p in r.polygon.ring], "reduction": r.reduction}
                    if r.polygon is not None
                    else {"cells": sorted(grid.cell_to_hex(c) for c in r.cells),
                          "reduction": r.reduction}
                )
                for r in self.regions
            ]
        else:
            out["cells"] = sorted(grid.cell_to_hex(c) for c in self.cells)
            out["detect_prob"] = self.detect_prob
        return out


@dataclass
class ScreeningEntry:
    probs: dict[int, float]  # cell -> detection probability
    tick0: int
    tick1: int


@dataclass
class ScreeningPlan:
    entries: list[ScreeningEntry] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries


@dataclass
class RestrictedMobilityPlan:
    trajectory_set: TrajectorySet
    screening: ScreeningPlan
    provenance: list[PolicySpec] = field(default_factory=list)


def _uid_seed(policy_seed: int, uid: str) -> list[int]:
    h = int.from_bytes(hashlib.sha256(uid.encode()).digest()[:8], "big")
    return [policy_seed & 0xFFFFFFFFFFFFFFFF, h]


def _day_ticks(ts: TrajectorySet) -> dict[int, tuple[int, int]]:
    return {dk: (i0, i1) for dk, i0, i1 in ts.day_bounds()}


def _check_range(spec: PolicySpec, day_ticks) -> list[int]:
    days = [d for d in spec.day_range if d in day_ticks]
    if len(days) != spec.days:
        raise InvalidInputError(
            f"policy {spec.name!r} time range is outside the simulation horizon"
        )
    return days


def _region_cells(polygons, res, backend) -> set[int]:
    cells: set[int] = set()
    for poly in polygons:
        got = backend.cells_covering(poly, res)
        if not got:
            log.warning("region polygon resolves to zero cells; skipping")
        cells |= got
    return cells


def apply_telecommuting(
    ts: TrajectorySet, hw_map: dict, spec: PolicySpec, backend=None
) -> TrajectorySet:
    """Replace selected commuters' workdays with constant home-cell days."""
    backend = backend or grid.get_backend()
    day_ticks = _day_ticks(ts)
    days = _check_range(spec, day_ticks)
    rng = np.random.Generator(np.random.Philox(spec.rng_seed))
    min_work_ticks = max(1, 3600 // ts.step)  # "goes to work" = >= 1 h presence

    affected: set[str] = set()
    for region in spec.regions:
        if region.cells:
            cells = set(region.cells)
        else:
            cells = _region_cells([region.polygon], ts.resolution, backend)
        if not cells:
            continue  # warned above; no-op for this region
        candidates = sorted(
            uid for uid, hw in hw_map.items()
            if hw.work_cell in cells and uid in ts.trajectories
        )
        k = int(round(region.reduction * len(candidates)))
        if k and candidates:
            picked = rng.choice(len(candidates), size=k, replace=False)
            affected.update(candidates[i] for i in sorted(picked.tolist()))

    new: dict[str, object] = {}
    for uid in sorted(affected):
        gt = ts.trajectories[uid]
        hw = hw_map[uid]
        cells_arr = None
        for d in days:
            i0, i1 = day_ticks[d]
            if np.count_nonzero(gt.cells[i0:i1] == hw.work_cell) >= min_work_ticks:
                if cells_arr is None:
                    cells_arr = gt.cells.copy()
                cells_arr[i0:i1] = hw.home_cell
        if cells_arr is not None:
            new[uid] = _clone(gt, cells_arr)
    return ts.replace(new) if new else ts


def _clone(gt, cells):
    from .mobility import GridTrajectory

    return GridTrajectory(gt.uid, gt.start_time, gt.step, cells, gt.flagged_gap)


def apply_lockdown(
    ts: TrajectorySet,
    index: HistoryIndex,
    spec: PolicySpec,
    backend=None,
    hw_map: dict | None = None,
) -> TrajectorySet:
    """Freeze insiders; replace visitors' affected days with clean history."""
    backend = backend or grid.get_backend()
    if not spec.polygons:
        raise InvalidInputError("lockdown needs at least one region polygon")
    locked = _region_cells(spec.polygons, ts.resolution, backend)
    if not locked:
        raise InvalidInputError("lockdown regions resolve to zero cells")
    locked_arr = np.fromiter(sorted(locked), dtype=np.int64)
    day_ticks = _day_ticks(ts)
    days = _check_range(spec, day_ticks)
    start_tick = day_ticks[days[0]][0]
    range_lo, range_hi = day_ticks[days[0]][0], day_ticks[days[-1]][1]

    new: dict[str, object] = {}
    for uid in ts.uids():
        gt = ts.trajectories[uid]
        start_cell = int(gt.cells[start_tick])
        if start_cell in locked:
            cells_arr = gt.cells.copy()
            cells_arr[range_lo:range_hi] = start_cell
            new[uid] = _clone(gt, cells_arr)
            continue
        touched = [
            d for d in days
            if np.isin(gt.cells[day_ticks[d][0]:day_ticks[d][1]], locked_arr).any()
        ]
        if not touched:
            continue
        clean = [d for d in index.days_avoiding(uid, locked)]
        rng = np.random.Generator(np.random.Philox(key=_uid_seed(spec.rng_seed, uid)))
        cells_arr = gt.cells.copy()
        for d in touched:
            i0, i1 = day_ticks[d]
            if clean:
                src = clean[int(rng.integers(0, len(clean)))]
                src_cells = index.day_cells(uid, src)
                m = min(i1 - i0, len(src_cells))
                cells_arr[i0:i0 + m] = src_cells[:m]
                if m < i1 - i0:  # partial edge day: hold the clean day's last cell
                    cells_arr[i0 + m:i1] = src_cells[-1]
            else:
                fallback = (
                    hw_map[uid].home_cell
                    if hw_map and uid in hw_map
                    else int(gt.cells[i0])
                )
                cells_arr[i0:i1] = fallback
        new[uid] = _clone(gt, cells_arr)
    return ts.replace(new) if new else ts


def compile_screening(spec: PolicySpec, ts: TrajectorySet) -> ScreeningEntry:
    if not spec.cells:
        raise InvalidInputError("screening needs a non-empty cell set")
    day_ticks = _day_ticks(ts)
    days = _check_range(spec, day_ticks)
    tick0 = day_ticks[days[0]][0]
    tick1 = day_ticks[days[-1]][1]
    return ScreeningEntry({int(c): spec.detect_prob for c in spec.cells}, tick0, tick1)


def compose_plan(
    ts: TrajectorySet,
    policies: list[PolicySpec],
    hw_map: dict | None = None,
    index: HistoryIndex | None = None,
    backend=None,
) -> RestrictedMobilityPlan:
    """Apply policies in fixed order: telecommuting, then lockdown.

    Screening policies are merged into one plan; duplicate names are
    rejected.  Lockdown dominates because it is applied last.
    """
    backend = backend or grid.get_backend()
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise InvalidInputError("duplicate policy names")
    current = ts
    for spec in [p for p in policies if p.kind == "telecommuting"]:
        if hw_map is None:
            raise InvalidInputError("telecommuting requires home/work extraction")
        current = apply_telecommuting(current, hw_map, spec, backend)
    lockdowns = [p for p in policies if p.kind == "lockdown"]
    if lockdowns and index is None:
        index = HistoryIndex(ts)
    for spec in lockdowns:
        current = apply_lockdown(current, index, spec, backend, hw_map)
    screening = ScreeningPlan()
    merged: dict[tuple[int, int], dict[int, float]] = {}
    for spec in [p for p in policies if p.kind == "screening"]:
        entry = compile_screening(spec, current)
        key = (entry.tick0, entry.tick1)
        probs = merged.setdefault(key, {})
        for cell, prob in entry.probs.items():
            probs[cell] = max(probs.get(cell, 0.0), prob)
    for (t0, t1), probs in sorted(merged.items()):
        screening.entries.append(ScreeningEntry(probs, t0, t1))
    return RestrictedMobilityPlan(current, screening, list(policies))
