"""POI ingestion and the dynamic transmission-rate field.

Each cell's rate is beta_base plus a POI-driven increment: the sum of
risk values of the POIs open in the cell at that local hour, scaled by a
factor k.  beta_base is derived from a user-supplied citywide beta so
that the occupancy-weighted mean of the per-cell rates reproduces it.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import InvalidInputError, ParseError
from .mobility import TrajectorySet

log = logging.getLogger(__name__)

SLOT_S = 3600
SLOTS_PER_WEEK = 168

DEFAULT_RISK_VALUES = {
    "entertainment": 8.0,
    "restaurant": 2.0,
    "supermarket": 1.0,
}
DEFAULT_K = 0.0003

# Default daily open hours per category (local hours, wraparound allowed).
DEFAULT_OPEN_HOURS = {
    "entertainment": (18.0, 2.0),
    "restaurant": (11.0, 23.0),
    "supermarket": (10.0, 21.0),
}
FALLBACK_OPEN_HOURS = (9.0, 18.0)


@dataclass(frozen=True)
class RiskConfig:
    risk_values: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RISK_VALUES))
    k: float = DEFAULT_K

    def __post_init__(self):
        if self.k < 0 or any(v < 0 for v in self.risk_values.values()):
            raise InvalidInputError("risk values and k must be non-negative")

    def risk_of(self, category: str) -> float:
        return self.risk_values.get(category, 0.0)

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        values = doc.get("risk_values")
        return cls(
            risk_values=dict(DEFAULT_RISK_VALUES) if values is None
            else {k: float(v) for k, v in values.items()},
            k=float(doc.get("k", DEFAULT_K)),
        )


@dataclass(frozen=True)
class EpidemicParams:
    beta_global: float = 0.302  # adequate exposures per day
    sigma: float = 0.2  # incubation rate per day
    gamma: float = 0.1  # recovery/death rate per day
    i0: int = 10
    step: int = 300
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.beta_global, self.sigma, self.gamma) < 0:
            raise InvalidInputError("rates must be non-negative")
        if self.i0 < 1:
            raise InvalidInputError("i0 must be >= 1")


def _open_at(open_hours: tuple[float, float], local_hour: float) -> bool:
    start, end = open_hours
    if start == end:
        return False
    if start < end:
        return start <= local_hour < end
    return local_hour >= start or local_hour < end  # wraps past midnight


@dataclass
class PoiTable:
    """POIs grouped by cell: (category, open_hours) entries per cell."""

    by_cell: dict[int, list[tuple[str, tuple[float, float]]]]
    skipped: int = 0
    points: list[tuple[float, float, str]] = field(default_factory=list)

    def category_counts(self) -> dict[tuple[int, str], int]:
        out: dict[tuple[int, str], int] = {}
        for cell, pois in self.by_cell.items():
            for cat, _ in pois:
                out[(cell, cat)] = out.get((cell, cat), 0) + 1
        return out

    def records(self):
        for cell in sorted(self.by_cell):
            for cat, hours in self.by_cell[cell]:
                yield cell, cat, hours


def ingest_pois(
    source,
    res: int = grid.DEFAULT_RESOLUTION,
    backend=None,
    lenient: bool = False,
    known_categories: set[str] | None = None,
) -> PoiTable:
    """Parse a POI CSV (lat,lon,category[,open,close]) into per-cell groups.

    Categories outside the risk registry are kept (risk 0, still useful for
    UI layers).  If known_categories is given, rows with categories outside
    it are row errors (lenient mode: counted and skipped).
    """
    backend = backend or grid.get_backend()
    if isinstance(source, (str, bytes)) and "\n" not in str(source):
        fobj = open(source, "r", encoding="utf-8", newline="")
        close = True
    elif isinstance(source, str):
        fobj = io.StringIO(source)
        close = False
    else:
        fobj = source
        close = False
    by_cell: dict[int, list[tuple[str, tuple[float, float]]]] = {}
    points: list[tuple[float, float, str]] = []
    skipped = 0
    try:
        reader = csv.reader(fobj)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:3]] != ["lat", "lon", "category"]:
            raise ParseError("expected header lat,lon,category[,open,close]", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                lat, lon = float(row[0]), float(row[1])
                cat = row[2].strip()
                if not cat:
                    raise ValueError("empty category")
                if known_categories is not None and cat not in known_categories:
                    raise ValueError(f"unknown category {cat!r}")
                if len(row) >= 5 and row[3].strip() and row[4].strip():
                    hours = (float(row[3]), float(row[4]))
                    if not (0 <= hours[0] < 24 and 0 <= hours[1] <= 24):
                        raise ValueError("open hours out of range")
                else:
                    hours = DEFAULT_OPEN_HOURS.get(cat, FALLBACK_OPEN_HOURS)
                cell = int(backend.cell_of(lat, lon, res))
            except (ValueError, InvalidInputError) as exc:
                if lenient:
                    skipped += 1
                    continue
                raise ParseError(str(exc), line=lineno) from exc
            by_cell.setdefault(cell, []).append((cat, hours))
            points.append((lat, lon, cat))
    finally:
        if close:
            fobj.close()
    return PoiTable(by_cell, skipped, points)


def cumulative_risk(table: PoiTable, risk: RiskConfig, cell: int, local_hour: float) -> float:
    """Risk-weighted count of POIs open in the cell at the local hour."""
    total = 0.0
    for cat, hours in table.by_cell.get(cell, ()):
        if _open_at(hours, local_hour):
            total += risk.risk_of(cat)
    return total


@dataclass
class RiskField:
    """Per-cell, per-hour-of-week rate increments plus the derived base rate."""

    slot_s: int
    delta: dict[int, np.ndarray]  # cell -> float[168] increments (per day)
    beta_base: float
    beta_global: float
    tz_offset: int

    def beta_at(self, cell: int, t_utc: int) -> float:
        slot = ((t_utc + self.tz_offset) // self.slot_s) % SLOTS_PER_WEEK
        d = self.delta.get(cell)
        inc = float(d[slot]) if d is not None else 0.0
        return max(0.0, self.beta_base + inc)

    def beta_matrix(self, cells: list[int]) -> np.ndarray:
        """(len(cells), 168) matrix of clamped rates, for the engine."""
        out = np.full((len(cells), SLOTS_PER_WEEK), self.beta_base, dtype=np.float64)
        for i, c in enumerate(cells):
            d = self.delta.get(int(c))
            if d is not None:
                out[i] += d
        np.clip(out, 0.0, None, out=out)
        return out


def occupancy_weights(ts: TrajectorySet) -> dict[tuple[int, int], float]:
    """Fraction of trajectory points in each (cell, hour-of-week) pair."""
    ticks = np.arange(ts.n_ticks, dtype=np.int64)
    slots = (((ts.horizon.start + ticks * ts.step + ts.tz_offset) // SLOT_S) % SLOTS_PER_WEEK)
    acc: dict[tuple[int, int], int] = {}
    for gt in ts.trajectories.values():
        vocab, inv = np.unique(gt.cells, return_inverse=True)
        keys, counts = np.unique(inv * SLOTS_PER_WEEK + slots, return_counts=True)
        for k, c in zip(keys.tolist(), counts.tolist()):
            key = (int(vocab[k // SLOTS_PER_WEEK]), k % SLOTS_PER_WEEK)
            acc[key] = acc.get(key, 0) + c
    total = sum(acc.values())
    return {k: v / total for k, v in acc.items()}


def _delta_table(table: PoiTable, risk: RiskConfig) -> dict[int, np.ndarray]:
    delta: dict[int, np.ndarray] = {}
    for cell, pois in table.by_cell.items():
        vec = np.zeros(24)
        for cat, hours in pois:
            r = risk.risk_of(cat)
            if r == 0.0:
                continue
            for h in range(24):
                if _open_at(hours, float(h)):
                    vec[h] += r
        if vec.any():
            delta[cell] = np.tile(vec * risk.k, 7)  # same schedule every day
    return delta


def derive_beta_base(
    beta_global: float,
    table: PoiTable,
    risk: RiskConfig,
    weighting: dict[tuple[int, int], float] | None,
) -> float:
    """beta_base = beta_global - weighted mean of the POI increments.

    With weighting=None an unweighted mean over the table's (cell, slot)
    entries is used (config switch; occupancy weighting is the default
    elsewhere).  A negative result is allowed but logged; evaluation clamps
    per-cell rates at zero.
    """
    delta = _delta_table(table, risk)
    if weighting is None:
        vals = [v for vec in delta.values() for v in vec] or [0.0]
        mean_delta = float(np.mean(vals)) if delta else 0.0
    else:
        total = sum(weighting.values())
        if total <= 0 or abs(total - 1.0) > 1e-6:
            raise InvalidInputError("occupancy weights must sum to 1")
        mean_delta = 0.0
        for (cell, slot), w in weighting.items():
            vec = delta.get(cell)
            if vec is not None:
                mean_delta += w * float(vec[slot])
    beta_base = beta_global - mean_delta
    if beta_base < 0:
        log.warning("beta_base is negative (%.6f); rates will clamp at 0", beta_base)
        warnings.warn("derived beta_base is negative; per-cell rates clamp at 0")
    return beta_base


def build_risk_field(
    table: PoiTable,
    risk: RiskConfig,
    beta_global: float,
    weighting: dict[tuple[int, int], float] | None,
    tz_offset: int,
) -> RiskField:
    beta_base = derive_beta_base(beta_global, table, risk, weighting)
    return RiskField(SLOT_S, _delta_table(table, risk), beta_base, beta_global, tz_offset)


def empty_risk_field(beta_global: float, tz_offset: int) -> RiskField:
    return RiskField(SLOT_S, {}, beta_global, beta_global, tz_offset)
