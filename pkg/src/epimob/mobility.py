"""Trajectory ingestion, interpolation, synthetic-city generation, history index.

Raw trajectories are irregular (timestamp, lat, lon) sequences per user.
They are resampled at a constant cadence (default 300 s), mapped to grid
cells, and bundled into a TrajectorySet, the engine's mobility input.
Interpolation is linear in lat/lon; before the first observation the first
position is held, after the last the last one is held.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import InvalidInputError, ParseError

DEFAULT_STEP_S = 300
DEFAULT_TZ_OFFSET_S = 9 * 3600  # dataset-local time zone, default UTC+9
MAX_GAP_FLAG_S = 6 * 3600


@dataclass(frozen=True)
class TimeRange:
    """Half-open [start, end) range in UTC seconds."""

    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise InvalidInputError("time range must have end > start")

    @property
    def seconds(self) -> int:
        return self.end - self.start

    def n_ticks(self, step: int) -> int:
        return self.seconds // step


@dataclass
class RawTrajectory:
    """Per-user observed points; timestamps strictly increasing."""

    uid: str
    ts: np.ndarray  # int64 UTC seconds
    lat: np.ndarray
    lon: np.ndarray
    flagged_gap: bool = False  # has an observation gap longer than 6 h

    def __len__(self):
        return len(self.ts)

    @classmethod
    def from_points(cls, uid, points):
        pts = sorted(points)
        ts = np.array([p[0] for p in pts], dtype=np.int64)
        lat = np.array([p[1] for p in pts], dtype=np.float64)
        lon = np.array([p[2] for p in pts], dtype=np.float64)
        if len(ts) >= 2 and np.any(np.diff(ts) <= 0):
            keep = np.concatenate([[True], np.diff(ts) > 0])
            ts, lat, lon = ts[keep], lat[keep], lon[keep]
        gap = bool(len(ts) >= 2 and np.max(np.diff(ts)) > MAX_GAP_FLAG_S)
        return cls(uid, ts, lat, lon, flagged_gap=gap)


@dataclass
class GridTrajectory:
    uid: str
    start_time: int
    step: int
    cells: np.ndarray  # int64 CellId per tick
    flagged_gap: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "uid": self.uid,
                "start": int(self.start_time),
                "step": int(self.step),
                "cells": [grid.cell_to_hex(int(c)) for c in self.cells],
            }
        )


@dataclass
class TrajectorySet:
    """All users' grid trajectories over one shared horizon."""

    trajectories: dict[str, GridTrajectory]
    horizon: TimeRange
    step: int = DEFAULT_STEP_S
    tz_offset: int = DEFAULT_TZ_OFFSET_S
    resolution: int = grid.DEFAULT_RESOLUTION
    dataset_id: str = field(default="", compare=False)

    def __post_init__(self):
        n = self.horizon.n_ticks(self.step)
        for gt in self.trajectories.values():
            if len(gt.cells) != n or gt.start_time != self.horizon.start or gt.step != self.step:
                raise InvalidInputError(f"trajectory {gt.uid} does not match the horizon")
        if not self.dataset_id:
            self.dataset_id = self._content_hash()

    def _content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.horizon.start},{self.horizon.end},{self.step}".encode())
        for uid in sorted(self.trajectories):
            gt = self.trajectories[uid]
            h.update(uid.encode())
            h.update(np.ascontiguousarray(gt.cells).tobytes())
        return h.hexdigest()

    @property
    def n_users(self) -> int:
        return len(self.trajectories)

    @property
    def n_ticks(self) -> int:
        return self.horizon.n_ticks(self.step)

    def uids(self) -> list[str]:
        return sorted(self.trajectories)

    def replace(self, new_trajs: dict[str, GridTrajectory]) -> "TrajectorySet":
        merged = dict(self.trajectories)
        merged.update(new_trajs)
        return TrajectorySet(
            merged, self.horizon, self.step, self.tz_offset, self.resolution
        )

    def export_jsonl(self, fobj) -> None:
        for uid in self.uids():
            fobj.write(self.trajectories[uid].to_json() + "\n")

    # -- local-day helpers -------------------------------------------

    def day_bounds(self) -> list[tuple[int, int, int]]:
        """List of (day_key, first_tick, last_tick_excl) in local time.

        day_key is the local calendar-day ordinal (floor(local_s / 86400)).
        """
        ticks = np.arange(self.n_ticks, dtype=np.int64)
        local = self.horizon.start + ticks * self.step + self.tz_offset
        days = local // 86400
        out = []
        start = 0
        for i in range(1, len(days) + 1):
            if i == len(days) or days[i] != days[start]:
                out.append((int(days[start]), start, i))
                start = i
        return out


def parse_iso8601_utc(s: str) -> int:
    from datetime import datetime, timezone

    s = s.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def ingest_trajectories(source, horizon: TimeRange, lenient: bool = False):
    """Parse a trajectory CSV (uid,timestamp,lat,lon) into RawTrajectory objects.

    Returns (list of RawTrajectory, skipped_row_count).  In fail-fast mode
    (default) a malformed row raises ParseError with its line number; in
    lenient mode malformed rows are counted and skipped.
    """
    if isinstance(source, (str, bytes)) and "\n" not in str(source):
        fobj = open(source, "r", encoding="utf-8", newline="")
        close = True
    elif isinstance(source, str):
        fobj = io.StringIO(source)
        close = False
    else:
        fobj = source
        close = False
    skipped = 0
    per_user: dict[str, dict[int, tuple[float, float]]] = {}
    try:
        reader = csv.reader(fobj)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:4]] != [
            "uid",
            "timestamp",
            "lat",
            "lon",
        ]:
            raise ParseError("expected header uid,timestamp,lat,lon", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) < 4:
                    raise ValueError("too few columns")
                uid = row[0].strip()
                t = parse_iso8601_utc(row[1])
                lat, lon = float(row[2]), float(row[3])
                if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                    raise ValueError(f"coordinate out of range ({lat}, {lon})")
            except (ValueError, OverflowError) as exc:
                if lenient:
                    skipped += 1
                    continue
                raise ParseError(str(exc), line=lineno) from exc
            if not (horizon.start <= t < horizon.end):
                continue
            # duplicate (uid, timestamp): keep the first occurrence
            per_user.setdefault(uid, {}).setdefault(t, (lat, lon))
    finally:
        if close:
            fobj.close()
    out = []
    for uid, pts in per_user.items():
        items = sorted(pts.items())
        out.append(
            RawTrajectory.from_points(uid, [(t, lat, lon) for t, (lat, lon) in items])
        )
    out.sort(key=lambda r: r.uid)
    return out, skipped


def interpolate_and_map(
    raw: RawTrajectory,
    step: int,
    res: int,
    horizon: TimeRange,
    backend=None,
) -> GridTrajectory:
    """Resample a raw trajectory at a constant cadence and map it to cells."""
    backend = backend or grid.get_backend()
    mask = (raw.ts >= horizon.start) & (raw.ts < horizon.end)
    if not mask.any():
        raise InvalidInputError(f"trajectory {raw.uid} has no points inside the horizon")
    ts, lat, lon = raw.ts[mask], raw.lat[mask], raw.lon[mask]
    n = horizon.n_ticks(step)
    tick_ts = horizon.start + np.arange(n, dtype=np.int64) * step
    # np.interp holds the boundary values outside [ts[0], ts[-1]]
    ilat = np.interp(tick_ts, ts, lat)
    ilon = np.interp(tick_ts, ts, lon)
    cells = backend.cells_of(ilat, ilon, res)
    return GridTrajectory(raw.uid, horizon.start, step, cells, flagged_gap=raw.flagged_gap)


def build_trajectory_set(
    raws,
    horizon: TimeRange,
    step: int = DEFAULT_STEP_S,
    res: int = grid.DEFAULT_RESOLUTION,
    tz_offset: int = DEFAULT_TZ_OFFSET_S,
    backend=None,
    max_gap_s: int | None = None,
) -> TrajectorySet:
    backend = backend or grid.get_backend()
    trajs = {}
    for raw in raws:
        if max_gap_s is not None and len(raw.ts) >= 2 and np.max(np.diff(raw.ts)) > max_gap_s:
            continue
        trajs[raw.uid] = interpolate_and_map(raw, step, res, horizon, backend)
    if not trajs:
        raise InvalidInputError("no usable trajectories")
    return TrajectorySet(trajs, horizon, step, tz_offset, res)


# ---------------------------------------------------------------------------
# Synthetic city
# ---------------------------------------------------------------------------

@dataclass
class SyntheticCitySpec:
    """Parameters of the synthetic-city trajectory generator."""

    n_users: int
    n_home_zones: int = 6
    n_work_zones: int = 3
    commute_share: float = 0.7
    weekend_leisure: bool = True
    rng_seed: int = 0
    center: tuple[float, float] = grid.DEFAULT_ORIGIN
    zone_spread_m: float = 6000.0  # zone centers scatter around `center`
    home_jitter_m: float = 250.0
    home_zone_centers: list[tuple[float, float]] | None = None
    work_zone_centers: list[tuple[float, float]] | None = None
    raw_sample_s: int = 600

    def __post_init__(self):
        if self.n_users < 1:
            raise InvalidInputError("n_users must be >= 1")
        if not (0.0 <= self.commute_share <= 1.0):
            raise InvalidInputError("commute_share must be in [0, 1]")

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in doc.items() if k in known}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown synthetic spec fields: {sorted(unknown)}")
        if "center" in kwargs:
            kwargs["center"] = tuple(kwargs["center"])
        for key in ("home_zone_centers", "work_zone_centers"):
            if kwargs.get(key) is not None:
                kwargs[key] = [tuple(p) for p in kwargs[key]]
        return cls(**kwargs)


def _offset_latlon(lat0, lon0, dx_m, dy_m):
    dlat = np.degrees(np.asarray(dy_m) / grid.EARTH_RADIUS_M)
    dlon = np.degrees(np.asarray(dx_m) / (grid.EARTH_RADIUS_M * np.cos(np.radians(lat0))))
    return lat0 + dlat, lon0 + dlon


def _is_weekend(day_key: int) -> bool:
    # day_key 0 = 1970-01-01, a Thursday; weekday = (key + 3) % 7, Mon=0
    return (day_key + 3) % 7 >= 5


def synthesize_raw(spec: SyntheticCitySpec, horizon: TimeRange,
                   tz_offset: int = DEFAULT_TZ_OFFSET_S) -> list[RawTrajectory]:
    """Generate raw trajectories for a synthetic commuter city.

    Commuters go home -> work on weekdays (arriving 09:00-11:00 local) and
    back (leaving 17:00-19:00), stay home on weekends apart from optional
    leisure trips; non-commuters stay near home with a short daily walk.
    Deterministic given spec.rng_seed.
    """
    rng = np.random.Generator(np.random.Philox(spec.rng_seed))
    lat_c, lon_c = spec.center

    def zone_ring(n, radius):
        ang = 2 * np.pi * np.arange(n) / max(n, 1) + 0.5
        return [
            _offset_latlon(lat_c, lon_c, radius * np.cos(a), radius * np.sin(a))
            for a in ang
        ]

    homes_z = spec.home_zone_centers or zone_ring(spec.n_home_zones, spec.zone_spread_m)
    works_z = spec.work_zone_centers or zone_ring(spec.n_work_zones, spec.zone_spread_m * 0.3)

    n = spec.n_users
    n_commuters = int(round(spec.commute_share * n))
    order = rng.permutation(n)
    commuter = np.zeros(n, dtype=bool)
    commuter[order[:n_commuters]] = True

    # per-user anchors
    hz = rng.integers(0, len(homes_z), size=n)
    wz = rng.integers(0, len(works_z), size=n)
    jit = rng.normal(0.0, spec.home_jitter_m, size=(n, 4))
    day0 = (horizon.start + tz_offset) // 86400
    n_days = (horizon.end + tz_offset - 1) // 86400 - day0 + 1

    arrive_w = rng.uniform(9 * 3600 + 300, 11 * 3600 - 300, size=n)
    travel_s = rng.uniform(1500, 3000, size=n)
    leave_w = rng.uniform(17 * 3600, 19 * 3600 - 3000, size=n)
    leisure_draw = rng.random(size=(n, int(n_days)))
    leisure_zone = rng.integers(0, len(works_z), size=(n, int(n_days)))
    walk_ang = rng.uniform(0, 2 * np.pi, size=n)

    out = []
    sample = np.arange(horizon.start, horizon.end, spec.raw_sample_s, dtype=np.int64)
    if sample[-1] != horizon.end - 1:
        sample = np.append(sample, horizon.end - 1)
    for u in range(n):
        h_lat, h_lon = _offset_latlon(*homes_z[hz[u]], jit[u, 0], jit[u, 1])
        w_lat, w_lon = _offset_latlon(*works_z[wz[u]], jit[u, 2], jit[u, 3])
        anchors_t, anchors_lat, anchors_lon = [], [], []

        def add(t_utc, lat, lon):
            anchors_t.append(t_utc)
            anchors_lat.append(lat)
            anchors_lon.append(lon)

        for d in range(int(n_days)):
            day_key = day0 + d
            midnight = day_key * 86400 - tz_offset  # UTC second of local midnight
            add(midnight, h_lat, h_lon)
            if commuter[u] and not _is_weekend(day_key):
                add(midnight + arrive_w[u] - travel_s[u], h_lat, h_lon)
                add(midnight + arrive_w[u], w_lat, w_lon)
                add(midnight + leave_w[u], w_lat, w_lon)
                add(midnight + leave_w[u] + travel_s[u], h_lat, h_lon)
            elif spec.weekend_leisure and _is_weekend(day_key) and leisure_draw[u, d] < 0.5:
                z_lat, z_lon = works_z[leisure_zone[u, d]]
                add(midnight + 14 * 3600 - 1800, h_lat, h_lon)
                add(midnight + 14 * 3600, z_lat, z_lon)
                add(midnight + 16 * 3600, z_lat, z_lon)
                add(midnight + 16 * 3600 + 1800, h_lat, h_lon)
            elif not commuter[u] and not _is_weekend(day_key):
                # short daily walk to a nearby spot
                p_lat, p_lon = _offset_latlon(
                    h_lat, h_lon, 800 * np.cos(walk_ang[u]), 800 * np.sin(walk_ang[u])
                )
                add(midnight + 15 * 3600 - 900, h_lat, h_lon)
                add(midnight + 15 * 3600, p_lat, p_lon)
                add(midnight + 16 * 3600, p_lat, p_lon)
                add(midnight + 16 * 3600 + 900, h_lat, h_lon)
            add(midnight + 86400 - 1, h_lat, h_lon)
        at = np.array(anchors_t, dtype=np.float64)
        alat = np.array(anchors_lat)
        alon = np.array(anchors_lon)
        lat_s = np.interp(sample, at, alat)
        lon_s = np.interp(sample, at, alon)
        out.append(RawTrajectory(f"u{u:05d}", sample.copy(), lat_s, lon_s))
    return out


def generate_synthetic_city(
    spec: SyntheticCitySpec,
    horizon: TimeRange,
    step: int = DEFAULT_STEP_S,
    res: int = grid.DEFAULT_RESOLUTION,
    tz_offset: int = DEFAULT_TZ_OFFSET_S,
    backend=None,
) -> TrajectorySet:
    raws = synthesize_raw(spec, horizon, tz_offset)
    return build_trajectory_set(raws, horizon, step, res, tz_offset, backend)


# ---------------------------------------------------------------------------
# History index
# ---------------------------------------------------------------------------

class HistoryIndex:
    """Per (uid, local day): set of visited cells + that day's tick slice."""

    def __init__(self, ts: TrajectorySet):
        if not ts.trajectories:
            raise InvalidInputError("empty trajectory set")
        self.source = ts  # historical database: sequences come from here
        self.step = ts.step
        self.days: dict[str, list[tuple[int, int, int, frozenset]]] = {}
        bounds = ts.day_bounds()
        for uid, gt in ts.trajectories.items():
            entries = []
            for day_key, i0, i1 in bounds:
                entries.append(
                    (day_key, i0, i1, frozenset(int(c) for c in gt.cells[i0:i1]))
                )
            self.days[uid] = entries

    def visited(self, uid: str, day_key: int) -> frozenset:
        for dk, _, _, cells in self.days[uid]:
            if dk == day_key:
                return cells
        raise InvalidInputError(f"day {day_key} not covered for {uid}")

    def days_avoiding(self, uid: str, cells: set) -> list[int]:
        """Local day keys on which the user never touches `cells`."""
        cells = frozenset(cells)
        return [dk for dk, _, _, vis in self.days[uid] if not (vis & cells)]

    def day_cells(self, uid: str, day_key: int) -> np.ndarray:
        i0, i1 = self.slice_of(uid, day_key)
        return self.source.trajectories[uid].cells[i0:i1]

    def slice_of(self, uid: str, day_key: int) -> tuple[int, int]:
        for dk, i0, i1, _ in self.days[uid]:
            if dk == day_key:
                return i0, i1
        raise InvalidInputError(f"day {day_key} not covered for {uid}")


def build_history_index(ts: TrajectorySet) -> HistoryIndex:
    return HistoryIndex(ts)
