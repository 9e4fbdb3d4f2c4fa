"""Stay-point extraction and home/workplace inference.

A stay point is a maximal interval during which every observation lies
within a radius (default 500 m) of the interval's first point and whose
span is at least a minimum duration (default 1 h).  Home and workplace
cells are the argmax-stay cells in the after-hours (00:00-06:00) and
working-hours (11:00-17:00) windows; candidates with a stay rate below a
threshold (default 75%) are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import grid
from .mobility import DEFAULT_TZ_OFFSET_S, RawTrajectory

MIN_STAY_DURATION_S = 3600
STAY_RADIUS_M = 500.0
STAY_RATE_THRESHOLD = 0.75

WORK_WINDOW = (11 * 3600, 17 * 3600)  # local working hours
HOME_WINDOW = (0, 6 * 3600)  # local after hours
WINDOW_LEN_S = 6 * 3600


@dataclass(frozen=True)
class StayPoint:
    uid: str
    cell: int
    arrive: int
    depart: int
    anchor: tuple[float, float]

    @property
    def duration(self) -> int:
        return self.depart - self.arrive


@dataclass(frozen=True)
class HomeWork:
    uid: str
    home_cell: int
    work_cell: int
    home_stay_rate: float
    work_stay_rate: float


@dataclass(frozen=True)
class Rejection:
    uid: str
    reason: str


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * grid.EARTH_RADIUS_M * math.asin(math.sqrt(a))


def extract_stay_points(
    raw: RawTrajectory,
    min_duration: int = MIN_STAY_DURATION_S,
    radius: float = STAY_RADIUS_M,
    res: int = grid.DEFAULT_RESOLUTION,
    backend=None,
) -> list[StayPoint]:
    """Greedy left-to-right anchor scan over the raw points."""
    backend = backend or grid.get_backend()
    ts, lat, lon = raw.ts, raw.lat, raw.lon
    n = len(ts)
    out: list[StayPoint] = []
    i = 0
    while i < n - 1:
        j = i + 1
        while j < n and haversine_m(lat[i], lon[i], lat[j], lon[j]) <= radius:
            j += 1
        # points i..j-1 are all within radius of the anchor at i; the stay
        # itself is represented by their centroid, which sits on the dwell
        # location rather than on the approach path
        if ts[j - 1] - ts[i] >= min_duration:
            anchor = (float(np.mean(lat[i:j])), float(np.mean(lon[i:j])))
            # modal cell of the member points, not the centroid's cell: for
            # a dwell spot near a boundary the two can disagree, and the
            # mode is what the gridded trajectory will actually occupy
            cells = backend.cells_of(lat[i:j], lon[i:j], res)
            vals, counts = np.unique(cells, return_counts=True)
            cell = int(vals[counts == counts.max()].min())
            out.append(
                StayPoint(raw.uid, cell, int(ts[i]), int(ts[j - 1]), anchor)
            )
            i = j
        else:
            i += 1
    return out


def _window_overlap_per_day(arrive, depart, window, tz_offset):
    """Seconds of [arrive, depart] falling in the local daily window."""
    lo, hi = window
    a = arrive + tz_offset
    d = depart + tz_offset
    total = 0
    day = a // 86400
    while day * 86400 <= d:
        w0 = day * 86400 + lo
        w1 = day * 86400 + hi
        total += max(0, min(d, w1) - max(a, w0))
        day += 1
    return total


def _is_weekday(day_key: int) -> bool:
    return (day_key + 3) % 7 < 5  # day_key 0 = Thursday

def _day_keys(start_utc, end_utc, tz_offset):
    first = (start_utc + tz_offset) // 86400
    last = (end_utc + tz_offset) // 86400
    return range(int(first), int(last) + 1)


def extract_home_work(
    raw: RawTrajectory,
    threshold: float = STAY_RATE_THRESHOLD,
    tz_offset: int = DEFAULT_TZ_OFFSET_S,
    res: int = grid.DEFAULT_RESOLUTION,
    backend=None,
    stay_points: list[StayPoint] | None = None,
    work_weekdays_only: bool = True,
) -> HomeWork | Rejection:
    """Infer home and work cells from stay durations inside the hour windows.

    Stay intervals are clipped to the windows before accumulating.  The stay
    rate divides the argmax cell's accumulated time by the total eligible
    window time over the horizon; by default the work window is counted on
    weekdays only (commuters are home on weekends, which would otherwise cap
    the work rate at 5/7).
    """
    backend = backend or grid.get_backend()
    if stay_points is None:
        stay_points = extract_stay_points(raw, res=res, backend=backend)
    if not stay_points:
        return Rejection(raw.uid, "no_stay_points")
    # Group stays whose anchors fall within one stay radius of each other,
    # then give each group a single cell from its duration-weighted centroid.
    # Anchors carry positioning noise, so a place sitting near a cell border
    # would otherwise scatter its time over two cells and never reach the
    # acceptance threshold.
    cell_of_stay = _cluster_cells(stay_points, res, backend)
    work_acc: dict[int, int] = {}
    home_acc: dict[int, int] = {}
    for sp, cell in zip(stay_points, cell_of_stay):
        if work_weekdays_only:
            w = _weekday_window_overlap(sp.arrive, sp.depart, WORK_WINDOW, tz_offset)
        else:
            w = _window_overlap_per_day(sp.arrive, sp.depart, WORK_WINDOW, tz_offset)
        h = _window_overlap_per_day(sp.arrive, sp.depart, HOME_WINDOW, tz_offset)
        if w:
            work_acc[cell] = work_acc.get(cell, 0) + w
        if h:
            home_acc[cell] = home_acc.get(cell, 0) + h
    days = list(_day_keys(int(raw.ts[0]), int(raw.ts[-1]), tz_offset))
    n_days = len(days)
    n_workdays = sum(1 for d in days if _is_weekday(d)) if work_weekdays_only else n_days
    if not work_acc or n_workdays == 0:
        return Rejection(raw.uid, "no_work_window_stays")
    if not home_acc:
        return Rejection(raw.uid, "no_home_window_stays")
    # argmax with ties broken by smallest cell id
    work_cell, work_s = min(work_acc.items(), key=lambda kv: (-kv[1], kv[0]))
    home_cell, home_s = min(home_acc.items(), key=lambda kv: (-kv[1], kv[0]))
    work_rate = work_s / (n_workdays * WINDOW_LEN_S)
    home_rate = home_s / (n_days * WINDOW_LEN_S)
    if work_rate < threshold:
        return Rejection(raw.uid, "work_stay_rate_below_threshold")
    if home_rate < threshold:
        return Rejection(raw.uid, "home_stay_rate_below_threshold")
    return HomeWork(raw.uid, home_cell, work_cell, home_rate, work_rate)


def _cluster_cells(stay_points, res, backend) -> list[int]:
    """Cell per stay, shared across stays anchored at the same place.

    Greedy pass in time order: a stay joins the first cluster whose
    duration-weighted centroid lies within the stay radius of its anchor.
    The cluster's cell is the duration-weighted mode of its members' own
    anchor cells (ties to the smallest id), which tracks where the user's
    points actually concentrate.
    """
    cents: list[tuple[float, float, float]] = []  # lat, lon, weight
    votes: list[dict[int, float]] = []  # per-cluster cell -> duration
    assign: list[int] = []
    for sp in stay_points:
        lat, lon = sp.anchor
        w = max(1.0, float(sp.duration))
        for k, (clat, clon, cw) in enumerate(cents):
            if haversine_m(lat, lon, clat, clon) <= STAY_RADIUS_M:
                tot = cw + w
                cents[k] = ((clat * cw + lat * w) / tot, (clon * cw + lon * w) / tot, tot)
                votes[k][sp.cell] = votes[k].get(sp.cell, 0.0) + w
                assign.append(k)
                break
        else:
            cents.append((lat, lon, w))
            votes.append({sp.cell: w})
            assign.append(len(cents) - 1)
    cells = [min(v.items(), key=lambda kv: (-kv[1], kv[0]))[0] for v in votes]
    return [cells[k] for k in assign]


def _weekday_window_overlap(arrive, depart, window, tz_offset):
    lo, hi = window
    a = arrive + tz_offset
    d = depart + tz_offset
    total = 0
    day = a // 86400
    while day * 86400 <= d:
        if _is_weekday(int(day)):
            w0 = day * 86400 + lo
            w1 = day * 86400 + hi
            total += max(0, min(d, w1) - max(a, w0))
        day += 1
    return total


def workplace_heatmap(
    hws, res: int = grid.DEFAULT_RESOLUTION, backend=None
) -> dict[int, int]:
    """Per-cell worker counts at the requested resolution."""
    backend = backend or grid.get_backend()
    counts: dict[int, int] = {}
    for hw in hws:
        cell = hw.work_cell
        if grid.cell_level(cell) > res:
            cell = backend.parent_cell(cell, res)
        counts[cell] = counts.get(cell, 0) + 1
    return counts


def export_homework_csv(hws, fobj) -> None:
    fobj.write("uid,home_cell,work_cell,home_rate,work_rate\n")
    for hw in sorted(hws, key=lambda h: h.uid):
        fobj.write(
            f"{hw.uid},{grid.cell_to_hex(hw.home_cell)},{grid.cell_to_hex(hw.work_cell)},"
            f"{hw.home_stay_rate:.6f},{hw.work_stay_rate:.6f}\n"
        )
