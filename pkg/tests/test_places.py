import io

import numpy as np
import pytest

from epimob import grid
from epimob.mobility import RawTrajectory, SyntheticCitySpec, synthesize_raw
from epimob.places import (
    HomeWork,
    Rejection,
    export_homework_csv,
    extract_home_work,
    extract_stay_points,
    haversine_m,
    workplace_heatmap,
)

from conftest import DAY, START, horizon

TZ = 9 * 3600


def _walk(points):
    return RawTrajectory.from_points("u", points)


def test_haversine_known_distance():
    # One degree of latitude is about 111.2 km on this sphere.
    d = haversine_m(35.0, 139.0, 36.0, 139.0)
    assert d == pytest.approx(grid.EARTH_RADIUS_M * np.pi / 180, rel=1e-12)


def test_stay_point_detected_on_dwell():
    pts = [(START + k * 600, 35.70, 139.75) for k in range(7)]  # 1 h dwell
    sps = extract_stay_points(_walk(pts))
    assert len(sps) == 1
    sp = sps[0]
    assert sp.arrive == START and sp.depart == START + 3600
    assert sp.duration == 3600
    assert sp.cell == grid.get_backend().cell_of(35.70, 139.75, 8)


def test_dwell_below_one_hour_is_not_a_stay():
    pts = [(START + k * 600, 35.70, 139.75) for k in range(6)]  # 50 min span
    assert extract_stay_points(_walk(pts)) == []


def test_movement_beyond_radius_splits_stays():
    # 1 h at A, quick hop 1 km away, 1 h at B.
    a = [(START + k * 600, 35.70, 139.75) for k in range(7)]
    b = [(START + 4000 + k * 600, 35.709, 139.75) for k in range(7)]
    sps = extract_stay_points(_walk(a + b))
    assert len(sps) == 2
    assert sps[0].anchor != sps[1].anchor


def test_drift_within_radius_counts_as_one_stay():
    # Slow drift that stays within 500 m of the first point.
    pts = [(START + k * 600, 35.70 + k * 0.0004, 139.75) for k in range(7)]
    sps = extract_stay_points(_walk(pts))
    assert len(sps) == 1


def _commuter_raw(uid="c1", home=(35.64, 139.70), work=(35.70, 139.76), days=7):
    """Hand-built ideal commuter: nights at home, 9-18 weekdays at work."""
    pts = []
    for d in range(days):
        base = START + d * DAY
        day_key = (base + TZ) // DAY
        weekday = (day_key + 3) % 7 < 5
        for hh in range(0, 7):
            pts.append((base + hh * 3600, *home))
        if weekday:
            for hh in range(9, 19):
                pts.append((base + hh * 3600, *work))
            for hh in range(20, 24):
                pts.append((base + hh * 3600, *home))
        else:
            for hh in range(8, 24):
                pts.append((base + hh * 3600, *home))
    return RawTrajectory.from_points(uid, pts)


def test_home_work_recovered_for_ideal_commuter():
    raw = _commuter_raw()
    got = extract_home_work(raw, tz_offset=TZ)
    assert isinstance(got, HomeWork)
    b = grid.get_backend()
    assert got.home_cell == b.cell_of(35.64, 139.70, 8)
    assert got.work_cell == b.cell_of(35.70, 139.76, 8)
    assert got.home_stay_rate > 0.75
    assert got.work_stay_rate > 0.75


def test_split_workplace_user_rejected():
    # Work hours split across two distant offices; neither reaches 75%.
    pts = []
    for d in range(7):
        base = START + d * DAY
        day_key = (base + TZ) // DAY
        if (day_key + 3) % 7 >= 5:
            for hh in range(0, 24):
                pts.append((base + hh * 3600, 35.64, 139.70))
            continue
        for hh in range(0, 7):
            pts.append((base + hh * 3600, 35.64, 139.70))
        for hh in range(9, 14):
            pts.append((base + hh * 3600, 35.70, 139.76))
        for hh in range(14, 19):
            pts.append((base + hh * 3600, 35.75, 139.85))
        for hh in range(20, 24):
            pts.append((base + hh * 3600, 35.64, 139.70))
    got = extract_home_work(RawTrajectory.from_points("s1", pts), tz_offset=TZ)
    assert isinstance(got, Rejection)
    assert got.reason == "work_stay_rate_below_threshold"


def test_no_stays_rejected():
    # Constant fast movement, never still for an hour.
    pts = [(START + k * 600, 35.60 + k * 0.01, 139.70) for k in range(200)]
    got = extract_home_work(RawTrajectory.from_points("m1", pts), tz_offset=TZ)
    assert isinstance(got, Rejection)
    assert got.reason == "no_stay_points"


def test_synthetic_city_extraction_rate():
    spec = SyntheticCitySpec(n_users=60, commute_share=1.0, rng_seed=21)
    raws = synthesize_raw(spec, horizon(7))
    hits = sum(isinstance(extract_home_work(r, tz_offset=TZ), HomeWork) for r in raws)
    assert hits == 60


def test_workplace_heatmap_aggregates_to_parent():
    raws = synthesize_raw(SyntheticCitySpec(n_users=40, commute_share=1.0, rng_seed=5), horizon(7))
    hws = [extract_home_work(r, tz_offset=TZ) for r in raws]
    hws = [h for h in hws if isinstance(h, HomeWork)]
    fine = workplace_heatmap(hws, 8)
    coarse = workplace_heatmap(hws, 5)
    assert sum(fine.values()) == sum(coarse.values()) == len(hws)
    b = grid.get_backend()
    regroup = {}
    for cell, n in fine.items():
        regroup[b.parent_cell(cell, 5)] = regroup.get(b.parent_cell(cell, 5), 0) + n
    assert regroup == coarse


def test_export_homework_csv():
    hw = HomeWork("u1", 123, 456, 0.9, 0.8)
    buf = io.StringIO()
    export_homework_csv([hw], buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0].startswith("uid")
    assert lines[1].startswith("u1,")
