import io

import numpy as np
import pytest

from epimob import analytics, grid
from epimob.engine import EnsembleResult, SimulationRun, compile_mobility, run_ensemble
from epimob.errors import InvalidInputError
from epimob.poirisk import EpidemicParams, empty_risk_field

from conftest import START

TZ = 9 * 3600


@pytest.fixture(scope="module")
def ensemble(small_city):
    cm = compile_mobility(small_city)
    field = empty_risk_field(0.45, TZ)
    return run_ensemble(cm, field, EpidemicParams(beta_global=0.45, step=300),
                        m=10, fingerprint="f", meta={"name": "fx"})


def _fake_result(events, day_keys=(0, 1)):
    """Single-run ensemble with a hand-chosen event log."""
    uid = np.zeros(len(events), dtype=np.int64)
    t = np.array([e[0] for e in events], dtype=np.int64)
    cell = np.array([e[1] for e in events], dtype=np.int64)
    daily = np.zeros((len(day_keys), 6), dtype=np.int64)
    daily[:, 5] = len(events)
    run = SimulationRun(0, 0, uid, t, cell, uid[:0], t[:0], cell[:0],
                        np.array(day_keys), daily, np.array([], dtype=np.int64))
    curve = daily[:, 5].astype(float)
    return EnsembleResult("fp", [run], [0], np.array(day_keys), curve,
                          curve, curve, population=10)


def test_curve_matches_ensemble_stats(ensemble):
    c = analytics.cumulative_curve(ensemble)
    assert c.name == "fx"
    assert np.array_equal(c.day_keys, ensemble.day_keys)
    assert np.allclose(c.mean, ensemble.mean)
    assert all(a <= m <= b for a, m, b in zip(c.ci_low, c.mean, c.ci_high))
    assert all(x <= y + 1e-12 for x, y in zip(c.mean, c.mean[1:]))


def test_curve_requires_kept_runs(ensemble):
    empty = EnsembleResult("f", [], [], ensemble.day_keys, ensemble.mean,
                           ensemble.ci_low, ensemble.ci_high, 1)
    with pytest.raises(InvalidInputError):
        analytics.cumulative_curve(empty)


def test_identical_runs_collapse_band(ensemble):
    one = ensemble.runs[0]
    er = EnsembleResult("f", [one, one, one], [0, 1, 2], one.day_keys,
                        one.daily[:, 5].astype(float), one.daily[:, 5].astype(float),
                        one.daily[:, 5].astype(float), 300)
    c = analytics.cumulative_curve(er)
    assert c.ci_low == c.mean == c.ci_high


def test_severity_mass_conserved_across_resolutions(ensemble):
    total = sum(len(r.event_t) for r in ensemble.kept_runs())
    for res in (8, 7, 5, 3):
        clusters = analytics.severity_clusters(ensemble, res)
        assert sum(c.count for c in clusters) == total
        assert all(grid.cell_level(c.cell) == res or grid.cell_level(c.cell) <= res
                   for c in clusters)
    fine = {c.cell: c.count for c in analytics.severity_clusters(ensemble, 8)}
    coarse = {c.cell: c.count for c in analytics.severity_clusters(ensemble, 5)}
    b = grid.get_backend()
    regroup: dict[int, int] = {}
    for cell, n in fine.items():
        p = b.parent_cell(cell, 5)
        regroup[p] = regroup.get(p, 0) + n
    assert regroup == coarse


def test_single_event_single_cluster():
    b = grid.get_backend()
    cell = b.cell_of(35.7, 139.75, 8)
    er = _fake_result([(START + 3600, cell)])
    for res in (8, 6, 4):
        clusters = analytics.severity_clusters(er, res)
        assert len(clusters) == 1
        assert clusters[0].count == 1
        assert clusters[0].polygon[0] == clusters[0].polygon[-1]


def test_severity_empty_result():
    er = _fake_result([])
    assert analytics.severity_clusters(er, 8) == []


def test_hourly_histogram_all_one_hour():
    b = grid.get_backend()
    cell = b.cell_of(35.7, 139.75, 8)
    # 13:00 local = 04:00 UTC
    t = START + 13 * 3600
    er = _fake_result([(t, cell), (t + 60, cell), (t + 120, cell)])
    h = analytics.hourly_histogram(er, [cell], tz_offset=TZ)
    assert h["bins"][13] == 100.0
    assert sum(h["bins"]) == pytest.approx(100.0, abs=1e-9)
    assert not h["no_data"]


def test_hourly_histogram_uniform():
    b = grid.get_backend()
    cell = b.cell_of(35.7, 139.75, 8)
    events = [(START + h * 3600, cell) for h in range(24)]
    h = analytics.hourly_histogram(er := _fake_result(events), [cell], tz_offset=TZ)
    assert all(v == pytest.approx(100 / 24) for v in h["bins"])
    assert sum(h["bins"]) == pytest.approx(100.0, abs=1e-9)


def test_hourly_histogram_no_data_flag():
    b = grid.get_backend()
    far = b.cell_of(35.9, 139.2, 8)
    er = _fake_result([(START, b.cell_of(35.7, 139.75, 8))])
    h = analytics.hourly_histogram(er, [far], tz_offset=TZ)
    assert h["no_data"] and h["bins"] == [0.0] * 24
    with pytest.raises(InvalidInputError):
        analytics.hourly_histogram(er, [], tz_offset=TZ)


def test_hourly_histogram_region_at_coarser_res(ensemble):
    # Binding a parent cell collects its children's events.
    clusters = analytics.severity_clusters(ensemble, 5)
    top = max(clusters, key=lambda c: c.count)
    h = analytics.hourly_histogram(ensemble, [top.cell], tz_offset=TZ)
    assert h["total"] == top.count
    assert sum(h["bins"]) == pytest.approx(100.0, abs=1e-9)


def test_compare_requires_matching_shapes(ensemble):
    other = EnsembleResult("g", ensemble.runs, ensemble.kept,
                           ensemble.day_keys[:-1], ensemble.mean[:-1],
                           ensemble.ci_low[:-1], ensemble.ci_high[:-1],
                           ensemble.population)
    with pytest.raises(InvalidInputError) as exc:
        analytics.compare_policies([ensemble, other], "x")
    assert "horizon" in str(exc.value)
    with pytest.raises(InvalidInputError):
        analytics.compare_policies([ensemble], "x")


def test_compare_self_is_tie(ensemble):
    doc = analytics.compare_policies([ensemble, ensemble], "same")
    assert doc["curves"][0]["mean"] == doc["curves"][1]["mean"]
    assert doc["ranking"] == [0, 1]
    assert doc["final_day_means"][0] == doc["final_day_means"][1]


def test_curve_from_daily_csv_matches(ensemble):
    from epimob.engine import export_daily_csv

    buf = io.StringIO()
    export_daily_csv(ensemble, buf)
    buf.seek(0)
    c = analytics.curve_from_daily_csv(buf, ensemble.kept)
    api = analytics.cumulative_curve(ensemble)
    assert c.mean == api.mean
    assert c.ci_low == api.ci_low
    assert c.ci_high == api.ci_high
