"""Command line entry points: synth, run, compare, serve.

Exit codes: 0 success, 2 validation error, 3 capacity error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import analytics, grid
from .engine import compile_mobility, export_daily_csv, export_events_jsonl, run_ensemble
from .errors import CapacityError, EpimobError
from .jobs import DEFAULT_CAPACITY_BUDGET, Service, fingerprint_config
from .mobility import (
    SyntheticCitySpec,
    TimeRange,
    build_trajectory_set,
    ingest_trajectories,
    parse_iso8601_utc,
    synthesize_raw,
)
from .places import HomeWork, export_homework_csv, extract_home_work
from .poirisk import (
    EpidemicParams,
    RiskConfig,
    build_risk_field,
    empty_risk_field,
    ingest_pois,
    occupancy_weights,
)
from .policy import PolicySpec, compose_plan
from .store import BlobStore, ensemble_from_payload, ensemble_to_payload

EXIT_VALIDATION = 2
EXIT_CAPACITY = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, f"cannot read {path}: {exc}")


def _horizon_of(doc: dict) -> TimeRange:
    try:
        h = doc["horizon"]
        return TimeRange(parse_iso8601_utc(h["start"]), parse_iso8601_utc(h["end"]))
    except (KeyError, TypeError, ValueError, EpimobError) as exc:
        _fail(EXIT_VALIDATION, f"bad or missing horizon: {exc}")


@click.group()
def main():
    """Trajectory-based epidemic simulation toolkit."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="JSON with city (generator fields) and horizon {start,end}.")
@click.option("--out", "out_dir", default="synth_out", type=click.Path())
def synth(spec_path: str, out_dir: str):
    """Generate a synthetic city: trajectories JSONL plus home/work CSV."""
    doc = _load_json(spec_path)
    horizon = _horizon_of(doc)
    step = int(doc.get("step", 300))
    res = int(doc.get("res", grid.DEFAULT_RESOLUTION))
    tz = int(doc.get("tz_offset", 9 * 3600))
    try:
        city = SyntheticCitySpec.from_json(doc.get("city", {}))
        raws = synthesize_raw(city, horizon, tz)
        ts = build_trajectory_set(raws, horizon, step, res, tz)
    except EpimobError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectories.jsonl", "w") as f:
        ts.export_jsonl(f)
    hws = []
    for raw in raws:
        got = extract_home_work(raw, tz_offset=tz, res=res)
        if isinstance(got, HomeWork):
            hws.append(got)
    with open(out / "homework.csv", "w") as f:
        export_homework_csv(hws, f)
    meta = {
        "dataset_id": ts.dataset_id,
        "users": len(ts.trajectories),
        "days": len(ts.day_bounds()),
        "step": step,
        "res": res,
        "tz_offset": tz,
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2))
    click.echo(json.dumps(meta))


def _build_inputs(cfg: dict):
    horizon = _horizon_of(cfg)
    step = int(cfg.get("step", 300))
    res = int(cfg.get("res", grid.DEFAULT_RESOLUTION))
    tz = int(cfg.get("tz_offset", 9 * 3600))
    if "city" in cfg:
        city = SyntheticCitySpec.from_json(cfg["city"])
        raws = synthesize_raw(city, horizon, tz)
    elif "trajectories_csv" in cfg:
        raws, _ = ingest_trajectories(cfg["trajectories_csv"], horizon, lenient=True)
    else:
        raise EpimobError("config needs either 'city' or 'trajectories_csv'")
    ts = build_trajectory_set(raws, horizon, step, res, tz)
    hw = {}
    for raw in raws:
        got = extract_home_work(raw, tz_offset=tz, res=res)
        if isinstance(got, HomeWork):
            hw[raw.uid] = got
    return ts, hw


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(config_path: str, out_dir: str):
    """Run an ensemble from a config file; write results into a directory."""
    cfg = _load_json(config_path)
    try:
        m = int(cfg.get("m", 100))
        ts, hw = _build_inputs(cfg)
        budget = int(cfg.get("capacity_budget", DEFAULT_CAPACITY_BUDGET))
        cost = len(ts.trajectories) * len(ts.day_bounds()) * m
        if cost > budget:
            raise CapacityError(
                f"config cost {cost} exceeds the budget of {budget}"
            )
        policies = [PolicySpec.from_json(d) for d in cfg.get("policies", [])]
        plan = compose_plan(ts, policies, hw)
        params = EpidemicParams(
            beta_global=float(cfg.get("beta_global", 0.302)),
            sigma=float(cfg.get("sigma", 0.2)),
            gamma=float(cfg.get("gamma", 0.1)),
            i0=int(cfg.get("i0", 10)),
            step=ts.step,
            rng_seed=int(cfg.get("seed", 0)),
        )
        if "poi_csv" in cfg:
            table = ingest_pois(cfg["poi_csv"], res=ts.resolution, lenient=True)
            field = build_risk_field(
                table, RiskConfig.from_json(cfg.get("risk", {})),
                params.beta_global, occupancy_weights(plan.trajectory_set),
                ts.tz_offset,
            )
        else:
            field = empty_risk_field(params.beta_global, ts.tz_offset)
        cm = compile_mobility(plan.trajectory_set)
        er = run_ensemble(
            cm, field, params, plan.screening, m=m,
            fingerprint=fingerprint_config(cfg),
            meta={"name": cfg.get("name", "")},
        )
    except CapacityError as exc:
        _fail(EXIT_CAPACITY, str(exc))
    except (EpimobError, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(ensemble_to_payload(er)))
    (out / "curve.json").write_text(
        json.dumps(analytics.cumulative_curve(er, cfg.get("name", "")).to_payload())
    )
    with open(out / "daily.csv", "w") as f:
        export_daily_csv(er, f)
    with open(out / "events.jsonl", "w") as f:
        export_events_jsonl(er, f)
    click.echo(json.dumps({
        "runs": er.m,
        "kept": len(er.kept),
        "final_mean": er.mean[-1] if len(er.mean) else 0.0,
        "out": str(out),
    }))


@main.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--name", default="comparison")
def compare(results, name: str):
    """Compare two or more result.json files; print the comparison payload."""
    try:
        ers = [ensemble_from_payload(_load_json(p)) for p in results]
        payload = analytics.compare_policies(ers, name)
    except (EpimobError, KeyError, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    click.echo(json.dumps(payload))


@main.command()
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--data", "data_dir", default="epimob_data", type=click.Path())
@click.option("--workers", default=None, type=int, help="Job pool size.")
def serve(port: int, host: str, data_dir: str, workers: int | None):
    """Start the HTTP API; persists jobs and results under the data dir."""
    import uvicorn

    from .api import create_app

    root = Path(data_dir)
    service = Service(BlobStore(root / "store"), n_workers=workers)
    poi_csv = root / "poi.csv"
    if poi_csv.exists():
        service.poi_table = ingest_pois(str(poi_csv), lenient=True)
    uvicorn.run(create_app(service), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
