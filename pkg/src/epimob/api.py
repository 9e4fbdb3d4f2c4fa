"""HTTP JSON API over the dataset registry and job queue.

All routes live under /v1.  Handlers never compute epidemiology on the
fly: simulations run as jobs, and every read endpoint is derived from a
persisted result.
"""
from __future__ import annotations

import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import analytics, grid
from .errors import (
    CapacityError,
    EpimobError,
    IntegrityError,
    InvalidInputError,
    NotFoundError,
    ParseError,
)
from .jobs import Service
from .mobility import SyntheticCitySpec, TimeRange, parse_iso8601_utc
from .places import workplace_heatmap


class HorizonIn(BaseModel):
    start: str
    end: str

    def to_range(self) -> TimeRange:
        return TimeRange(parse_iso8601_utc(self.start), parse_iso8601_utc(self.end))


class SyntheticDatasetIn(BaseModel):
    spec: dict
    horizon: HorizonIn
    step: int = 300
    res: int = grid.DEFAULT_RESOLUTION
    tz_offset: int = 9 * 3600
    name: str = ""


class SimulationIn(BaseModel):
    dataset_id: str
    name: str = ""
    m: int = 100
    beta_global: float = 0.302
    sigma: float = 0.2
    gamma: float = 0.1
    i0: int = 10
    seed: int = 0
    risk: dict = Field(default_factory=dict)
    policies: list[dict] = Field(default_factory=list)


class ComparisonIn(BaseModel):
    job_ids: list[str]
    name: str = ""


def _error(status: int, exc: Exception) -> JSONResponse:
    doc = {"error": str(exc)}
    if isinstance(exc, ParseError) and exc.line is not None:
        doc["line"] = exc.line
    return JSONResponse(status_code=status, content=doc)


def _parse_cell(text: str) -> int:
    try:
        return grid.hex_to_cell(text)
    except (ValueError, EpimobError):
        raise InvalidInputError(f"malformed cell id {text!r}") from None


def create_app(service: Service) -> FastAPI:
    app = FastAPI(title="epimob", version="1.0")
    app.state.service = service
    result_cache: dict[str, object] = {}
    cache_lock = threading.Lock()

    def load_result(job_id: str):
        job = service.job(job_id)
        if job.status == "failed":
            raise InvalidInputError(f"job {job_id} failed: {job.error}")
        if job.status != "done":
            raise NotFoundError(f"job {job_id} is still {job.status}")
        with cache_lock:
            if job_id not in result_cache:
                result_cache[job_id] = service.result(job_id)
            return result_cache[job_id]

    @app.exception_handler(NotFoundError)
    async def _nf(request: Request, exc: NotFoundError):
        return _error(404, exc)

    @app.exception_handler(InvalidInputError)
    async def _ii(request: Request, exc: InvalidInputError):
        return _error(400, exc)

    @app.exception_handler(ParseError)
    async def _pe(request: Request, exc: ParseError):
        return _error(400, exc)

    @app.exception_handler(CapacityError)
    async def _ce(request: Request, exc: CapacityError):
        return _error(429, exc)

    @app.exception_handler(IntegrityError)
    async def _ie(request: Request, exc: IntegrityError):
        return _error(500, exc)

    @app.post("/v1/datasets/synthetic")
    def create_synthetic(body: SyntheticDatasetIn):
        spec = SyntheticCitySpec.from_json(body.spec)
        ds = service.create_synthetic(
            spec, body.horizon.to_range(), body.step, body.res,
            body.tz_offset, body.name,
        )
        return {
            "dataset_id": ds.dataset_id,
            "users": ds.n_users,
            "days": ds.n_days,
            "rejected_homework": len(ds.rejected),
        }

    @app.post("/v1/datasets")
    async def upload_dataset(
        request: Request, start: str, end: str, step: int = 300,
        res: int = grid.DEFAULT_RESOLUTION, tz_offset: int = 9 * 3600,
        name: str = "", lenient: bool = True,
    ):
        body = await request.body()
        text = _extract_csv(body, request.headers.get("content-type", ""))
        horizon = TimeRange(parse_iso8601_utc(start), parse_iso8601_utc(end))
        ds = service.ingest_csv(text, horizon, step, res, tz_offset, lenient, name)
        return {
            "dataset_id": ds.dataset_id,
            "users": ds.n_users,
            "days": ds.n_days,
            "rejected_homework": len(ds.rejected),
        }

    @app.get("/v1/datasets/{dataset_id}/workplaces")
    def workplaces(dataset_id: str, res: int = grid.DEFAULT_RESOLUTION):
        ds = service.dataset(dataset_id)
        if res > ds.ts.resolution:
            raise InvalidInputError("res must not exceed the dataset resolution")
        heat = workplace_heatmap(ds.homework.values(), res, service.backend)
        return {
            "res": res,
            "cells": [
                {
                    "cell": grid.cell_to_hex(c),
                    "count": n,
                    "polygon": [[la, lo] for la, lo in service.backend.cell_boundary(c)],
                }
                for c, n in sorted(heat.items())
            ],
        }

    @app.get("/v1/poi/layers")
    def poi_layers(categories: str = ""):
        wanted = {c.strip() for c in categories.split(",") if c.strip()}
        pts = [
            {"lat": lat, "lon": lon, "category": cat}
            for lat, lon, cat in service.poi_table.points
            if not wanted or cat in wanted
        ]
        return {"points": pts}

    @app.post("/v1/simulations")
    def submit(body: SimulationIn):
        job_id, cached = service.submit(body.model_dump())
        return {"job_id": job_id, "cached": cached}

    @app.get("/v1/simulations/{job_id}")
    def job_status(job_id: str):
        return service.job(job_id).to_payload()

    @app.get("/v1/simulations/{job_id}/curve")
    def curve(job_id: str):
        er = load_result(job_id)
        return analytics.cumulative_curve(er).to_payload()

    @app.get("/v1/simulations/{job_id}/severity")
    def severity(job_id: str, res: int = grid.DEFAULT_RESOLUTION):
        er = load_result(job_id)
        clusters = analytics.severity_clusters(er, res, service.backend)
        return {
            "res": res,
            "kept": len(er.kept),
            "total": sum(c.count for c in clusters),
            "clusters": [c.to_payload() for c in clusters],
        }

    @app.get("/v1/simulations/{job_id}/severity/{cell}/hourly")
    def hourly(job_id: str, cell: str):
        er = load_result(job_id)
        cid = _parse_cell(cell)
        ds_tz = 9 * 3600
        ds = service.datasets.get(er.meta.get("dataset_id", ""))
        if ds is not None:
            ds_tz = ds.ts.tz_offset
        doc = analytics.hourly_histogram(er, [cid], tz_offset=ds_tz,
                                         backend=service.backend)
        doc["cell"] = cell
        return doc

    @app.post("/v1/comparisons")
    def compare(body: ComparisonIn):
        results = [load_result(j) for j in body.job_ids]
        return analytics.compare_policies(results, body.name)

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    return app


def _extract_csv(body: bytes, content_type: str) -> str:
    """Accept a raw CSV body or a single-file multipart upload."""
    if "multipart/form-data" in content_type:
        boundary = content_type.split("boundary=")[-1].strip().strip('"')
        sep = ("--" + boundary).encode()
        for part in body.split(sep):
            if b"\r\n\r\n" not in part:
                continue
            head, _, payload = part.partition(b"\r\n\r\n")
            if b"filename=" in head or b"text/csv" in head:
                return payload.rstrip(b"\r\n-").decode("utf-8")
        raise InvalidInputError("multipart upload carries no CSV file part")
    return body.decode("utf-8")
