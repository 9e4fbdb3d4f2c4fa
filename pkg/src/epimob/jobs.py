"""Dataset registry and simulation job execution.

Jobs run on a bounded thread pool.  Identical configurations share one
result through a content fingerprint, and every job transition is
persisted so a restart never reports an interrupted job as done.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import grid
from .engine import EnsembleResult, compile_mobility, run_ensemble
from .errors import CapacityError, InvalidInputError, NotFoundError
from .mobility import (
    SyntheticCitySpec,
    TimeRange,
    TrajectorySet,
    build_trajectory_set,
    generate_synthetic_city,
    ingest_trajectories,
    synthesize_raw,
)
from .places import HomeWork, extract_home_work
from .poirisk import (
    EpidemicParams,
    PoiTable,
    RiskConfig,
    build_risk_field,
    empty_risk_field,
    occupancy_weights,
)
from .policy import PolicySpec, compose_plan
from .store import BlobStore, ensemble_from_payload, ensemble_to_payload

log = logging.getLogger(__name__)

# Guardrail on users * days * runs so a typo cannot queue hours of work.
DEFAULT_CAPACITY_BUDGET = 100_000_000

QUEUED, RUNNING, DONE, FAILED = "queued", "running", "done", "failed"
_FORWARD = {QUEUED: {RUNNING, FAILED}, RUNNING: {DONE, FAILED}, DONE: set(), FAILED: set()}


def fingerprint_config(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Dataset:
    dataset_id: str
    ts: TrajectorySet
    homework: dict[str, HomeWork]
    rejected: dict[str, str] = field(default_factory=dict)  # uid -> reason
    name: str = ""

    @property
    def n_users(self) -> int:
        return len(self.ts.trajectories)

    @property
    def n_days(self) -> int:
        return len(self.ts.day_bounds())


@dataclass
class JobRecord:
    job_id: str
    fingerprint: str
    status: str = QUEUED
    progress: float = 0.0
    error: str = ""
    result_key: str = ""
    config: dict = field(default_factory=dict)
    created: float = 0.0
    started: float = 0.0
    finished: float = 0.0

    def advance(self, status: str) -> None:
        if status not in _FORWARD[self.status]:
            raise InvalidInputError(
                f"job cannot move from {self.status} to {status}"
            )
        self.status = status

    def to_payload(self) -> dict:
        return {
            "job_id": self.job_id,
            "fingerprint": self.fingerprint,
            "status": self.status,
            "progress": self.progress,
            "error": self.error,
            "result_key": self.result_key,
            "config": self.config,
            "created": self.created,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_payload(cls, doc: dict) -> "JobRecord":
        return cls(**doc)


def _homework_for(raws, tz_offset: int, res: int):
    hw, rejected = {}, {}
    for raw in raws:
        got = extract_home_work(raw, tz_offset=tz_offset, res=res)
        if isinstance(got, HomeWork):
            hw[raw.uid] = got
        else:
            rejected[raw.uid] = got.reason
    return hw, rejected


class Service:
    """Owns datasets, the POI table, the job queue and the result store."""

    def __init__(
        self,
        store: BlobStore,
        n_workers: int | None = None,
        capacity_budget: int = DEFAULT_CAPACITY_BUDGET,
        backend=None,
    ):
        self.store = store
        self.capacity_budget = capacity_budget
        self.backend = backend or grid.get_backend()
        self.datasets: dict[str, Dataset] = {}
        self.poi_table: PoiTable = PoiTable({})
        self.jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=n_workers or os.cpu_count() or 2)
        self._recover()

    # -- dataset registry ---------------------------------------------------

    def add_dataset(self, raws, horizon: TimeRange, step: int = 300,
                    res: int = grid.DEFAULT_RESOLUTION,
                    tz_offset: int = 9 * 3600, name: str = "") -> Dataset:
        ts = build_trajectory_set(raws, horizon, step, res, tz_offset, self.backend)
        hw, rejected = _homework_for(raws, tz_offset, res)
        ds = Dataset(ts.dataset_id, ts, hw, rejected, name)
        with self._lock:
            self.datasets[ds.dataset_id] = ds
        return ds

    def create_synthetic(self, spec: SyntheticCitySpec, horizon: TimeRange,
                         step: int = 300, res: int = grid.DEFAULT_RESOLUTION,
                         tz_offset: int = 9 * 3600, name: str = "") -> Dataset:
        raws = synthesize_raw(spec, horizon, tz_offset)
        ts = build_trajectory_set(raws, horizon, step, res, tz_offset, self.backend)
        hw, rejected = _homework_for(raws, tz_offset, res)
        ds = Dataset(ts.dataset_id, ts, hw, rejected, name)
        with self._lock:
            self.datasets[ds.dataset_id] = ds
        return ds

    def ingest_csv(self, source, horizon: TimeRange, step: int = 300,
                   res: int = grid.DEFAULT_RESOLUTION, tz_offset: int = 9 * 3600,
                   lenient: bool = True, name: str = "") -> Dataset:
        raws, _skipped = ingest_trajectories(source, horizon, lenient=lenient)
        if not raws:
            raise InvalidInputError("no usable trajectories in upload")
        return self.add_dataset(raws, horizon, step, res, tz_offset, name)

    def dataset(self, dataset_id: str) -> Dataset:
        try:
            return self.datasets[dataset_id]
        except KeyError:
            raise NotFoundError(f"unknown dataset {dataset_id!r}") from None

    # -- jobs ----------------------------------------------------------------

    def submit(self, cfg: dict) -> tuple[str, bool]:
        """Enqueue a simulation; returns (job_id, cache_hit).

        Identical configurations map to the same job, so a resubmission
        while the first run is queued/running/done never recomputes.
        """
        ds = self.dataset(str(cfg.get("dataset_id", "")))
        m = int(cfg.get("m", 100))
        if m < 1:
            raise InvalidInputError("m must require at least one run")
        # Validate policy documents up front so bad input fails fast.
        for doc in cfg.get("policies", []):
            PolicySpec.from_json(doc)
        EpidemicParams(
            beta_global=float(cfg.get("beta_global", 0.302)),
            sigma=float(cfg.get("sigma", 0.2)),
            gamma=float(cfg.get("gamma", 0.1)),
            i0=int(cfg.get("i0", 10)),
            step=ds.ts.step,
        )
        RiskConfig.from_json(cfg.get("risk", {}))
        cost = ds.n_users * ds.n_days * m
        if cost > self.capacity_budget:
            raise CapacityError(
                f"config cost {cost} (users x days x runs) exceeds "
                f"the budget of {self.capacity_budget}"
            )
        fp = fingerprint_config(cfg)
        with self._lock:
            for job in self.jobs.values():
                if job.fingerprint == fp and job.status != FAILED:
                    return job.job_id, True
            job_id = "j" + fp[:16]
            job = JobRecord(job_id, fp, config=dict(cfg), created=time.time())
            self.jobs[job_id] = job
            self._persist_job(job)
        self._pool.submit(self._execute, job_id)
        return job_id, False

    def job(self, job_id: str) -> JobRecord:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise NotFoundError(f"unknown job {job_id!r}") from None

    def result(self, job_id: str) -> EnsembleResult:
        job = self.job(job_id)
        if job.status != DONE:
            raise NotFoundError(f"job {job_id!r} has no result (status {job.status})")
        return ensemble_from_payload(self.store.get(job.result_key))

    def wait(self, job_id: str, timeout: float = 300.0) -> JobRecord:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            job = self.job(job_id)
            if job.status in (DONE, FAILED):
                return job
            time.sleep(0.05)
        return self.job(job_id)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)

    # -- internals -----------------------------------------------------------

    def _persist_job(self, job: JobRecord) -> None:
        self.store.put("job:" + job.job_id, job.to_payload())

    def _recover(self) -> None:
        for key in self.store.keys():
            if not key.startswith("job:"):
                continue
            job = JobRecord.from_payload(self.store.get(key))
            if job.status in (QUEUED, RUNNING):
                job.status = FAILED
                job.error = "interrupted by service restart"
                self._persist_job(job)
            self.jobs[job.job_id] = job

    def _risk_field(self, cfg: dict, ts: TrajectorySet):
        risk = RiskConfig.from_json(cfg.get("risk", {}))
        beta_global = float(cfg.get("beta_global", 0.302))
        if not self.poi_table.by_cell:
            return empty_risk_field(beta_global, ts.tz_offset)
        return build_risk_field(
            self.poi_table, risk, beta_global, occupancy_weights(ts), ts.tz_offset
        )

    def _execute(self, job_id: str) -> None:
        job = self.jobs[job_id]
        with self._lock:
            job.advance(RUNNING)
            job.started = time.time()
            self._persist_job(job)
        try:
            cfg = job.config
            ds = self.dataset(cfg["dataset_id"])
            policies = [PolicySpec.from_json(d) for d in cfg.get("policies", [])]
            plan = compose_plan(ds.ts, policies, ds.homework, backend=self.backend)
            field_ = self._risk_field(cfg, plan.trajectory_set)
            params = EpidemicParams(
                beta_global=float(cfg.get("beta_global", 0.302)),
                sigma=float(cfg.get("sigma", 0.2)),
                gamma=float(cfg.get("gamma", 0.1)),
                i0=int(cfg.get("i0", 10)),
                step=ds.ts.step,
                rng_seed=int(cfg.get("seed", 0)),
            )
            cm = compile_mobility(plan.trajectory_set)
            er = run_ensemble(
                cm, field_, params, plan.screening,
                m=int(cfg.get("m", 100)),
                fingerprint=job.fingerprint,
                meta={
                    "name": cfg.get("name", ""),
                    "clips": _config_clips(cfg, policies),
                    "dataset_id": ds.dataset_id,
                },
            )
            key = "result:" + job_id
            self.store.put(key, ensemble_to_payload(er))
            with self._lock:
                job.result_key = key
                job.progress = 1.0
                job.advance(DONE)
                job.finished = time.time()
                self._persist_job(job)
        except Exception as exc:
            log.exception("job %s failed", job_id)
            with self._lock:
                job.error = str(exc)
                job.advance(FAILED)
                job.finished = time.time()
                self._persist_job(job)


def _config_clips(cfg: dict, policies) -> list[str]:
    clips = [
        f"beta={cfg.get('beta_global', 0.302)}",
        f"sigma={cfg.get('sigma', 0.2)}",
        f"gamma={cfg.get('gamma', 0.1)}",
        f"i0={cfg.get('i0', 10)}",
        f"m={cfg.get('m', 100)}",
    ]
    for p in policies:
        clips.append(f"{p.kind}:{p.name}")
    return clips
