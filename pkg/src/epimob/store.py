"""Embedded on-disk key-value store for results, jobs and datasets.

One file per key under a root directory.  Values are length-prefixed,
sha256-checksummed JSON blobs written atomically (temp file + rename),
so a reader either sees a complete record or an integrity error, never
partial data.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .engine import EnsembleResult, SimulationRun
from .errors import IntegrityError, NotFoundError

_MAGIC = b"EPB1"
_KEY_RE = re.compile(r"^[A-Za-z0-9._:-]+$")


def _filename(key: str) -> str:
    if not _KEY_RE.match(key):
        raise ValueError(f"invalid store key: {key!r}")
    return key.replace(":", "__") + ".blob"


class BlobStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / _filename(key)

    def put(self, key: str, obj) -> None:
        payload = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
        digest = hashlib.sha256(payload).digest()
        blob = _MAGIC + struct.pack(">Q", len(payload)) + payload + digest
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self._path(key))
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def get(self, key: str):
        path = self._path(key)
        if not path.exists():
            raise NotFoundError(f"no record for key {key!r}")
        raw = path.read_bytes()
        if len(raw) < 12 or raw[:4] != _MAGIC:
            raise IntegrityError(f"record {key!r} has a malformed header")
        (length,) = struct.unpack(">Q", raw[4:12])
        body, digest = raw[12 : 12 + length], raw[12 + length : 12 + length + 32]
        if len(body) != length or len(digest) != 32:
            raise IntegrityError(f"record {key!r} is truncated")
        if hashlib.sha256(body).digest() != digest:
            raise IntegrityError(f"record {key!r} failed its checksum")
        return json.loads(body)

    def has(self, key: str) -> bool:
        return self._path(key).exists()

    def keys(self) -> list[str]:
        return sorted(
            p.name[: -len(".blob")].replace("__", ":")
            for p in self.root.glob("*.blob")
        )

    def delete(self, key: str) -> None:
        path = self._path(key)
        if path.exists():
            path.unlink()


def _run_to_payload(run: SimulationRun) -> dict:
    return {
        "run_index": run.run_index,
        "rng_seed": int(run.rng_seed),
        "event_uid": run.event_uid.tolist(),
        "event_t": run.event_t.tolist(),
        "event_cell": run.event_cell.tolist(),
        "detection_uid": run.detection_uid.tolist(),
        "detection_t": run.detection_t.tolist(),
        "detection_cell": run.detection_cell.tolist(),
        "day_keys": run.day_keys.tolist(),
        "daily": run.daily.tolist(),
        "initial_infected": run.initial_infected.tolist(),
    }


def _run_from_payload(doc: dict) -> SimulationRun:
    return SimulationRun(
        run_index=doc["run_index"],
        rng_seed=doc["rng_seed"],
        event_uid=np.asarray(doc["event_uid"], dtype=np.int64),
        event_t=np.asarray(doc["event_t"], dtype=np.int64),
        event_cell=np.asarray(doc["event_cell"], dtype=np.int64),
        detection_uid=np.asarray(doc["detection_uid"], dtype=np.int64),
        detection_t=np.asarray(doc["detection_t"], dtype=np.int64),
        detection_cell=np.asarray(doc["detection_cell"], dtype=np.int64),
        day_keys=np.asarray(doc["day_keys"], dtype=np.int64),
        daily=np.asarray(doc["daily"], dtype=np.int64).reshape(len(doc["daily"]), 6),
        initial_infected=np.asarray(doc["initial_infected"], dtype=np.int64),
    )


def ensemble_to_payload(er: EnsembleResult) -> dict:
    return {
        "fingerprint": er.fingerprint,
        "runs": [_run_to_payload(r) for r in er.runs],
        "kept": list(er.kept),
        "day_keys": er.day_keys.tolist(),
        "mean": er.mean.tolist(),
        "ci_low": er.ci_low.tolist(),
        "ci_high": er.ci_high.tolist(),
        "population": er.population,
        "uids": list(er.uids),
        "cell_vocab": er.cell_vocab.tolist() if er.cell_vocab is not None else None,
        "meta": er.meta,
    }


def ensemble_from_payload(doc: dict) -> EnsembleResult:
    vocab = doc.get("cell_vocab")
    return EnsembleResult(
        fingerprint=doc["fingerprint"],
        runs=[_run_from_payload(r) for r in doc["runs"]],
        kept=list(doc["kept"]),
        day_keys=np.asarray(doc["day_keys"], dtype=np.int64),
        mean=np.asarray(doc["mean"], dtype=np.float64),
        ci_low=np.asarray(doc["ci_low"], dtype=np.float64),
        ci_high=np.asarray(doc["ci_high"], dtype=np.float64),
        population=doc["population"],
        uids=list(doc["uids"]),
        cell_vocab=None if vocab is None else np.asarray(vocab, dtype=np.int64),
        meta=doc.get("meta", {}),
    )


def ensembles_equal(a: EnsembleResult, b: EnsembleResult) -> bool:
    """Structural equality, used to verify lossless persistence."""
    if (
        a.fingerprint != b.fingerprint
        or a.kept != b.kept
        or a.population != b.population
        or a.uids != b.uids
        or a.meta != b.meta
        or len(a.runs) != len(b.runs)
    ):
        return False
    for x, y in [
        (a.day_keys, b.day_keys), (a.mean, b.mean),
        (a.ci_low, b.ci_low), (a.ci_high, b.ci_high),
    ]:
        if not np.array_equal(x, y):
            return False
    if (a.cell_vocab is None) != (b.cell_vocab is None):
        return False
    if a.cell_vocab is not None and not np.array_equal(a.cell_vocab, b.cell_vocab):
        return False
    for ra, rb in zip(a.runs, b.runs):
        if ra.run_index != rb.run_index or ra.rng_seed != rb.rng_seed:
            return False
        for fa in (
            "event_uid", "event_t", "event_cell", "detection_uid",
            "detection_t", "detection_cell", "day_keys", "daily",
            "initial_infected",
        ):
            if not np.array_equal(getattr(ra, fa), getattr(rb, fa)):
                return False
    return True
