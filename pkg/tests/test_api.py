import numpy as np
import pytest
from fastapi.testclient import TestClient

from epimob.api import create_app
from epimob.jobs import Service
from epimob.poirisk import ingest_pois
from epimob.store import BlobStore


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    svc = Service(BlobStore(tmp_path_factory.mktemp("kv")), n_workers=2)
    svc.poi_table = ingest_pois(
        "lat,lon,category\n35.70,139.75,restaurant\n35.71,139.76,entertainment\n"
    )
    with TestClient(create_app(svc)) as c:
        c.service = svc
        yield c
    svc.shutdown()


HORIZON = {"start": "2012-06-30T15:00:00Z", "end": "2012-07-07T15:00:00Z"}


@pytest.fixture(scope="module")
def dataset_id(client):
    r = client.post("/v1/datasets/synthetic",
                    json={"spec": {"n_users": 150, "rng_seed": 3}, "horizon": HORIZON})
    assert r.status_code == 200
    return r.json()["dataset_id"]


@pytest.fixture(scope="module")
def done_job(client, dataset_id):
    r = client.post("/v1/simulations", json={"dataset_id": dataset_id, "m": 5, "name": "base"})
    assert r.status_code == 200
    jid = r.json()["job_id"]
    assert client.service.wait(jid, 120).status == "done"
    return jid


def test_synthetic_dataset_payload(client, dataset_id):
    assert len(dataset_id) == 64


def test_upload_csv_roundtrip(client):
    rows = ["uid,timestamp,lat,lon"]
    for h in range(0, 7 * 24):
        rows.append(f"u1,2012-07-01T{h % 24:02d}:30:00+09:00,35.69,139.75")
    # out-of-order hours across days still land inside the horizon window
    body = "\n".join(rows).encode()
    r = client.post("/v1/datasets", params=HORIZON, content=body,
                    headers={"content-type": "text/csv"})
    assert r.status_code == 200
    assert r.json()["users"] == 1
    files = {"file": ("t.csv", body, "text/csv")}
    r2 = client.post("/v1/datasets", params=HORIZON, files=files)
    assert r2.status_code == 200
    assert r2.json()["dataset_id"] == r.json()["dataset_id"]


def test_upload_bad_csv_is_400(client):
    r = client.post("/v1/datasets", params=HORIZON, content=b"nope,nope\n1,2\n",
                    headers={"content-type": "text/csv"})
    assert r.status_code == 400


def test_workplaces_endpoint(client, dataset_id):
    r = client.get(f"/v1/datasets/{dataset_id}/workplaces", params={"res": 8})
    assert r.status_code == 200
    cells = r.json()["cells"]
    assert cells and all(c["count"] > 0 for c in cells)
    r5 = client.get(f"/v1/datasets/{dataset_id}/workplaces", params={"res": 5})
    assert sum(c["count"] for c in r5.json()["cells"]) == sum(c["count"] for c in cells)
    assert client.get("/v1/datasets/absent/workplaces").status_code == 404
    assert client.get(f"/v1/datasets/{dataset_id}/workplaces", params={"res": 12}).status_code == 400


def test_poi_layers_filtering(client):
    assert len(client.get("/v1/poi/layers").json()["points"]) == 2
    pts = client.get("/v1/poi/layers", params={"categories": "restaurant"}).json()["points"]
    assert len(pts) == 1 and pts[0]["category"] == "restaurant"


def test_simulation_lifecycle(client, done_job):
    doc = client.get(f"/v1/simulations/{done_job}").json()
    assert doc["status"] == "done"
    assert doc["progress"] == 1.0
    curve = client.get(f"/v1/simulations/{done_job}/curve").json()
    assert len(curve["days"]) == 7
    assert curve["mean"] == sorted(curve["mean"])
    assert all(a <= m <= b for a, m, b in zip(curve["ci_low"], curve["mean"], curve["ci_high"]))


def test_duplicate_submission_cached(client, dataset_id, done_job):
    r = client.post("/v1/simulations", json={"dataset_id": dataset_id, "m": 5, "name": "base"})
    assert r.json() == {"job_id": done_job, "cached": True}


def test_severity_and_hourly(client, done_job):
    sev = client.get(f"/v1/simulations/{done_job}/severity", params={"res": 8}).json()
    assert sev["total"] == sum(c["count"] for c in sev["clusters"])
    sev5 = client.get(f"/v1/simulations/{done_job}/severity", params={"res": 5}).json()
    assert sev5["total"] == sev["total"]
    cell = max(sev["clusters"], key=lambda c: c["count"])["cell"]
    h = client.get(f"/v1/simulations/{done_job}/severity/{cell}/hourly").json()
    assert sum(h["bins"]) == pytest.approx(100.0, abs=1e-9)
    assert client.get(f"/v1/simulations/{done_job}/severity/zzz/hourly").status_code == 400


def test_comparison_endpoint(client, done_job):
    r = client.post("/v1/comparisons", json={"job_ids": [done_job, done_job], "name": "c"})
    assert r.status_code == 200
    doc = r.json()
    assert len(doc["curves"]) == 2
    assert doc["ranking"] == [0, 1]
    assert client.post("/v1/comparisons", json={"job_ids": [done_job], "name": "c"}).status_code == 400


def test_error_codes(client, dataset_id):
    assert client.get("/v1/simulations/missing").status_code == 404
    r = client.post("/v1/simulations", json={"dataset_id": "missing", "m": 2})
    assert r.status_code == 404
    r = client.post("/v1/simulations", json={"dataset_id": dataset_id, "m": 10**9})
    assert r.status_code == 429
    # schema violations carry the offending field path
    r = client.post("/v1/simulations", json={"dataset_id": dataset_id, "m": "many"})
    assert r.status_code == 422
    assert "m" in str(r.json()["detail"][0]["loc"])
