import threading
import time

import pytest
import uvicorn
from fastapi.testclient import TestClient

from modelfuzz.cli import EXIT_OK, main
from modelfuzz.harness import CaseStore, StoredCase
from modelfuzz.model import example_mqtt_model
from modelfuzz.service import create_app
from modelfuzz.testbed import free_port


def campaign_config(endpoint, **kw):
    return {
        "protocol": "mqtt",
        "endpoint": endpoint,
        "batch_size": 20,
        "max_batches": 2,
        "restart_probability": 0.0,
        "workers": 2,
        "timeouts": {"connect_s": 0.5, "read_s": 0.02, "probe_retries": 1, "probe_backoff_s": 0.05},
        **kw,
    }


@pytest.fixture
def client(tmp_path):
    with TestClient(create_app(tmp_path / "work")) as c:
        yield c


def wait_done(client, job_id, timeout=30):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        status = client.get(f"/campaigns/{job_id}").json()
        if status["state"] != "running":
            return status
        time.sleep(0.05)
    raise AssertionError("campaign did not finish")


def test_health_and_protocols(client):
    assert client.get("/health").json()["status"] == "ok"
    names = {p["name"] for p in client.get("/protocols").json()}
    assert names == {"MQTT", "MODBUS"}


def test_validate(client):
    doc = example_mqtt_model().to_document()
    assert client.post("/models/validate", json={"model": doc}).json() == {"ok": True, "violations": []}
    doc["transitions"]["CONNECT"] = [["PUBBLISH", 1]]
    body = client.post("/models/validate", json={"model": doc}).json()
    assert not body["ok"]
    assert body["violations"][0]["rule"] == "unknown-transition-target"
    assert client.post("/models/validate", json={"model": {"protocol": "MQTT"}}).json()["violations"][0]["rule"] == "format"


def test_sequences(client):
    doc = example_mqtt_model().to_document()
    body = client.post("/sequences", json={"model": doc, "n": 5, "seed": 3}).json()
    assert [s["id"] for s in body["sequences"]] == list(range(5))
    assert all(s["states"][0] == "CONNECT" for s in body["sequences"])
    again = client.post("/sequences", json={"model": doc, "n": 5, "seed": 3}).json()
    assert again == body
    enc = client.post("/sequences", json={"model": doc, "n": 3, "seed": 3, "encode": True}).json()
    assert len(enc["sequences"][0]["messages"]) == len(enc["sequences"][0]["states"])
    assert enc["stats"]["total_cases"] == 3


def test_sequences_rejects_bad_input(client):
    doc = example_mqtt_model().to_document()
    assert client.post("/sequences", json={"model": doc, "n": 0}).status_code == 422
    doc["transitions"]["CONNECT"] = [["NOPE", 1]]
    assert client.post("/sequences", json={"model": doc}).status_code == 422


def test_campaign_lifecycle(client, echo_testbed):
    resp = client.post("/campaigns", json={"config": campaign_config(echo_testbed.endpoint)})
    assert resp.status_code == 202
    job = resp.json()
    status = wait_done(client, job["id"])
    assert status["state"] == "finished"
    assert status["batches_done"] == 2
    report = client.get(f"/campaigns/{job['id']}/report").json()
    assert report["totals"]["total_cases"] == 40
    assert [j["id"] for j in client.get("/campaigns").json()] == [job["id"]]

    replay = client.post("/replay", json={"case_id": 0, "endpoint": echo_testbed.endpoint, "campaign_id": job["id"],
                                          "read_s": 0.05})
    assert replay.status_code == 200
    assert not replay.json()["crashed"]


def test_campaign_errors(client):
    assert client.get("/campaigns/nope").status_code == 404
    assert client.get("/campaigns/nope/report").status_code == 404
    assert client.post("/campaigns", json={"config": {"batch_size": 0}}).status_code == 422
    assert client.post("/campaigns", json={"config": campaign_config("no-such-host.invalid:1")}).status_code == 422
    failed = client.post("/campaigns", json={"config": campaign_config(f"127.0.0.1:{free_port()}")}).json()
    status = wait_done(client, failed["id"])
    assert status["state"] == "failed"
    assert "ConfigurationError" in status["error"]
    assert client.get(f"/campaigns/{failed['id']}/report").status_code == 409


def test_cancel(client, echo_testbed):
    job = client.post("/campaigns", json={"config": campaign_config(echo_testbed.endpoint, max_batches=1000)}).json()
    client.delete(f"/campaigns/{job['id']}")
    status = wait_done(client, job["id"])
    assert status["state"] == "cancelled"
    assert status["stop_reason"] == "cancelled"


def test_replay_errors(client, tmp_path, echo_testbed):
    store = tmp_path / "cases.jsonl"
    with CaseStore(store) as s:
        s.append(StoredCase(0, 0, ["A"], [b"a"], {}))
    ok = client.post("/replay", json={"case_id": 0, "endpoint": echo_testbed.endpoint, "store": str(store)})
    assert ok.json()["responses"] == ["61"]
    assert client.post("/replay", json={"case_id": 1, "endpoint": echo_testbed.endpoint,
                                        "store": str(store)}).status_code == 404
    assert client.post("/replay", json={"case_id": 0, "endpoint": echo_testbed.endpoint}).status_code == 422


def test_cli_submits_to_running_service(tmp_path, capsys, echo_testbed):
    port = free_port()
    server = uvicorn.Server(uvicorn.Config(create_app(tmp_path / "work"), host="127.0.0.1", port=port,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.monotonic() + 10
        while not server.started and time.monotonic() < deadline:
            time.sleep(0.02)
        out = tmp_path / "local"
        code = main(["fuzz", "--endpoint", echo_testbed.endpoint, "--batches", "1", "--batch-size", "10",
                     "--output", str(out), "--server", f"http://127.0.0.1:{port}", "--poll", "0.05"])
    finally:
        server.should_exit = True
        thread.join(10)
    assert code == EXIT_OK
    assert (out / "report.json").exists()
    assert "stop reason: max_batches" in capsys.readouterr().out
