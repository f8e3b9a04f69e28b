import threading

import pytest
from fastapi.testclient import TestClient

from dialforge.corpus import Scene, TaskType
from dialforge.evolution import InstructionRecord, InstructionStore, LifecycleState
from dialforge.quality import build_report
from dialforge.review import create_app

from test_quality import report_fixture_samples


def record(rid, state=LifecycleState.EVOLVED, parent_id=None):
    return InstructionRecord(
        id=rid, text=f"指令 {rid}", task_type=TaskType.INFORMATION_EXTRACTION,
        scene=Scene.BUY_HOUSE, state=state, parent_id=parent_id,
    )


@pytest.fixture()
def store():
    tick = iter(range(10000))
    s = InstructionStore(clock=lambda: float(next(tick)))
    s.add(record("seed-1", state=LifecycleState.SEED))
    for i in range(5):
        s.add(record(f"ev-{i}", parent_id="seed-1"))
    return s


@pytest.fixture()
def client(store, tmp_path):
    return TestClient(create_app(store, reports_dir=tmp_path / "reports"))


def test_queue_pagination(client):
    resp = client.get("/api/queue", params={"state": "Evolved", "page": 1, "page_size": 2})
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["items"]) == 2
    assert body["total"] == 5
    resp3 = client.get("/api/queue", params={"state": "Evolved", "page": 3, "page_size": 2})
    assert len(resp3.json()["items"]) == 1


def test_queue_empty_for_states_without_records(client):
    resp = client.get("/api/queue", params={"state": "Approved"})
    assert resp.status_code == 200
    assert resp.json()["items"] == [] and resp.json()["total"] == 0


def test_queue_ordering_stable(client):
    a = client.get("/api/queue", params={"state": "Evolved", "page_size": 10}).json()
    b = client.get("/api/queue", params={"state": "Evolved", "page_size": 10}).json()
    ids = [item["record"]["id"] for item in a["items"]]
    assert ids == [item["record"]["id"] for item in b["items"]]
    assert ids == sorted(ids, key=lambda rid: ids.index(rid))  # service order preserved


def test_queue_items_carry_parent_text_and_checklist(client):
    item = client.get("/api/queue", params={"state": "Evolved"}).json()["items"][0]
    assert item["parent_text"] == "指令 seed-1"
    assert len(item["checklist"]) >= 3
    assert "enqueue_time" in item


def test_queue_unknown_state_rejected(client):
    assert client.get("/api/queue", params={"state": "Limbo"}).status_code == 422


def test_decision_keep_advances_record(client):
    resp = client.post(
        "/api/records/ev-0/decision",
        json={"decision": "keep", "expected_state": "Evolved", "reviewer": "alice"},
    )
    assert resp.status_code == 200
    assert resp.json()["record"]["state"] == "ScreenedKept"


def test_decision_on_terminal_state_409(client, store):
    client.post("/api/records/ev-1/decision", json={"decision": "discard", "reviewer": "a"})
    resp = client.post("/api/records/ev-1/decision", json={"decision": "approve", "reviewer": "b"})
    assert resp.status_code == 409
    assert resp.json()["detail"]["current_state"] == "ScreenedDiscarded"


def test_decision_unknown_record_404(client):
    resp = client.post("/api/records/ghost/decision", json={"decision": "keep"})
    assert resp.status_code == 404


def test_refine_requires_text(client):
    client.post("/api/records/ev-2/decision", json={"decision": "keep"})
    resp = client.post("/api/records/ev-2/decision", json={"decision": "refine", "text": ""})
    assert resp.status_code == 422


def test_two_concurrent_keeps_one_wins(client, store):
    codes = []

    def submit(reviewer):
        resp = client.post(
            "/api/records/ev-3/decision",
            json={"decision": "keep", "expected_state": "Evolved", "reviewer": reviewer},
        )
        codes.append(resp.status_code)

    threads = [threading.Thread(target=submit, args=(name,)) for name in ("alice", "bob")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(codes) == [200, 409]
    assert len([e for e in store.audit_log if e.record_id == "ev-3"]) == 1


def test_metrics_counts_sum_to_store_size(client, store):
    client.post("/api/records/ev-0/decision", json={"decision": "keep"})
    body = client.get("/api/metrics").json()
    assert sum(body["state_counts"].values()) == body["total"] == len(store.all())
    assert body["state_counts"]["ScreenedKept"] == 1


def test_metrics_empty_store(tmp_path):
    app = create_app(InstructionStore())
    body = TestClient(app).get("/api/metrics").json()
    assert body["total"] == 0
    assert all(v == 0 for v in body["state_counts"].values())


def test_reports_latest_404_when_unpublished(client):
    assert client.get("/api/reports/latest").status_code == 404


def test_reports_latest_serves_newest_report(store, tmp_path):
    reports = tmp_path / "reports"
    reports.mkdir()
    older = build_report(report_fixture_samples(), dataset_version="v0.5")
    newer = build_report(report_fixture_samples(), dataset_version="v1.0")
    (reports / "report-001.json").write_text(older.to_json(), encoding="utf-8")
    (reports / "report-002.json").write_text(newer.to_json(), encoding="utf-8")
    client = TestClient(create_app(store, reports_dir=reports))
    body = client.get("/api/reports/latest").json()
    assert body["dataset_version"] == "v1.0"
    assert body["richness"] + body["redundancy"] == 1.0
    metrics = client.get("/api/metrics").json()
    assert metrics["latest_report"]["dataset_version"] == "v1.0"
