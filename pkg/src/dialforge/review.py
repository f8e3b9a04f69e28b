"""HTTP review service: the screening/refinement queue and quality dashboards.

Thin layer over InstructionStore; every mutation goes through the store's
serialized apply_decision, and optimistic concurrency is exposed to clients
via the decision body's expected_state.  Reviewer identity is a plain field,
not authentication: this is a curation-lab tool.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from .errors import IllegalTransitionError, ValidationError
from .evolution import (
    SCREENING_CHECKLIST,
    InstructionStore,
    LifecycleState,
)

logger = logging.getLogger(__name__)


class DecisionBody(BaseModel):
    decision: str
    expected_state: str | None = None
    text: str | None = None
    note: str = ""
    reviewer: str = ""


def latest_report(reports_dir: Path | None) -> dict | None:
    """Most recently published quality report, by file name order."""
    if reports_dir is None or not reports_dir.exists():
        return None
    candidates = sorted(reports_dir.glob("*.json"))
    if not candidates:
        return None
    return json.loads(candidates[-1].read_text(encoding="utf-8"))


def create_app(store: InstructionStore, reports_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="dialforge review service")
    reports_path = Path(reports_dir) if reports_dir else None

    def queue_item(record) -> dict:
        parent_text = None
        if record.parent_id:
            try:
                parent_text = store.get(record.parent_id).text
            except KeyError:
                parent_text = None
        return {
            "record": record.to_record(),
            "parent_text": parent_text,
            "checklist": list(SCREENING_CHECKLIST),
            "enqueue_time": store.state_changed_at(record.id),
        }

    @app.get("/api/queue")
    def list_queue(
        state: str = Query(...),
        page: int = Query(1, ge=1),
        page_size: int = Query(20, ge=1, le=200),
    ):
        try:
            wanted = LifecycleState(state)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown state {state!r}")
        records = store.by_state(wanted)
        records.sort(key=lambda r: (store.state_changed_at(r.id), r.id))
        start = (page - 1) * page_size
        items = [queue_item(r) for r in records[start : start + page_size]]
        return {"items": items, "page": page, "page_size": page_size, "total": len(records)}

    @app.post("/api/records/{record_id}/decision")
    def submit_decision(record_id: str, body: DecisionBody):
        try:
            updated = store.apply_decision(
                record_id,
                body.decision,
                text=body.text,
                note=body.note,
                reviewer=body.reviewer,
                expected_state=body.expected_state,
            )
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown record {record_id!r}")
        except IllegalTransitionError as exc:
            raise HTTPException(
                status_code=409,
                detail={"error": str(exc), "current_state": exc.current_state},
            )
        except (ValidationError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"record": updated.to_record()}

    @app.get("/api/metrics")
    def metrics_snapshot():
        counts = store.state_counts()
        report = latest_report(reports_path)
        summary = None
        if report:
            summary = {
                "dataset_version": report.get("dataset_version"),
                "richness": report.get("richness"),
                "redundancy": report.get("redundancy"),
                "label_quality": report.get("label_quality"),
            }
        return {"state_counts": counts, "total": sum(counts.values()), "latest_report": summary}

    @app.get("/api/reports/latest")
    def reports_latest():
        report = latest_report(reports_path)
        if report is None:
            raise HTTPException(status_code=404, detail="no quality report published")
        return report

    return app


def serve(store_path: str, port: int, reports_dir: str | None = None, audit_path: str | None = None) -> None:
    import uvicorn

    store = InstructionStore(store_path, audit_path=audit_path)
    app = create_app(store, reports_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)
