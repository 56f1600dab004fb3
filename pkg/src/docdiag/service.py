"""HTTP service for stepwise human assessment sessions and resolver runs.

Sessions walk an agent through the linearized workflow; infer-step payloads
never contain document content (the client blanks the document pane, the
server simply does not send it). Runs execute asynchronously on a worker
pool and are polled by id. Analyses are served from artifacts written by the
CLI into the store's analyses directory.

Authentication is a bearer token per agent pseudonym; a research-tool setup,
not a production one.
"""
from __future__ import annotations

import json
import threading
import time
import traceback
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from .engine import manifest_from_dict, run_from_manifest
from .store import (
    Answer,
    DocumentStore,
    ExecutionMode,
    Highlight,
    StoreError,
    answer_to_dict,
    record_to_dict,
)
from .workflow import StepKind, Workflow, linearize

HIDDEN_KINDS = (StepKind.INFER, StepKind.INFER_KNOWLEDGE)

ANALYSIS_KINDS = ("ace", "counterfactual", "variability", "agreement", "report")


class SessionCreate(BaseModel):
    workflow: str
    document: str
    execution: str | None = None


class HighlightIn(BaseModel):
    block: str
    start: int
    end: int


class AnswerIn(BaseModel):
    step: str
    text: str = ""
    boolean: bool | None = None
    highlights: list[HighlightIn] = Field(default_factory=list)
    uncertain: bool = False


class RunCreate(BaseModel):
    manifest: dict


@dataclass
class _Session:
    session_id: str
    execution_id: str
    workflow_id: str
    document_id: str
    agent_id: str
    cursor: int

    def as_dict(self) -> dict:
        return {
            "session": self.session_id,
            "execution": self.execution_id,
            "workflow": self.workflow_id,
            "document": self.document_id,
            "agent": self.agent_id,
            "cursor": self.cursor,
        }


class _Runs:
    """Background run registry; statuses persisted so polls survive restarts."""

    def __init__(self, store: DocumentStore):
        self.store = store
        self.dir = store.root / "runs"
        self.dir.mkdir(exist_ok=True)
        self._lock = threading.Lock()

    def _write(self, run_id: str, payload: dict) -> None:
        (self.dir / f"{run_id}.json").write_text(
            json.dumps(payload, sort_keys=True), encoding="utf-8")

    def read(self, run_id: str) -> dict:
        path = self.dir / f"{run_id}.json"
        if not path.exists():
            raise KeyError(run_id)
        return json.loads(path.read_text(encoding="utf-8"))

    def submit(self, manifest_data: dict) -> str:
        manifest = manifest_from_dict(manifest_data)  # validates shape
        self.store.get_workflow(manifest.workflow_id)
        self.store.get_document(manifest.document_id)
        run_id = f"run-{uuid.uuid4().hex[:12]}"
        self._write(run_id, {"run": run_id, "status": "queued",
                             "manifest": manifest_data})

        def work():
            self._write(run_id, {"run": run_id, "status": "running",
                                 "manifest": manifest_data})
            try:
                record = run_from_manifest(manifest, self.store)
                self._write(run_id, {"run": run_id, "status": "done",
                                     "manifest": manifest_data,
                                     "execution": record.execution_id})
            except Exception as exc:  # noqa: BLE001 - reported to the poller
                self._write(run_id, {"run": run_id, "status": "failed",
                                     "manifest": manifest_data,
                                     "error": f"{exc}",
                                     "trace": traceback.format_exc()})

        threading.Thread(target=work, daemon=True).start()
        return run_id


def _session_dir(store: DocumentStore) -> Path:
    path = store.root / "sessions"
    path.mkdir(exist_ok=True)
    return path


def _load_session(store: DocumentStore, session_id: str) -> _Session:
    path = _session_dir(store) / f"{session_id}.json"
    if not path.exists():
        raise HTTPException(404, f"unknown session {session_id}")
    data = json.loads(path.read_text(encoding="utf-8"))
    return _Session(
        session_id=data["session"], execution_id=data["execution"],
        workflow_id=data["workflow"], document_id=data["document"],
        agent_id=data["agent"], cursor=int(data["cursor"]))


def _save_session(store: DocumentStore, session: _Session) -> None:
    (_session_dir(store) / f"{session.session_id}.json").write_text(
        json.dumps(session.as_dict(), sort_keys=True), encoding="utf-8")


def create_app(store: DocumentStore,
               tokens: Mapping[str, str] | None = None,
               read_sections: Mapping[str, Mapping[str, str]] | None = None) -> FastAPI:
    """Build the service.

    tokens maps bearer token -> agent pseudonym; empty/None disables auth
    (local development). read_sections maps workflow id -> {read step id ->
    section heading} for document pane ranges.
    """
    app = FastAPI(title="docdiag service", version="0.1.0")
    runs = _Runs(store)
    token_map = dict(tokens or {})
    sections_config = {k: dict(v) for k, v in (read_sections or {}).items()}

    def agent_from_auth(authorization: str | None = Header(default=None)) -> str:
        if not token_map:
            return "anonymous"
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "bearer token required")
        token = authorization.removeprefix("Bearer ")
        agent = token_map.get(token)
        if agent is None:
            raise HTTPException(401, "unknown token")
        return agent

    def step_payload(workflow: Workflow, session: _Session) -> dict:
        order = linearize(workflow)
        record = store.get_execution(session.execution_id)
        progress = {"answered": len(record.answers), "total": len(order),
                    "cursor": session.cursor}
        if session.cursor >= len(order):
            return {"session": session.session_id, "complete": True,
                    "progress": progress}
        sid = order[session.cursor]
        step = workflow.step_by_id[sid]
        hide_document = step.kind in HIDDEN_KINDS
        payload = {
            "session": session.session_id,
            "complete": False,
            "progress": progress,
            "step": {
                "id": step.id, "name": step.name, "kind": step.kind.value,
                "prompt": step.prompt, "description": step.description,
                "example": step.example, "schema": step.schema.value,
            },
            "hide_document": hide_document,
            "parents": [],
            "document_blocks": [],
        }
        if step.kind is not StepKind.READ:
            for pid in workflow.parents(sid):
                parent_answer = record.answers.get(pid)
                payload["parents"].append({
                    "step": pid,
                    "name": workflow.step_by_id[pid].name,
                    "text": parent_answer.text if parent_answer else "",
                    "boolean": parent_answer.boolean if parent_answer else None,
                    "stale": parent_answer.stale if parent_answer else False,
                })
        if not hide_document:
            document = store.get_document(session.document_id)
            headings = sections_config.get(session.workflow_id, {})
            blocks = document.blocks
            if step.kind is StepKind.READ and sid in headings \
                    and headings[sid] in document.sections:
                blocks = document.section_blocks(headings[sid])
            payload["document_blocks"] = [
                {"id": b.id, "kind": b.kind.value, "text": b.text,
                 "image": b.image}
                for b in blocks
            ]
        return payload

    @app.post("/sessions")
    def create_session(body: SessionCreate,
                       agent: str = Depends(agent_from_auth)) -> dict:
        try:
            workflow = store.get_workflow(body.workflow)
            if body.execution is not None:
                record = store.get_execution(body.execution)
                if record.agent_id != agent and token_map:
                    raise HTTPException(403, "execution belongs to another agent")
            else:
                record = store.create_execution(
                    body.workflow, body.document, agent, ExecutionMode.HUMAN)
        except StoreError as exc:
            raise HTTPException(404, str(exc)) from exc
        order = linearize(workflow)
        cursor = sum(1 for sid in order if sid in record.answers)
        session = _Session(
            session_id=f"session-{uuid.uuid4().hex[:12]}",
            execution_id=record.execution_id,
            workflow_id=body.workflow,
            document_id=body.document,
            agent_id=agent,
            cursor=cursor,
        )
        _save_session(store, session)
        return {**session.as_dict(), "total_steps": len(order)}

    def owned_session(session_id: str, agent: str) -> _Session:
        session = _load_session(store, session_id)
        if token_map and session.agent_id != agent:
            raise HTTPException(403, "session belongs to another agent")
        return session

    @app.get("/sessions/{session_id}/next")
    def next_step(session_id: str, agent: str = Depends(agent_from_auth)) -> dict:
        session = owned_session(session_id, agent)
        workflow = store.get_workflow(session.workflow_id)
        return step_payload(workflow, session)

    @app.post("/sessions/{session_id}/answers")
    def submit(session_id: str, body: AnswerIn,
               agent: str = Depends(agent_from_auth)) -> dict:
        session = owned_session(session_id, agent)
        workflow = store.get_workflow(session.workflow_id)
        order = linearize(workflow)
        if body.step not in workflow.step_by_id:
            raise HTTPException(404, f"unknown step {body.step}")
        position = order.index(body.step)
        if position > session.cursor:
            raise HTTPException(409, "cannot answer a future step")
        now = time.time()
        answer = Answer(
            step_id=body.step,
            agent_id=session.agent_id,
            text=body.text,
            boolean=body.boolean,
            highlights=tuple(
                Highlight(session.document_id, h.block, h.start, h.end)
                for h in body.highlights),
            uncertain=body.uncertain,
            created=now,
            revised=now,
        )
        try:
            record = store.record_answer(session.execution_id, answer)
        except StoreError as exc:
            raise HTTPException(422, str(exc)) from exc
        if position == session.cursor:
            session.cursor += 1
            _save_session(store, session)
        stale = sorted(sid for sid, a in record.answers.items() if a.stale)
        return {
            "session": session.session_id,
            "cursor": session.cursor,
            "answered": len(record.answers),
            "total": len(order),
            "stale_steps": stale,
            "answer": answer_to_dict(record.answers[body.step]),
        }

    @app.post("/runs")
    def trigger_run(body: RunCreate,
                    agent: str = Depends(agent_from_auth)) -> dict:
        try:
            run_id = runs.submit(body.manifest)
        except (StoreError, KeyError, ValueError) as exc:
            raise HTTPException(422, f"invalid manifest: {exc}") from exc
        return {"run": run_id, "status": "queued"}

    @app.get("/runs/{run_id}")
    def poll_run(run_id: str, agent: str = Depends(agent_from_auth)) -> dict:
        try:
            status = runs.read(run_id)
        except KeyError as exc:
            raise HTTPException(404, f"unknown run {run_id}") from exc
        if status.get("status") == "done" and "execution" in status:
            record = store.get_execution(status["execution"])
            status = {**status, "record": record_to_dict(record)}
        return status

    @app.get("/analyses/{kind}")
    def analysis(kind: str, agent: str = Depends(agent_from_auth)) -> dict:
        if kind not in ANALYSIS_KINDS:
            raise HTTPException(404, f"unknown analysis kind {kind}")
        path = store.root / "analyses" / f"{kind}.json"
        if not path.exists():
            raise HTTPException(404, f"no stored {kind} analysis")
        return json.loads(path.read_text(encoding="utf-8"))

    return app
