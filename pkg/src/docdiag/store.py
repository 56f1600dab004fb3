"""Persistence for documents, answers, and workflow executions.

Layout under the store root:

    workflows/<workflow_id>.json
    documents/<doc_id>/document.json
    documents/<doc_id>/executions/<execution_id>.json
    documents/<doc_id>/executions/<execution_id>.revisions.jsonl   (append-only)
    private/pseudonyms.json                                        (never exported)

Writes are serialized per execution; documents and workflows are immutable
once ingested.
"""
from __future__ import annotations

import json
import secrets
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .workflow import (
    AnswerSchema,
    StepKind,
    Workflow,
    descendants,
    load_workflow,
    save_workflow,
    workflow_from_dict,
    workflow_to_dict,
)


class BlockKind(str, Enum):
    PARAGRAPH = "paragraph"
    FIGURE = "figure"
    TABLE = "table"
    HEADING = "heading"


@dataclass(frozen=True)
class Block:
    id: str
    kind: BlockKind
    text: str = ""  # body text, or the caption for figure/table blocks
    image: str | None = None  # relative path to an image payload


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    blocks: tuple[Block, ...]
    #: heading -> (first block id, last block id), both inclusive
    sections: dict[str, tuple[str, str]] = field(default_factory=dict)

    def block(self, block_id: str) -> Block:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(block_id)

    def section_blocks(self, heading: str) -> tuple[Block, ...]:
        first, last = self.sections[heading]
        ids = [b.id for b in self.blocks]
        i, j = ids.index(first), ids.index(last)
        return self.blocks[i:j + 1]

    def text(self) -> str:
        return "\n\n".join(b.text for b in self.blocks if b.text)


@dataclass(frozen=True)
class Highlight:
    document_id: str
    block_id: str
    start: int
    end: int  # half-open


@dataclass(frozen=True)
class Answer:
    step_id: str
    agent_id: str
    text: str
    boolean: bool | None = None  # None = no boolean given
    highlights: tuple[Highlight, ...] = ()
    uncertain: bool = False
    created: float = 0.0
    revised: float = 0.0
    stale: bool = False


class ExecutionMode(str, Enum):
    HUMAN = "human"
    PROGRAM = "program"
    IO = "io"
    ISOLATED = "isolated"
    REPLAY = "replay"


@dataclass
class ExecutionRecord:
    execution_id: str
    workflow_id: str
    document_id: str
    agent_id: str
    mode: ExecutionMode
    answers: dict[str, Answer] = field(default_factory=dict)
    #: per-step failure reasons for steps that could not be resolved
    failures: dict[str, str] = field(default_factory=dict)
    #: for io/replay runs: the human execution that supplied the inputs
    source_execution_id: str | None = None
    source_agent_id: str | None = None


class _Tie:
    def __repr__(self) -> str:
        return "TIE"

    def __bool__(self) -> bool:
        raise TypeError("tie marker has no truth value")


#: Marker returned by majority_label on an exact vote tie.
TIE = _Tie()


class StoreError(ValueError):
    pass


# ---------------------------------------------------------------------------
# (de)serialization

def _highlight_to_dict(h: Highlight) -> dict:
    return {"document": h.document_id, "block": h.block_id,
            "start": h.start, "end": h.end}


def _highlight_from_dict(d: dict) -> Highlight:
    return Highlight(d["document"], d["block"], int(d["start"]), int(d["end"]))


def answer_to_dict(a: Answer) -> dict:
    return {
        "step": a.step_id,
        "agent": a.agent_id,
        "text": a.text,
        "boolean": a.boolean,
        "highlights": [_highlight_to_dict(h) for h in a.highlights],
        "uncertain": a.uncertain,
        "created": a.created,
        "revised": a.revised,
        "stale": a.stale,
    }


def answer_from_dict(d: dict) -> Answer:
    return Answer(
        step_id=d["step"],
        agent_id=d["agent"],
        text=d.get("text", ""),
        boolean=d.get("boolean"),
        highlights=tuple(_highlight_from_dict(h) for h in d.get("highlights", [])),
        uncertain=bool(d.get("uncertain", False)),
        created=float(d.get("created", 0.0)),
        revised=float(d.get("revised", 0.0)),
        stale=bool(d.get("stale", False)),
    )


def record_to_dict(r: ExecutionRecord) -> dict:
    out = {
        "execution": r.execution_id,
        "workflow": r.workflow_id,
        "document": r.document_id,
        "agent": r.agent_id,
        "mode": r.mode.value,
        "answers": {sid: answer_to_dict(a) for sid, a in sorted(r.answers.items())},
        "failures": dict(sorted(r.failures.items())),
    }
    if r.source_execution_id is not None:
        out["source_execution"] = r.source_execution_id
    if r.source_agent_id is not None:
        out["source_agent"] = r.source_agent_id
    return out


def record_from_dict(d: dict) -> ExecutionRecord:
    return ExecutionRecord(
        execution_id=d["execution"],
        workflow_id=d["workflow"],
        document_id=d["document"],
        agent_id=d["agent"],
        mode=ExecutionMode(d["mode"]),
        answers={sid: answer_from_dict(a) for sid, a in d.get("answers", {}).items()},
        failures=dict(d.get("failures", {})),
        source_execution_id=d.get("source_execution"),
        source_agent_id=d.get("source_agent"),
    )


def document_to_dict(doc: Document) -> dict:
    return {
        "id": doc.id,
        "title": doc.title,
        "blocks": [
            {"id": b.id, "kind": b.kind.value, "text": b.text,
             **({"image": b.image} if b.image else {})}
            for b in doc.blocks
        ],
        "sections": {h: list(rng) for h, rng in doc.sections.items()},
    }


def document_from_dict(data: dict) -> Document:
    try:
        blocks = tuple(
            Block(id=raw["id"], kind=BlockKind(raw["kind"]),
                  text=raw.get("text", ""), image=raw.get("image"))
            for raw in data["blocks"]
        )
        doc = Document(
            id=data["id"],
            title=data.get("title", data["id"]),
            blocks=blocks,
            sections={h: (rng[0], rng[1]) for h, rng in data.get("sections", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed document file: {exc}") from exc
    ids = [b.id for b in doc.blocks]
    if len(set(ids)) != len(ids):
        raise StoreError("document block ids are not unique")
    for b in doc.blocks:
        if b.kind in (BlockKind.FIGURE, BlockKind.TABLE) and not b.text.strip():
            raise StoreError(f"{b.kind.value} block {b.id} has no caption")
    for heading, (first, last) in doc.sections.items():
        if first not in ids or last not in ids or ids.index(first) > ids.index(last):
            raise StoreError(f"section {heading!r} has an invalid block range")
    return doc


def validate_answer(answer: Answer, workflow: Workflow,
                    document: Document | None = None) -> None:
    step = workflow.step_by_id.get(answer.step_id)
    if step is None:
        raise StoreError(f"unknown step {answer.step_id}")
    if answer.boolean is not None and step.schema is not AnswerSchema.BOOLEAN_WITH_TEXT:
        raise StoreError(f"step {step.id} does not take a boolean answer")
    if answer.highlights and not (
            step.schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS
            or step.kind is StepKind.EXTRACT):
        raise StoreError(f"step {step.id} does not take highlights")
    if document is not None:
        for h in answer.highlights:
            block = document.block(h.block_id)
            if not (0 <= h.start < h.end <= len(block.text)):
                raise StoreError(
                    f"highlight span {h.start}..{h.end} outside block {h.block_id}")


# ---------------------------------------------------------------------------
# the store

class DocumentStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "documents").mkdir(parents=True, exist_ok=True)
        (self.root / "workflows").mkdir(exist_ok=True)
        (self.root / "private").mkdir(exist_ok=True)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._global_lock = threading.Lock()

    def _lock_for(self, execution_id: str) -> threading.Lock:
        with self._global_lock:
            return self._locks[execution_id]

    # -- workflows ----------------------------------------------------------

    def put_workflow(self, workflow: Workflow) -> None:
        save_workflow(workflow, self.root / "workflows" / f"{workflow.id}.json")

    def get_workflow(self, workflow_id: str) -> Workflow:
        path = self.root / "workflows" / f"{workflow_id}.json"
        if not path.exists():
            raise StoreError(f"unknown workflow {workflow_id}")
        return load_workflow(path)

    # -- documents ----------------------------------------------------------

    def _doc_dir(self, doc_id: str) -> Path:
        return self.root / "documents" / doc_id

    def ingest_document(self, source: str | Path | dict) -> Document:
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8") as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise StoreError(f"malformed document file: {exc}") from exc
        else:
            data = source
        doc = document_from_dict(data)
        target = self._doc_dir(doc.id) / "document.json"
        payload = json.dumps(document_to_dict(doc), indent=2, sort_keys=True)
        if target.exists():
            if target.read_text(encoding="utf-8") == payload:
                return doc  # idempotent re-ingest
            raise StoreError(f"document {doc.id} already exists with different content")
        target.parent.mkdir(parents=True, exist_ok=True)
        (target.parent / "executions").mkdir(exist_ok=True)
        target.write_text(payload, encoding="utf-8")
        return doc

    def get_document(self, doc_id: str) -> Document:
        path = self._doc_dir(doc_id) / "document.json"
        if not path.exists():
            raise StoreError(f"unknown document {doc_id}")
        with open(path, encoding="utf-8") as fh:
            return document_from_dict(json.load(fh))

    def list_documents(self) -> list[str]:
        return sorted(p.name for p in (self.root / "documents").iterdir() if p.is_dir())

    # -- executions ---------------------------------------------------------

    def _execution_path(self, doc_id: str, execution_id: str) -> Path:
        return self._doc_dir(doc_id) / "executions" / f"{execution_id}.json"

    def _find_execution_path(self, execution_id: str) -> Path:
        for doc_dir in (self.root / "documents").iterdir():
            candidate = doc_dir / "executions" / f"{execution_id}.json"
            if candidate.exists():
                return candidate
        raise StoreError(f"unknown execution {execution_id}")

    def create_execution(self, workflow_id: str, document_id: str, agent_id: str,
                         mode: ExecutionMode = ExecutionMode.HUMAN,
                         execution_id: str | None = None) -> ExecutionRecord:
        self.get_workflow(workflow_id)
        self.get_document(document_id)
        execution_id = execution_id or f"exec-{secrets.token_hex(6)}"
        record = ExecutionRecord(execution_id, workflow_id, document_id, agent_id, mode)
        self.put_execution(record)
        return record

    def put_execution(self, record: ExecutionRecord) -> None:
        path = self._execution_path(record.document_id, record.execution_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock_for(record.execution_id):
            path.write_text(
                json.dumps(record_to_dict(record), indent=2, sort_keys=True),
                encoding="utf-8")

    def get_execution(self, execution_id: str) -> ExecutionRecord:
        path = self._find_execution_path(execution_id)
        with open(path, encoding="utf-8") as fh:
            return record_from_dict(json.load(fh))

    def list_executions(self, document_id: str | None = None) -> list[str]:
        if document_id is not None:
            doc_dirs = [self._doc_dir(document_id)]
        else:
            doc_dirs = list((self.root / "documents").iterdir())
        out = []
        for doc_dir in doc_dirs:
            ex_dir = doc_dir / "executions"
            if ex_dir.is_dir():
                out.extend(p.stem for p in ex_dir.glob("*.json")
                           if not p.name.endswith(".revisions.jsonl"))
        return sorted(out)

    def _append_revision(self, record: ExecutionRecord, entry: dict) -> None:
        path = self._execution_path(record.document_id, record.execution_id)
        log = path.with_suffix(".revisions.jsonl")
        with open(log, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def record_answer(self, execution_id: str, answer: Answer) -> ExecutionRecord:
        """Store one answer; revising a step flags all its answered descendants stale."""
        with self._lock_for(execution_id):
            record = self.get_execution(execution_id)
            workflow = self.get_workflow(record.workflow_id)
            document = self.get_document(record.document_id)
            validate_answer(answer, workflow, document)

            is_revision = answer.step_id in record.answers
            if not is_revision:
                unanswered = [p for p in workflow.parents(answer.step_id)
                              if p not in record.answers]
                if unanswered:
                    raise StoreError(
                        f"step {answer.step_id} has unanswered parents: {unanswered}")
                record.answers[answer.step_id] = answer
                stale_marked: list[str] = []
            else:
                previous = record.answers[answer.step_id]
                record.answers[answer.step_id] = replace(
                    answer, created=previous.created, stale=False)
                stale_marked = []
                for sid in sorted(descendants(workflow, answer.step_id)):
                    if sid in record.answers and not record.answers[sid].stale:
                        record.answers[sid] = replace(record.answers[sid], stale=True)
                        stale_marked.append(sid)

            path = self._execution_path(record.document_id, record.execution_id)
            path.write_text(
                json.dumps(record_to_dict(record), indent=2, sort_keys=True),
                encoding="utf-8")
            self._append_revision(record, {
                "step": answer.step_id,
                "action": "revise" if is_revision else "answer",
                "at": answer.revised,
                "stale_marked": stale_marked,
            })
            return record

    # -- derived views ------------------------------------------------------

    def answers_for(self, document_id: str, step_id: str,
                    modes: Iterable[ExecutionMode] = (ExecutionMode.HUMAN,),
                    include_uncertain: bool = True) -> list[Answer]:
        wanted = set(modes)
        out = []
        for exec_id in self.list_executions(document_id):
            record = self.get_execution(exec_id)
            if record.mode not in wanted:
                continue
            answer = record.answers.get(step_id)
            if answer is None:
                continue
            if not include_uncertain and answer.uncertain:
                continue
            out.append(answer)
        return out

    def majority_label(self, document_id: str, step_id: str,
                       include_uncertain: bool = True):
        """Strict majority of the non-absent booleans; TIE on an exact tie."""
        votes = [a.boolean for a in self.answers_for(
            document_id, step_id, include_uncertain=include_uncertain)
            if a.boolean is not None]
        if not votes:
            raise StoreError(f"no boolean answers for {document_id}/{step_id}")
        yes = sum(1 for v in votes if v)
        no = len(votes) - yes
        if yes == no:
            return TIE
        return yes > no

    def redundancy_index(self, document_id: str) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for exec_id in self.list_executions(document_id):
            record = self.get_execution(exec_id)
            for sid in record.answers:
                counts[sid] += 1
        return dict(counts)

    # -- pseudonyms ---------------------------------------------------------

    @property
    def _pseudonym_path(self) -> Path:
        return self.root / "private" / "pseudonyms.json"

    def _load_pseudonyms(self) -> dict[str, str]:
        if self._pseudonym_path.exists():
            with open(self._pseudonym_path, encoding="utf-8") as fh:
                return json.load(fh)
        return {}

    def pseudonym_for(self, identity: str) -> str:
        """Stable random pseudonym; the mapping stays in the private store."""
        with self._global_lock:
            mapping = self._load_pseudonyms()
            if identity not in mapping:
                existing = set(mapping.values())
                while True:
                    candidate = f"agent-{secrets.token_hex(4)}"
                    if candidate not in existing:
                        break
                mapping[identity] = candidate
                self._pseudonym_path.write_text(
                    json.dumps(mapping, indent=2, sort_keys=True), encoding="utf-8")
            return mapping[identity]

    # -- export / import ----------------------------------------------------

    def export_answer_lines(self, document_id: str | None = None) -> Iterator[str]:
        """JSON-lines export, one answer per line. Contains pseudonyms only."""
        for exec_id in self.list_executions(document_id):
            record = self.get_execution(exec_id)
            for sid in sorted(record.answers):
                a = record.answers[sid]
                line = {
                    "execution": record.execution_id,
                    "workflow": record.workflow_id,
                    "document": record.document_id,
                    "mode": record.mode.value,
                    "step": sid,
                    "agent": a.agent_id,
                    "text": a.text,
                    "boolean": a.boolean,
                    "highlights": [_highlight_to_dict(h) for h in a.highlights],
                    "uncertain": a.uncertain,
                    "stale": a.stale,
                }
                yield json.dumps(line, sort_keys=True)

    def import_answer_lines(self, lines: Iterable[str],
                            mode: ExecutionMode = ExecutionMode.HUMAN) -> list[str]:
        """Ingest an exported answer dump (the documented dataset adapter).

        Groups lines by execution id and writes whole records; parent order is
        not re-checked because dumps may interleave steps arbitrarily.
        """
        records: dict[str, ExecutionRecord] = {}
        for line in lines:
            if not line.strip():
                continue
            d = json.loads(line)
            exec_id = d["execution"]
            if exec_id not in records:
                records[exec_id] = ExecutionRecord(
                    execution_id=exec_id,
                    workflow_id=d.get("workflow", "unknown"),
                    document_id=d["document"],
                    agent_id=d["agent"],
                    mode=ExecutionMode(d.get("mode", mode.value)),
                )
            records[exec_id].answers[d["step"]] = Answer(
                step_id=d["step"],
                agent_id=d["agent"],
                text=d.get("text", ""),
                boolean=d.get("boolean"),
                highlights=tuple(_highlight_from_dict(h)
                                 for h in d.get("highlights", [])),
                uncertain=bool(d.get("uncertain", False)),
                stale=bool(d.get("stale", False)),
            )
        for record in records.values():
            self.put_execution(record)
        return sorted(records)


def answer_boolean(answer: Answer) -> bool | None:
    """Boolean view of an answer: the explicit flag, else a yes/no text lead.

    Steps without a boolean slot (e.g. extract steps whitelisted into the
    decision graph) often answer "Yes. ..."/"No. ..." in text.
    """
    if answer.boolean is not None:
        return answer.boolean
    lead = answer.text.strip().lower()
    for prefix, value in (("yes", True), ("no", False)):
        if lead.startswith(prefix) and (len(lead) == len(prefix)
                                        or not lead[len(prefix)].isalpha()):
            return value
    return None
