"""Workflow execution with pluggable per-step resolvers.

Modes:
  program  - the resolver works through the graph on its own answers
  io       - the resolver answers each step from human parent answers
             (or human-selected excerpts for extract steps)
  isolated - every step answered independently from the full document
  replay   - answers copied verbatim from a stored execution

Steps are scheduled layer by layer; within a layer, resolution may run on a
thread pool, but the record is assembled by the coordinator in a fixed order,
so runs with a deterministic resolver are byte-reproducible.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .store import (
    Answer,
    Block,
    BlockKind,
    Document,
    ExecutionMode,
    ExecutionRecord,
    Highlight,
)
from .workflow import (
    AnswerSchema,
    Step,
    StepKind,
    Workflow,
    layers,
    linearize,
    require_valid,
)

UNAVAILABLE_SENTINEL = "[unavailable: upstream step failed]"


class ResolverFailure(RuntimeError):
    """A resolver could not produce an answer for a step."""


@dataclass(frozen=True)
class ImageAttachment:
    caption: str
    payload_base64: str


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    images: tuple[ImageAttachment, ...] = ()


@dataclass(frozen=True)
class StepInputs:
    """What one step may see, with a provenance tag per input.

    Tags are "document", "resolver", or "human"; the run modes assert
    disjoint tag sets, which is what makes mode isolation checkable.
    """

    step_id: str
    parent_answers: dict[str, str] = field(default_factory=dict)
    content: str = ""
    images: tuple[ImageAttachment, ...] = ()
    provenance: dict[str, str] = field(default_factory=dict)

    def sources(self) -> set[str]:
        return set(self.provenance.values())


class Resolver(Protocol):
    name: str
    supports_images: bool
    deterministic: bool

    def resolve(self, step: Step, bundle: PromptBundle) -> str: ...


# ---------------------------------------------------------------------------
# prompt templates

@dataclass(frozen=True)
class PromptTemplates:
    system: str
    extract: str
    infer: str

    def user_template(self, kind: StepKind) -> str:
        if kind in (StepKind.INFER, StepKind.INFER_KNOWLEDGE):
            return self.infer
        return self.extract


DEFAULT_TEMPLATES = PromptTemplates(
    system="You are an expert assessor working through a document assessment workflow.",
    extract=(
        "This is the document text:\n{parents}\n\n"
        "Based on the document text, answer the following question:\n{task}\n"
        "More specifically, this means: {description}\n\n"
        "Keep your answer concise. Return the answer as a JSON object in the "
        "following format:\n{format}\n\n"
        "Here's an example output for the given question:\n\"{example}\"."
    ),
    infer=(
        "You already gathered the following insights by answering a sequence "
        "of prior questions:\n\nYour insights:\n{parents}\n\n"
        "Based on these prior insights, answer the following question:\n{task}\n"
        "More specifically, this means: {description}\n\n"
        "Keep your answer concise. Return the answer as a JSON object in the "
        "following format:\n{format}\n\n"
        "Here's an example output for the given question:\n\"{example}\"."
    ),
)

_FORMAT_BY_SCHEMA = {
    AnswerSchema.FREE_TEXT: '{"answer": "<your concise answer>"}',
    AnswerSchema.BOOLEAN_WITH_TEXT:
        '{"answer": <true or false>, "explanation": "<your reasoning>"}',
    AnswerSchema.TEXT_WITH_HIGHLIGHTS:
        '{"answer": "<your summary>", "quotes": ["<verbatim sentence from the text>"]}',
}


def render_example(step: Step) -> str:
    """The step's exemplar answer, rendered in the requested output format."""
    example = step.example or "..."
    if step.schema is AnswerSchema.BOOLEAN_WITH_TEXT:
        lead = example.strip().lower()
        value = "false" if lead.startswith("no") else "true"
        return json.dumps({"answer": value == "true", "explanation": example})
    if step.schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS:
        return json.dumps({"answer": example, "quotes": []})
    return json.dumps({"answer": example})


def assemble_prompt(step: Step, inputs: StepInputs,
                    templates: PromptTemplates = DEFAULT_TEMPLATES,
                    parent_order: Sequence[str] = (),
                    parent_names: Mapping[str, str] | None = None) -> PromptBundle:
    """Fill the {parents}/{task}/{description}/{format}/{example} slots."""
    if step.kind in (StepKind.INFER, StepKind.INFER_KNOWLEDGE) and inputs.parent_answers:
        ordered = [p for p in parent_order if p in inputs.parent_answers]
        ordered += [p for p in sorted(inputs.parent_answers) if p not in ordered]
        names = parent_names or {}
        parents_text = "\n".join(
            f"{names.get(p, p)}: {inputs.parent_answers[p]}" for p in ordered)
    else:
        parents_text = inputs.content  # isolated runs feed the whole document
    if not parents_text.strip():
        raise ResolverFailure(f"no input content for step {step.id}")
    user = templates.user_template(step.kind).format(
        parents=parents_text,
        task=step.prompt,
        description=step.description or step.prompt,
        format=_FORMAT_BY_SCHEMA[step.schema],
        example=render_example(step),
    )
    return PromptBundle(system=templates.system, user=user, images=inputs.images)


# ---------------------------------------------------------------------------
# structured output parsing

class AnswerParseError(ValueError):
    pass


def _candidate_objects(raw: str):
    """Yield each balanced {...} span in the text, left to right."""
    depth = 0
    start = None
    in_string = False
    escaped = False
    for i, ch in enumerate(raw):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                yield raw[start:i + 1]
                start = None


def match_quotes(document: Document, quotes: Sequence[str]) -> tuple[Highlight, ...]:
    """Exact-substring matches of quoted sentences onto document blocks."""
    out = []
    for quote in quotes:
        needle = quote.strip()
        if not needle:
            continue
        for block in document.blocks:
            pos = block.text.find(needle)
            if pos >= 0:
                out.append(Highlight(document.id, block.id, pos, pos + len(needle)))
                break
    return tuple(out)


def parse_answer(raw: str, schema: AnswerSchema, step_id: str, agent_id: str,
                 document: Document | None = None) -> Answer:
    """Extract the first well-formed object matching the schema; prose around
    it is discarded and unknown fields are ignored."""
    for candidate in _candidate_objects(raw):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or "answer" not in obj:
            continue
        answer = obj["answer"]
        if schema is AnswerSchema.BOOLEAN_WITH_TEXT:
            if not isinstance(answer, bool):
                continue
            text = obj.get("explanation", obj.get("text", ""))
            if not isinstance(text, str):
                continue
            return Answer(step_id=step_id, agent_id=agent_id, text=text,
                          boolean=answer)
        if not isinstance(answer, str):
            continue
        if schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS:
            quotes = obj.get("quotes", [])
            if not isinstance(quotes, list):
                quotes = []
            highlights = match_quotes(document, [q for q in quotes
                                                 if isinstance(q, str)]) \
                if document is not None else ()
            return Answer(step_id=step_id, agent_id=agent_id, text=answer,
                          highlights=highlights)
        return Answer(step_id=step_id, agent_id=agent_id, text=answer)
    raise AnswerParseError(f"no parsable object for step {step_id}")


FORMAT_REMINDER = ("\n\nReminder: respond with exactly one JSON object in the "
                   "requested format and nothing else.")


def resolve_with_retries(resolver: Resolver, step: Step, bundle: PromptBundle,
                         max_retries: int, agent_id: str,
                         document: Document | None = None) -> Answer:
    last_error: Exception | None = None
    prompt = bundle
    for attempt in range(max_retries):
        try:
            raw = resolver.resolve(step, prompt)
            return parse_answer(raw, step.schema, step.id, agent_id, document)
        except AnswerParseError as exc:
            last_error = exc
            prompt = PromptBundle(system=bundle.system,
                                  user=bundle.user + FORMAT_REMINDER,
                                  images=bundle.images)
        except ResolverFailure as exc:
            last_error = exc
    raise ResolverFailure(
        f"step {step.id} failed after {max_retries} attempts: {last_error}")


# ---------------------------------------------------------------------------
# bundled resolvers

class ScriptedResolver:
    """Deterministic resolver backed by a mapping or a callable; for tests
    and probes."""

    def __init__(self, script: Mapping[str, str] | Callable[[Step, PromptBundle], str],
                 name: str = "scripted", supports_images: bool = False):
        self._script = script
        self.name = name
        self.supports_images = supports_images
        self.deterministic = True

    def resolve(self, step: Step, bundle: PromptBundle) -> str:
        if callable(self._script):
            return self._script(step, bundle)
        try:
            return self._script[step.id]
        except KeyError as exc:
            raise ResolverFailure(f"no scripted output for {step.id}") from exc


class EchoResolver:
    """Answers with a digest of the exact prompt it saw.

    Any change in an upstream input changes the digest of every downstream
    step, which makes error propagation observable.
    """

    name = "echo"
    supports_images = False
    deterministic = True

    def resolve(self, step: Step, bundle: PromptBundle) -> str:
        digest = hashlib.sha256(
            (bundle.system + "\x00" + bundle.user).encode("utf-8")).hexdigest()
        text = f"echo[{step.id}]:{digest[:16]}"
        if step.schema is AnswerSchema.BOOLEAN_WITH_TEXT:
            return json.dumps({"answer": int(digest[0], 16) % 2 == 0,
                               "explanation": text})
        if step.schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS:
            return json.dumps({"answer": text, "quotes": []})
        return json.dumps({"answer": text})


class ReplayResolver:
    """Replays a stored execution; answers are copied, never re-generated."""

    supports_images = True
    deterministic = True

    def __init__(self, source: ExecutionRecord):
        self.source = source
        self.name = f"replay:{source.execution_id}"

    def resolve(self, step: Step, bundle: PromptBundle) -> str:
        raise ResolverFailure("replay resolver does not generate answers")

    def replay_answer(self, step_id: str) -> Answer | None:
        return self.source.answers.get(step_id)


@dataclass(frozen=True)
class HttpResolverConfig:
    endpoint: str
    model: str
    credential_env: str = ""
    supports_images: bool = False
    max_new_tokens: int = 2048
    temperature: float = 0.0001
    top_p: float = 0.95
    repetition_penalty: float = 1.15
    timeout: float = 120.0

    def config_hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class HttpChatResolver:
    """Chat-style resolver over HTTP with role-tagged messages."""

    deterministic = False

    def __init__(self, config: HttpResolverConfig,
                 client: httpx.Client | None = None):
        self.config = config
        self.name = f"http:{config.model}"
        self.supports_images = config.supports_images
        self._client = client or httpx.Client(timeout=config.timeout)

    def resolve(self, step: Step, bundle: PromptBundle) -> str:
        messages = [{"role": "system", "content": bundle.system},
                    {"role": "user", "content": bundle.user}]
        for image in bundle.images:
            messages.append({"role": "user", "content": image.caption})
            messages.append({"role": "user",
                             "content": {"image_base64": image.payload_base64}})
        headers = {}
        if self.config.credential_env:
            token = os.environ.get(self.config.credential_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": messages,
            "max_tokens": self.config.max_new_tokens,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "repetition_penalty": self.config.repetition_penalty,
        }
        try:
            response = self._client.post(self.config.endpoint, json=body,
                                         headers=headers)
            response.raise_for_status()
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ResolverFailure(f"http resolver failed: {exc}") from exc


# ---------------------------------------------------------------------------
# document rendering

def _render_block(block: Block, with_images: bool) -> str:
    if block.kind in (BlockKind.FIGURE, BlockKind.TABLE):
        label = block.kind.value.capitalize()
        return f"[{label}] {block.text}"
    return block.text


def read_step_blocks(workflow: Workflow, document: Document, step_id: str,
                     read_sections: Mapping[str, str]) -> tuple[Block, ...]:
    heading = read_sections.get(step_id)
    if heading is not None and heading in document.sections:
        return document.section_blocks(heading)
    return document.blocks


def render_read_content(blocks: Sequence[Block]) -> str:
    return "\n\n".join(_render_block(b, with_images=False) for b in blocks
                       if b.text)


def image_attachments(blocks: Sequence[Block]) -> tuple[ImageAttachment, ...]:
    out = []
    for b in blocks:
        if b.kind in (BlockKind.FIGURE, BlockKind.TABLE) and b.image:
            out.append(ImageAttachment(caption=b.text, payload_base64=b.image))
    return tuple(out)


def figure_dependent_steps(workflow: Workflow, document: Document,
                           read_sections: Mapping[str, str]) -> set[str]:
    """Extract steps whose reading range contains figure or table blocks."""
    out = set()
    for step in workflow.steps:
        if step.kind is not StepKind.EXTRACT:
            continue
        read_parents = [p for p in workflow.parents(step.id)
                        if workflow.step_by_id[p].kind is StepKind.READ]
        for parent in read_parents:
            blocks = read_step_blocks(workflow, document, parent, read_sections)
            if any(b.kind in (BlockKind.FIGURE, BlockKind.TABLE) for b in blocks):
                out.add(step.id)
                break
    return out


# ---------------------------------------------------------------------------
# the engine

@dataclass
class EngineConfig:
    parallelism: int = 4
    max_retries: int = 3
    #: read step id -> document section heading; absent means the whole document
    read_sections: dict[str, str] = field(default_factory=dict)
    #: steps skipped in io mode (e.g. figure/table-based extract steps)
    exclude_steps: frozenset = frozenset()
    #: text overrides applied after resolution; error-propagation probes
    answer_overrides: dict[str, str] = field(default_factory=dict)
    seed: int = 0


_MODE_ALLOWED_SOURCES = {
    ExecutionMode.PROGRAM: {"document", "resolver"},
    ExecutionMode.IO: {"document", "human"},
    ExecutionMode.ISOLATED: {"document"},
}


def _check_provenance(mode: ExecutionMode, inputs: StepInputs) -> None:
    allowed = _MODE_ALLOWED_SOURCES[mode]
    illegal = inputs.sources() - allowed
    if illegal:
        raise AssertionError(
            f"mode {mode.value} leaked inputs from {sorted(illegal)} "
            f"into step {inputs.step_id}")


def _execution_id(mode: ExecutionMode, workflow: Workflow, document: Document,
                  resolver: Resolver, seed: int) -> str:
    digest = hashlib.sha256(
        f"{mode.value}|{workflow.id}|{document.id}|{resolver.name}|{seed}"
        .encode("utf-8")).hexdigest()[:12]
    return f"{mode.value}-{digest}"


class WorkflowEngine:
    def __init__(self, workflow: Workflow, document: Document,
                 config: EngineConfig | None = None,
                 templates: PromptTemplates = DEFAULT_TEMPLATES):
        require_valid(workflow)
        self.workflow = workflow
        self.document = document
        self.config = config or EngineConfig()
        self.templates = templates
        self.order = linearize(workflow)
        self.ticks = {sid: float(i) for i, sid in enumerate(self.order)}
        self.layers = layers(workflow)
        self.names = {s.id: s.name for s in workflow.steps}

    # -- shared plumbing -----------------------------------------------------

    def _finalize(self, answer: Answer, step_id: str) -> Answer:
        override = self.config.answer_overrides.get(step_id)
        tick = self.ticks[step_id]
        updates = {"created": tick, "revised": tick}
        if override is not None:
            updates["text"] = override
        return dc_replace(answer, **updates)

    def _read_answer(self, step_id: str, agent: str) -> tuple[Answer, StepInputs]:
        blocks = read_step_blocks(self.workflow, self.document, step_id,
                                  self.config.read_sections)
        content = render_read_content(blocks)
        inputs = StepInputs(step_id=step_id, content=content,
                            provenance={"content": "document"})
        answer = Answer(step_id=step_id, agent_id=agent, text=content)
        return answer, inputs

    def _resolve_step(self, step: Step, inputs: StepInputs, mode: ExecutionMode,
                      resolver: Resolver, agent: str) -> Answer:
        _check_provenance(mode, inputs)
        bundle = assemble_prompt(step, inputs, self.templates,
                                 parent_order=self.order,
                                 parent_names=self.names)
        if not resolver.supports_images and bundle.images:
            bundle = PromptBundle(system=bundle.system, user=bundle.user, images=())
        return resolve_with_retries(resolver, step, bundle,
                                    self.config.max_retries, agent,
                                    self.document)

    def _run_layered(self, mode: ExecutionMode, resolver: Resolver,
                     build_inputs, trace: dict | None) -> ExecutionRecord:
        agent = resolver.name
        record = ExecutionRecord(
            execution_id=_execution_id(mode, self.workflow, self.document,
                                       resolver, self.config.seed),
            workflow_id=self.workflow.id,
            document_id=self.document.id,
            agent_id=agent,
            mode=mode,
        )
        for layer in self.layers:
            tasks = []
            for sid in sorted(layer, key=self.order.index):
                step = self.workflow.step_by_id[sid]
                task = build_inputs(step, record)
                if task is None:
                    continue
                tasks.append((step, task))

            def run_one(step_and_inputs):
                step, inputs = step_and_inputs
                if inputs == "read":
                    answer, read_inputs = self._read_answer(step.id, agent)
                    return step.id, answer, read_inputs, None
                try:
                    answer = self._resolve_step(step, inputs, mode, resolver, agent)
                    return step.id, answer, inputs, None
                except ResolverFailure as exc:
                    return step.id, None, inputs, str(exc)

            if self.config.parallelism > 1 and len(tasks) > 1:
                with ThreadPoolExecutor(self.config.parallelism) as pool:
                    results = list(pool.map(run_one, tasks))
            else:
                results = [run_one(t) for t in tasks]

            for sid, answer, inputs, failure in results:
                if trace is not None:
                    trace[sid] = inputs
                if failure is not None:
                    record.failures[sid] = failure
                else:
                    record.answers[sid] = self._finalize(answer, sid)
        return record

    def _parent_text(self, record: ExecutionRecord, parent_id: str) -> str:
        if parent_id in record.failures:
            return UNAVAILABLE_SENTINEL
        answer = record.answers.get(parent_id)
        return answer.text if answer is not None else UNAVAILABLE_SENTINEL

    # -- modes ---------------------------------------------------------------

    def run_program(self, resolver: Resolver,
                    trace: dict | None = None) -> ExecutionRecord:
        """Resolver-only graph execution; inputs are its own prior answers."""
        if isinstance(resolver, ReplayResolver):
            return self.run_replay(resolver)

        def build_inputs(step: Step, record: ExecutionRecord):
            if step.kind is StepKind.READ:
                return "read"
            if step.kind is StepKind.EXTRACT:
                read_parents = [p for p in self.workflow.parents(step.id)
                                if self.workflow.step_by_id[p].kind is StepKind.READ]
                content_parts = [self._parent_text(record, p) for p in read_parents]
                provenance = {f"content:{p}": "resolver" for p in read_parents}
                blocks = []
                for p in read_parents:
                    blocks.extend(read_step_blocks(
                        self.workflow, self.document, p, self.config.read_sections))
                images = image_attachments(blocks) if resolver.supports_images else ()
                for attachment in images:
                    provenance[f"image:{attachment.caption[:24]}"] = "document"
                if not read_parents:
                    content_parts = [render_read_content(self.document.blocks)]
                    provenance["content"] = "document"
                return StepInputs(step_id=step.id,
                                  content="\n\n".join(content_parts),
                                  images=images, provenance=provenance)
            parent_answers = {p: self._parent_text(record, p)
                              for p in self.workflow.parents(step.id)}
            return StepInputs(
                step_id=step.id, parent_answers=parent_answers,
                provenance={f"parent:{p}": "resolver" for p in parent_answers})

        return self._run_layered(ExecutionMode.PROGRAM, resolver, build_inputs, trace)

    def run_io(self, resolver: Resolver, human: ExecutionRecord,
               trace: dict | None = None) -> ExecutionRecord:
        """Human-in-the-loop simulation: parents come from a human execution."""
        skipped: dict[str, str] = {}

        def human_excerpts(step: Step) -> str:
            answer = human.answers.get(step.id)
            if answer is None or not answer.highlights:
                return ""
            parts = []
            for h in answer.highlights:
                try:
                    block = self.document.block(h.block_id)
                except KeyError:
                    continue
                parts.append(block.text[h.start:h.end])
            return "\n".join(p for p in parts if p)

        def build_inputs(step: Step, record: ExecutionRecord):
            if step.kind is StepKind.READ:
                return None  # reading is the human's job in this condition
            if step.id in self.config.exclude_steps:
                skipped[step.id] = "excluded: figure/table-based step"
                return None
            if step.kind is StepKind.EXTRACT:
                excerpts = human_excerpts(step)
                if not excerpts:
                    skipped[step.id] = "no human-selected excerpts"
                    return None
                return StepInputs(step_id=step.id, content=excerpts,
                                  provenance={"content": "human"})
            parents = self.workflow.parents(step.id)
            missing = [p for p in parents if p not in human.answers]
            if missing:
                skipped[step.id] = f"missing human parent answers: {missing}"
                return None
            parent_answers = {p: human.answers[p].text for p in parents}
            return StepInputs(
                step_id=step.id, parent_answers=parent_answers,
                provenance={f"parent:{p}": "human" for p in parents})

        record = self._run_layered(ExecutionMode.IO, resolver, build_inputs, trace)
        record.failures.update(skipped)
        record.source_execution_id = human.execution_id
        record.source_agent_id = human.agent_id
        source_digest = hashlib.sha256(
            human.execution_id.encode("utf-8")).hexdigest()[:6]
        record.execution_id = f"{record.execution_id}-{source_digest}"
        return record

    def run_isolated(self, resolver: Resolver,
                     trace: dict | None = None) -> ExecutionRecord:
        """Graph-free condition: every step sees only the full document."""
        full_text = render_read_content(self.document.blocks)

        def build_inputs(step: Step, record: ExecutionRecord):
            if step.kind is StepKind.READ:
                return "read"
            return StepInputs(step_id=step.id, content=full_text,
                              provenance={"content": "document"})

        return self._run_layered(ExecutionMode.ISOLATED, resolver, build_inputs,
                                 trace)

    def run_replay(self, resolver: ReplayResolver) -> ExecutionRecord:
        record = ExecutionRecord(
            execution_id=_execution_id(ExecutionMode.REPLAY, self.workflow,
                                       self.document, resolver, self.config.seed),
            workflow_id=self.workflow.id,
            document_id=self.document.id,
            agent_id=resolver.name,
            mode=ExecutionMode.REPLAY,
            source_execution_id=resolver.source.execution_id,
            source_agent_id=resolver.source.agent_id,
        )
        for sid in self.order:
            answer = resolver.replay_answer(sid)
            if answer is not None:
                record.answers[sid] = answer
        return record


# ---------------------------------------------------------------------------
# run manifests

@dataclass(frozen=True)
class RunManifest:
    mode: ExecutionMode
    workflow_id: str
    document_id: str
    resolver: dict
    seed: int = 0
    source_execution_id: str | None = None
    exclude_figure_steps: bool = False
    read_sections: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "workflow": self.workflow_id,
            "document": self.document_id,
            "resolver": dict(self.resolver),
            "resolver_hash": hashlib.sha256(
                json.dumps(self.resolver, sort_keys=True).encode()).hexdigest()[:16],
            "seed": self.seed,
            "source_execution": self.source_execution_id,
            "exclude_figure_steps": self.exclude_figure_steps,
            "read_sections": dict(self.read_sections),
        }


def manifest_from_dict(data: dict) -> RunManifest:
    return RunManifest(
        mode=ExecutionMode(data["mode"]),
        workflow_id=data["workflow"],
        document_id=data["document"],
        resolver=dict(data.get("resolver", {})),
        seed=int(data.get("seed", 0)),
        source_execution_id=data.get("source_execution"),
        exclude_figure_steps=bool(data.get("exclude_figure_steps", False)),
        read_sections=dict(data.get("read_sections", {})),
    )


def build_resolver(spec: Mapping, store=None) -> Resolver:
    """Resolver factory for manifests: kind in {echo, scripted, replay, http}."""
    kind = spec.get("kind", "echo")
    if kind == "echo":
        return EchoResolver()
    if kind == "scripted":
        return ScriptedResolver(dict(spec.get("script", {})))
    if kind == "replay":
        if store is None:
            raise ValueError("replay resolver needs a store")
        return ReplayResolver(store.get_execution(spec["source_execution"]))
    if kind == "http":
        config = HttpResolverConfig(
            endpoint=spec["endpoint"],
            model=spec.get("model", "default"),
            credential_env=spec.get("credential_env", ""),
            supports_images=bool(spec.get("supports_images", False)),
            max_new_tokens=int(spec.get("max_new_tokens", 2048)),
            temperature=float(spec.get("temperature", 0.0001)),
            top_p=float(spec.get("top_p", 0.95)),
            repetition_penalty=float(spec.get("repetition_penalty", 1.15)),
        )
        return HttpChatResolver(config)
    raise ValueError(f"unknown resolver kind {kind!r}")


def run_from_manifest(manifest: RunManifest, store) -> ExecutionRecord:
    workflow = store.get_workflow(manifest.workflow_id)
    document = store.get_document(manifest.document_id)
    resolver_spec = dict(manifest.resolver)
    if manifest.source_execution_id and resolver_spec.get("kind") == "replay":
        resolver_spec.setdefault("source_execution", manifest.source_execution_id)
    resolver = build_resolver(resolver_spec, store)
    config = EngineConfig(seed=manifest.seed,
                          read_sections=dict(manifest.read_sections))
    engine = WorkflowEngine(workflow, document, config)
    if manifest.mode is ExecutionMode.PROGRAM:
        record = engine.run_program(resolver)
    elif manifest.mode is ExecutionMode.ISOLATED:
        record = engine.run_isolated(resolver)
    elif manifest.mode is ExecutionMode.IO:
        if not manifest.source_execution_id:
            raise ValueError("io mode needs a source execution")
        human = store.get_execution(manifest.source_execution_id)
        if manifest.exclude_figure_steps:
            config.exclude_steps = frozenset(figure_dependent_steps(
                workflow, document, config.read_sections))
            engine = WorkflowEngine(workflow, document, config)
        record = engine.run_io(resolver, human)
    elif manifest.mode is ExecutionMode.REPLAY:
        if not manifest.source_execution_id:
            raise ValueError("replay mode needs a source execution")
        source = store.get_execution(manifest.source_execution_id)
        record = engine.run_replay(ReplayResolver(source))
    else:
        raise ValueError(f"unsupported manifest mode {manifest.mode}")
    store.put_execution(record)
    return record
