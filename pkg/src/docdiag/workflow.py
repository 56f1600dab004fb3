"""Assessment workflow graphs: step model, validation, ordering, and condensation.

A workflow is a DAG of assessment steps over a document. Root steps consume
document content, intermediate steps distill or combine earlier answers, and
sink steps carry the final verdicts. All operations here are pure functions
over immutable workflow values.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

WORKFLOW_FORMAT_VERSION = 1


class StepKind(str, Enum):
    READ = "read"
    EXTRACT = "extract"
    INFER = "infer"
    INFER_KNOWLEDGE = "infer_knowledge"


class AnswerSchema(str, Enum):
    FREE_TEXT = "free_text"
    BOOLEAN_WITH_TEXT = "boolean_with_text"
    TEXT_WITH_HIGHLIGHTS = "text_with_highlights"


#: Step kinds that may carry a yes/no answer next to the free text.
BOOLEAN_KINDS = frozenset({StepKind.INFER, StepKind.INFER_KNOWLEDGE})


@dataclass(frozen=True)
class Step:
    id: str
    name: str
    kind: StepKind
    prompt: str
    description: str = ""
    example: str = ""
    schema: AnswerSchema = AnswerSchema.FREE_TEXT


@dataclass(frozen=True)
class Violation:
    """One broken workflow constraint; `subjects` are the offending step/edge ids."""

    code: str
    message: str
    subjects: tuple[str, ...] = ()

    def __str__(self) -> str:
        ids = ", ".join(self.subjects)
        return f"[{self.code}] {self.message}" + (f" ({ids})" if ids else "")


class InvalidWorkflowError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in violations))


class WorkflowFormatError(ValueError):
    """Raised when a workflow file cannot be parsed into a Workflow value."""


@dataclass(frozen=True)
class Workflow:
    id: str
    steps: tuple[Step, ...]
    edges: tuple[tuple[str, str], ...]
    inputs: frozenset[str]
    verdicts: frozenset[str]
    preferred_order: tuple[str, ...] = ()

    @cached_property
    def step_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.steps)

    @cached_property
    def step_by_id(self) -> dict[str, Step]:
        return {s.id: s for s in self.steps}

    @cached_property
    def components(self) -> frozenset[str]:
        return frozenset(self.step_ids) - self.inputs - self.verdicts

    @cached_property
    def parent_map(self) -> dict[str, tuple[str, ...]]:
        parents: dict[str, list[str]] = {sid: [] for sid in self.step_ids}
        for parent, child in self.edges:
            if child in parents:
                parents[child].append(parent)
        return {sid: tuple(sorted(ps)) for sid, ps in parents.items()}

    @cached_property
    def child_map(self) -> dict[str, tuple[str, ...]]:
        children: dict[str, list[str]] = {sid: [] for sid in self.step_ids}
        for parent, child in self.edges:
            if parent in children:
                children[parent].append(child)
        return {sid: tuple(sorted(cs)) for sid, cs in children.items()}

    def parents(self, step_id: str) -> tuple[str, ...]:
        return self.parent_map[step_id]

    def children(self, step_id: str) -> tuple[str, ...]:
        return self.child_map[step_id]

    def step(self, step_id: str) -> Step:
        return self.step_by_id[step_id]


@dataclass(frozen=True)
class GraphStats:
    avg_degree: Fraction
    mean_parents: Fraction
    root_count: int
    terminal_count: int
    layer_count: int

    def as_dict(self) -> dict:
        return {
            "avg_degree": float(self.avg_degree),
            "mean_parents": float(self.mean_parents),
            "root_count": self.root_count,
            "terminal_count": self.terminal_count,
            "layer_count": self.layer_count,
        }


# ---------------------------------------------------------------------------
# validation

def _find_cycle(workflow: Workflow) -> list[str]:
    """Return the step ids on one directed cycle, or [] if the graph is acyclic."""
    color: dict[str, int] = {sid: 0 for sid in workflow.step_ids}  # 0 new, 1 open, 2 done
    stack_path: list[str] = []

    def visit(node: str) -> list[str]:
        color[node] = 1
        stack_path.append(node)
        for child in workflow.child_map.get(node, ()):
            if color.get(child, 2) == 1:
                return stack_path[stack_path.index(child):]
            if color.get(child, 2) == 0:
                found = visit(child)
                if found:
                    return found
        stack_path.pop()
        color[node] = 2
        return []

    for sid in workflow.step_ids:
        if color[sid] == 0:
            cycle = visit(sid)
            if cycle:
                return cycle
    return []


def validate(workflow: Workflow) -> list[Violation]:
    """Check every workflow constraint; an empty report means the workflow is valid."""
    out: list[Violation] = []
    ids = workflow.step_ids
    id_set = set(ids)

    seen: set[str] = set()
    for sid in ids:
        if sid in seen:
            out.append(Violation("duplicate-id", "step id appears more than once", (sid,)))
        seen.add(sid)

    for step in workflow.steps:
        if not step.prompt.strip():
            out.append(Violation("empty-prompt", "step has an empty prompt", (step.id,)))
        if not step.name.strip():
            out.append(Violation("empty-name", "step has an empty name", (step.id,)))
        if step.schema is AnswerSchema.BOOLEAN_WITH_TEXT and step.kind not in BOOLEAN_KINDS:
            out.append(Violation(
                "schema-kind-mismatch",
                "boolean answers are only allowed on infer steps", (step.id,)))
        if step.schema is AnswerSchema.TEXT_WITH_HIGHLIGHTS and step.kind is not StepKind.EXTRACT:
            out.append(Violation(
                "schema-kind-mismatch",
                "highlight answers are only allowed on extract steps", (step.id,)))

    for parent, child in workflow.edges:
        for endpoint in (parent, child):
            if endpoint not in id_set:
                out.append(Violation("unknown-step", "edge references unknown step",
                                     (f"{parent}->{child}",)))
                break
    known_edges = [(p, c) for p, c in workflow.edges if p in id_set and c in id_set]
    if len(set(known_edges)) != len(known_edges):
        dupes = sorted({f"{p}->{c}" for p, c in known_edges if known_edges.count((p, c)) > 1})
        out.append(Violation("duplicate-edge", "edge appears more than once", tuple(dupes)))

    cycle = _find_cycle(workflow)
    if cycle:
        out.append(Violation("cycle", "edge relation contains a directed cycle", tuple(cycle)))

    for name, group in (("inputs", workflow.inputs),
                        ("components", workflow.components),
                        ("verdicts", workflow.verdicts)):
        if not group:
            out.append(Violation("empty-partition", f"{name} set is empty"))
    for sid in sorted(workflow.inputs & workflow.verdicts):
        out.append(Violation("overlapping-partition", "step is both input and verdict", (sid,)))
    for sid in sorted((workflow.inputs | workflow.verdicts) - set(ids)):
        out.append(Violation("unknown-step", "partition references unknown step", (sid,)))

    for sid in sorted(workflow.inputs & set(ids)):
        if workflow.parent_map[sid]:
            out.append(Violation("input-not-root", "input step has parents", (sid,)))
        if not any(c in workflow.components for c in workflow.child_map[sid]):
            out.append(Violation("input-feeds-no-component",
                                 "input step has no child among the components", (sid,)))
    for sid in sorted(workflow.verdicts & set(ids)):
        if workflow.child_map[sid]:
            out.append(Violation("verdict-not-sink", "verdict step has children", (sid,)))

    for step in workflow.steps:
        parents = workflow.parent_map[step.id]
        if step.kind is StepKind.READ and parents:
            out.append(Violation("read-has-parents",
                                 "read steps consume only document content", (step.id,)))
        if step.kind in BOOLEAN_KINDS:
            read_parents = tuple(p for p in parents
                                 if workflow.step_by_id.get(p, None)
                                 and workflow.step_by_id[p].kind is StepKind.READ)
            if read_parents:
                out.append(Violation("infer-reads-document",
                                     "infer steps consume only prior answers",
                                     (step.id,) + read_parents))
    return out


def require_valid(workflow: Workflow) -> None:
    violations = validate(workflow)
    if violations:
        raise InvalidWorkflowError(violations)


# ---------------------------------------------------------------------------
# ordering

def linearize(workflow: Workflow) -> list[str]:
    """Topological order; ready steps are emitted by preferred order, then step id."""
    require_valid(workflow)
    pref = {sid: i for i, sid in enumerate(workflow.preferred_order)}
    missing = len(pref) + len(workflow.steps)

    indegree = {sid: len(workflow.parent_map[sid]) for sid in workflow.step_ids}
    ready = sorted((sid for sid, d in indegree.items() if d == 0),
                   key=lambda sid: (pref.get(sid, missing), sid))
    order: list[str] = []
    while ready:
        current = ready.pop(0)
        order.append(current)
        changed = False
        for child in workflow.child_map[current]:
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
                changed = True
        if changed:
            ready.sort(key=lambda sid: (pref.get(sid, missing), sid))
    return order


def layers(workflow: Workflow) -> list[list[str]]:
    """Partition steps into antichains by longest-path depth from the roots."""
    require_valid(workflow)
    depth: dict[str, int] = {}
    for sid in linearize(workflow):
        parents = workflow.parent_map[sid]
        depth[sid] = 1 + max((depth[p] for p in parents), default=-1)
    count = max(depth.values()) + 1 if depth else 0
    out: list[list[str]] = [[] for _ in range(count)]
    for sid in workflow.step_ids:
        out[depth[sid]].append(sid)
    return [sorted(layer) for layer in out]


def stats(workflow: Workflow) -> GraphStats:
    require_valid(workflow)
    n = len(workflow.steps)
    e = len(workflow.edges)
    roots = sum(1 for sid in workflow.step_ids if not workflow.parent_map[sid])
    sinks = sum(1 for sid in workflow.step_ids if not workflow.child_map[sid])
    return GraphStats(
        avg_degree=Fraction(2 * e, n),
        mean_parents=Fraction(e, n),
        root_count=roots,
        terminal_count=sinks,
        layer_count=len(layers(workflow)),
    )


# ---------------------------------------------------------------------------
# reachability and condensation

def reachable_sets(step_ids: Iterable[str],
                   child_map: dict[str, tuple[str, ...]]) -> dict[str, set[str]]:
    """Strict descendants of every node (node itself excluded)."""
    reach: dict[str, set[str]] = {}

    def visit(node: str) -> set[str]:
        if node in reach:
            return reach[node]
        reach[node] = set()  # placeholder; graph is acyclic when this is used
        acc: set[str] = set()
        for child in child_map.get(node, ()):
            acc.add(child)
            acc |= visit(child)
        reach[node] = acc
        return acc

    for sid in step_ids:
        visit(sid)
    return reach


def descendants(workflow: Workflow, step_id: str) -> set[str]:
    seen: set[str] = set()
    queue = deque(workflow.child_map[step_id])
    while queue:
        node = queue.popleft()
        if node in seen:
            continue
        seen.add(node)
        queue.extend(workflow.child_map[node])
    return seen


def transitive_reduction(nodes: Sequence[str],
                         edges: set[tuple[str, str]]) -> set[tuple[str, str]]:
    """Drop every edge implied by a longer path. Unique for DAGs."""
    child_map: dict[str, tuple[str, ...]] = {n: () for n in nodes}
    grouped: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in edges:
        grouped[u].append(v)
    child_map = {n: tuple(cs) for n, cs in grouped.items()}
    reach = reachable_sets(nodes, child_map)
    kept = set(edges)
    for u, v in sorted(edges):
        others = [w for w in grouped[u] if w != v and (u, w) in kept]
        if any(v in reach[w] or v == w for w in others):
            kept.discard((u, v))
    return kept


def condense(workflow: Workflow,
             keep: Iterable[str],
             extra_confounder_edges: Iterable[tuple[str, str]] = (),
             allow_non_boolean: Iterable[str] = ()) -> Workflow:
    """Restrict the workflow to `keep`, preserving reachability among kept steps.

    Dropped steps are contracted into edges, the result is transitively
    reduced, and `extra_confounder_edges` are appended afterwards. Input and
    verdict sets of the output are re-derived from its root/sink structure.
    """
    require_valid(workflow)
    keep_set = set(keep)
    whitelist = set(allow_non_boolean)
    if not keep_set:
        raise ValueError("keep set is empty; a workflow needs at least one verdict")
    unknown = keep_set - set(workflow.step_ids)
    if unknown:
        raise ValueError(f"keep references unknown steps: {sorted(unknown)}")
    for sid in sorted(keep_set):
        step = workflow.step_by_id[sid]
        if step.schema is not AnswerSchema.BOOLEAN_WITH_TEXT and sid not in whitelist:
            raise ValueError(f"kept step {sid} has no boolean answer and is not whitelisted")

    # Edge u->v for kept u, v when some path u..v has only dropped interior nodes.
    contracted: set[tuple[str, str]] = set()
    for source in keep_set:
        frontier = deque(workflow.child_map[source])
        seen: set[str] = set()
        while frontier:
            node = frontier.popleft()
            if node in seen:
                continue
            seen.add(node)
            if node in keep_set:
                contracted.add((source, node))
                continue  # interior nodes must be dropped ones
            frontier.extend(workflow.child_map[node])

    nodes = sorted(keep_set)
    reduced = transitive_reduction(nodes, contracted)

    edges = set(reduced)
    for u, v in extra_confounder_edges:
        if u not in keep_set or v not in keep_set:
            raise ValueError(f"confounder edge {u}->{v} references a dropped step")
        edges.add((u, v))

    child_map: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in edges:
        child_map[u].append(v)
    probe = Workflow(
        id=f"{workflow.id}-condensed",
        steps=tuple(workflow.step_by_id[sid] for sid in workflow.step_ids if sid in keep_set),
        edges=tuple(sorted(edges)),
        inputs=frozenset(),
        verdicts=frozenset(),
        preferred_order=tuple(sid for sid in workflow.preferred_order if sid in keep_set),
    )
    if _find_cycle(probe):
        raise ValueError("confounder edges introduce a directed cycle")

    roots = frozenset(n for n in nodes if not any(v == n for _, v in edges))
    sinks = frozenset(n for n in nodes if not child_map[n])
    return replace(probe, inputs=roots, verdicts=sinks)


# ---------------------------------------------------------------------------
# file format

def workflow_to_dict(workflow: Workflow) -> dict:
    return {
        "version": WORKFLOW_FORMAT_VERSION,
        "id": workflow.id,
        "steps": [
            {
                "id": s.id,
                "name": s.name,
                "kind": s.kind.value,
                "prompt": s.prompt,
                "description": s.description,
                "example": s.example,
                "schema": s.schema.value,
            }
            for s in workflow.steps
        ],
        "edges": [[p, c] for p, c in workflow.edges],
        "inputs": sorted(workflow.inputs),
        "verdicts": sorted(workflow.verdicts),
        "preferred_order": list(workflow.preferred_order),
    }


def workflow_from_dict(data: dict) -> Workflow:
    try:
        version = data.get("version", WORKFLOW_FORMAT_VERSION)
        if version != WORKFLOW_FORMAT_VERSION:
            raise WorkflowFormatError(f"unsupported workflow format version {version}")
        steps = tuple(
            Step(
                id=raw["id"],
                name=raw["name"],
                kind=StepKind(raw["kind"]),
                prompt=raw["prompt"],
                description=raw.get("description", ""),
                example=raw.get("example", ""),
                schema=AnswerSchema(raw.get("schema", "free_text")),
            )
            for raw in data["steps"]
        )
        edges = tuple((p, c) for p, c in data.get("edges", []))
        return Workflow(
            id=data.get("id", "workflow"),
            steps=steps,
            edges=edges,
            inputs=frozenset(data.get("inputs", [])),
            verdicts=frozenset(data.get("verdicts", [])),
            preferred_order=tuple(data.get("preferred_order", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WorkflowFormatError):
            raise
        raise WorkflowFormatError(f"malformed workflow file: {exc}") from exc


def load_workflow(path: str | Path) -> Workflow:
    with open(path, encoding="utf-8") as fh:
        return workflow_from_dict(json.load(fh))


def save_workflow(workflow: Workflow, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(workflow_to_dict(workflow), fh, indent=2, sort_keys=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# bundled asset

BUNDLED_WORKFLOW_PATH = Path(__file__).parent / "assets" / "biomed_workflow.json"

#: Steps with a yes/no question but no boolean answer slot (extract kind);
#: whitelisted when building the boolean decision graph.
BOOLEAN_WHITELIST_FIELD = "boolean_whitelist"


def load_bundled_workflow() -> Workflow:
    return load_workflow(BUNDLED_WORKFLOW_PATH)


def bundled_boolean_keep() -> tuple[set[str], set[str]]:
    """Kept steps and non-boolean whitelist for the bundled decision graph."""
    with open(BUNDLED_WORKFLOW_PATH, encoding="utf-8") as fh:
        data = json.load(fh)
    whitelist = set(data.get(BOOLEAN_WHITELIST_FIELD, []))
    boolean = {raw["id"] for raw in data["steps"]
               if raw.get("schema") == AnswerSchema.BOOLEAN_WITH_TEXT.value}
    return boolean | whitelist, whitelist


def clarity_confounder_edges(workflow: Workflow, keep: Iterable[str],
                             confounder: str,
                             section_reads: Iterable[str]) -> list[tuple[str, str]]:
    """Edges from the clarity step to every kept step that directly depends on
    reading a document section (i.e. the roots of the contracted graph whose
    ancestry leads to a section read)."""
    keep_set = set(keep)
    section_set = set(section_reads)
    reach = reachable_sets(workflow.step_ids, workflow.child_map)
    ancestors: dict[str, set[str]] = {sid: set() for sid in workflow.step_ids}
    for sid in workflow.step_ids:
        for node in reach[sid]:
            ancestors[node].add(sid)
    out = []
    for sid in sorted(keep_set - {confounder}):
        kept_ancestors = ancestors[sid] & keep_set - {confounder}
        if kept_ancestors:
            continue  # not a root of the contracted graph
        if ancestors[sid] & section_set:
            out.append((confounder, sid))
    return out
