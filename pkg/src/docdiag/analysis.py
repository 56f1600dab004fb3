"""Glue between the store and the analysis operations: builds the cell maps,
rating matrices, and fit observations that the metric functions consume."""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .nlp import Embedder, TokenAnnotator
from .scm import BooleanScm, ace
from .store import DocumentStore, ExecutionMode, answer_boolean
from .variability import (
    Cell,
    agent_semantic_alignment,
    disagreement_flags,
    disagreement_propagation,
    krippendorff_alpha,
    position_similarity_correlation,
    similarity_by_cell,
)
from .workflow import StepKind, Workflow, linearize


def human_records(store: DocumentStore, workflow_id: str,
                  modes: Iterable[ExecutionMode] = (ExecutionMode.HUMAN,)):
    wanted = set(modes)
    out = []
    for exec_id in store.list_executions():
        record = store.get_execution(exec_id)
        if record.workflow_id == workflow_id and record.mode in wanted:
            out.append(record)
    return out


def collect_text_cells(records, workflow: Workflow,
                       include_uncertain: bool = True,
                       include_stale: bool = True) -> dict[Cell, dict[str, str]]:
    """(document, step) -> {agent -> answer text}; read steps are skipped."""
    cells: dict[Cell, dict[str, str]] = {}
    for record in records:
        for sid, answer in record.answers.items():
            step = workflow.step_by_id.get(sid)
            if step is None or step.kind is StepKind.READ:
                continue
            if not include_uncertain and answer.uncertain:
                continue
            if not include_stale and answer.stale:
                continue
            cells.setdefault((record.document_id, sid), {})[answer.agent_id] = \
                answer.text
    return cells


def boolean_rating_matrix(records, workflow: Workflow,
                          steps: Sequence[str] | None = None,
                          include_uncertain: bool = True
                          ) -> tuple[list[Cell], list[list[bool | None]]]:
    """Units are (document, step); columns are agents in sorted order."""
    chosen = set(steps) if steps is not None else None
    by_cell: dict[Cell, dict[str, bool]] = {}
    agents: set[str] = set()
    for record in records:
        for sid, answer in record.answers.items():
            if chosen is not None and sid not in chosen:
                continue
            if not include_uncertain and answer.uncertain:
                continue
            value = answer_boolean(answer)
            if value is None:
                continue
            by_cell.setdefault((record.document_id, sid), {})[answer.agent_id] = value
            agents.add(answer.agent_id)
    units = sorted(by_cell)
    columns = sorted(agents)
    matrix = [[by_cell[u].get(a) for a in columns] for u in units]
    return units, matrix


def observations_for_fit(records, nodes: Sequence[str],
                         include_uncertain: bool = True) -> list[dict[str, bool]]:
    """One observation per execution: node -> boolean answer (where derivable)."""
    node_set = set(nodes)
    out = []
    for record in records:
        obs: dict[str, bool] = {}
        for sid, answer in record.answers.items():
            if sid not in node_set:
                continue
            if not include_uncertain and answer.uncertain:
                continue
            value = answer_boolean(answer)
            if value is not None:
                obs[sid] = value
        if obs:
            out.append(obs)
    return out


def ace_table(scm: BooleanScm, target: str,
              workflow: Workflow | None = None) -> list[dict]:
    """ACE of every node with a path to the target, strongest effect first."""
    rows = []
    for node in scm.nodes:
        if node == target or target not in scm.descendants(node):
            continue
        effect = ace(scm, node, target, method="exact")
        row = {"step": node, "ace": effect}
        if workflow is not None and node in workflow.step_by_id:
            step = workflow.step_by_id[node]
            row["name"] = step.name
            row["prompt"] = step.prompt
        rows.append(row)
    rows.sort(key=lambda r: (-abs(r["ace"]), r["step"]))
    return rows


def variability_report(records, workflow: Workflow, annotator: TokenAnnotator,
                       embedder: Embedder,
                       include_uncertain: bool = True) -> dict:
    """Similarity triples per cell, disagreement flags, propagation rates, and
    the position/similarity correlation."""
    cells = collect_text_cells(records, workflow,
                               include_uncertain=include_uncertain)
    triples = similarity_by_cell(cells, annotator, embedder)
    alignment = agent_semantic_alignment(cells, embedder)
    flags = disagreement_flags(alignment)
    rates = disagreement_propagation(flags, workflow)

    by_step: dict[str, list[float]] = {}
    for (_, sid), triple in triples.items():
        by_step.setdefault(sid, []).append(triple.semantic)
    step_means = {sid: sum(vals) / len(vals) for sid, vals in by_step.items()}
    order = linearize(workflow)
    try:
        tau = position_similarity_correlation(order, step_means)
    except ValueError:
        tau = None

    return {
        "cells": [
            {"document": doc, "step": sid,
             "lexical": t.lexical, "syntactic": t.syntactic, "semantic": t.semantic}
            for (doc, sid), t in sorted(triples.items())
        ],
        "step_mean_semantic": dict(sorted(step_means.items())),
        "flags": [
            {"document": doc, "step": sid, "agent": agent, "flagged": value}
            for (doc, sid, agent), value in sorted(flags.items())
        ],
        "disagreement": {
            "base_rate": rates.base_rate,
            "conditional_rate": rates.conditional_rate,
            "eligible": rates.eligible,
            "conditioned": rates.conditioned,
        },
        "position_similarity_kendall_tau": tau,
    }


def agreement_report(records, workflow: Workflow,
                     steps: Sequence[str] | None = None,
                     include_uncertain: bool = True) -> dict:
    units, matrix = boolean_rating_matrix(records, workflow, steps,
                                          include_uncertain)
    alpha = krippendorff_alpha(matrix)
    return {
        "alpha": alpha,
        "units": len(units),
        "raters": len(matrix[0]) if matrix else 0,
    }
