"""Scoring executions against human reference data.

Cells are (document, step) pairs. Text metrics are averaged per cell against
all reference answers, then mean +/- std is taken across eligible cells;
boolean decisions are pooled into one F1 with "yes" as the positive class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .nlp import Embedder, cosine, simple_tokens
from .store import TIE, Answer, ExecutionRecord, answer_boolean

Cell = tuple[str, str]  # (document id, step id)


class TextScorer(Protocol):
    name: str

    def score(self, candidate: str, reference: str) -> float: ...


class TokenF1Scorer:
    """Multiset token overlap F1; equals 1 exactly iff the multisets match."""

    name = "token_f1"

    def score(self, candidate: str, reference: str) -> float:
        cand = simple_tokens(candidate)
        ref = simple_tokens(reference)
        if not cand and not ref:
            return 1.0
        if not cand or not ref:
            return 0.0
        from collections import Counter
        overlap = sum((Counter(cand) & Counter(ref)).values())
        if overlap == 0:
            return 0.0
        precision = overlap / len(cand)
        recall = overlap / len(ref)
        return 2 * precision * recall / (precision + recall)


class EmbeddingCosineScorer:
    name = "embedding_cosine"

    def __init__(self, embedder: Embedder):
        self._embedder = embedder

    def score(self, candidate: str, reference: str) -> float:
        return cosine(self._embedder.embed(candidate), self._embedder.embed(reference))


class UnavailableScorer:
    """Placeholder for a remote metric without a reachable backend.

    Scoring raises instead of silently returning zero; report() records the
    metric as unavailable.
    """

    def __init__(self, name: str, reason: str = "backend not configured"):
        self.name = name
        self.reason = reason

    def score(self, candidate: str, reference: str) -> float:
        raise RuntimeError(f"scorer {self.name} unavailable: {self.reason}")


# ---------------------------------------------------------------------------
# boolean F1

def boolean_f1(predictions: Mapping[Cell, bool],
               references: Mapping[Cell, object]) -> float:
    """Binary F1 with yes as the positive class; tie-marked references are skipped."""
    tp = fp = fn = 0
    eligible = 0
    for cell, pred in predictions.items():
        ref = references.get(cell)
        if ref is None or ref is TIE:
            continue
        eligible += 1
        if pred and ref:
            tp += 1
        elif pred and not ref:
            fp += 1
        elif not pred and ref:
            fn += 1
    if eligible == 0:
        raise ValueError("no eligible cells with a usable reference")
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


# ---------------------------------------------------------------------------
# score rows and reports

@dataclass(frozen=True)
class ScoreRow:
    condition: str
    text_metrics: dict[str, tuple[float, float]]  # name -> (mean, std over cells)
    boolean: float | None
    eligible_cells: int
    unavailable: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "condition": self.condition,
            "text_metrics": {k: {"mean": m, "std": s}
                             for k, (m, s) in sorted(self.text_metrics.items())},
            "boolean_f1": self.boolean,
            "eligible_cells": self.eligible_cells,
            "unavailable": list(self.unavailable),
        }


def _cells_from_records(records: Sequence[ExecutionRecord],
                        include_stale: bool = True) -> dict[Cell, dict[str, Answer]]:
    cells: dict[Cell, dict[str, Answer]] = {}
    for record in records:
        for sid, answer in record.answers.items():
            if not include_stale and answer.stale:
                continue
            cells.setdefault((record.document_id, sid), {})[record.agent_id] = answer
    return cells


def _majority(values: Sequence[bool]):
    yes = sum(1 for v in values if v)
    no = len(values) - yes
    if yes == no:
        return TIE
    return yes > no


def leave_one_out_baseline(references: Sequence[ExecutionRecord],
                           scorers: Sequence[TextScorer]) -> ScoreRow:
    """Human baseline: each annotator scored against the co-annotators.

    One text-metric sample per (cell, annotator): the mean score of that
    answer against each co-annotator's answer. Booleans compare each
    annotator's decision with the co-annotators' majority, pooled into one
    F1. Cells with a single annotator are skipped. Replaying the reference
    executions through report() reproduces this row exactly.
    """
    cells = _cells_from_records(references)
    per_metric: dict[str, list[float]] = {s.name: [] for s in scorers}
    unavailable: list[str] = []
    tp = fp = fn = 0
    used_boolean = 0
    eligible = 0
    for cell in sorted(cells):
        by_agent = cells[cell]
        agents = sorted(by_agent)
        if len(agents) < 2:
            continue
        eligible += 1
        for a in agents:
            for scorer in scorers:
                if scorer.name in unavailable:
                    continue
                try:
                    scores = [scorer.score(by_agent[a].text, by_agent[b].text)
                              for b in agents if b != a]
                except RuntimeError:
                    unavailable.append(scorer.name)
                    per_metric.pop(scorer.name, None)
                    continue
                per_metric[scorer.name].append(float(np.mean(scores)))
        booleans = {a: answer_boolean(by_agent[a]) for a in agents}
        voters = [a for a in agents if booleans[a] is not None]
        for a in voters:
            others = [booleans[b] for b in voters if b != a]
            if not others:
                continue
            ref = _majority(others)
            if ref is TIE:
                continue
            used_boolean += 1
            if booleans[a] and ref:
                tp += 1
            elif booleans[a] and not ref:
                fp += 1
            elif not booleans[a] and ref:
                fn += 1
    text_metrics = {
        name: (float(np.mean(vals)), float(np.std(vals)))
        for name, vals in per_metric.items() if vals
    }
    f1 = None
    if used_boolean:
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    return ScoreRow("human-loo", text_metrics, f1, eligible,
                    tuple(sorted(set(unavailable))))


@dataclass(frozen=True)
class Condition:
    tag: str
    executions: tuple[ExecutionRecord, ...]
    #: "majority" scores booleans against the co-annotators' majority label;
    #: "annotator" scores against the reference answer of the same agent as
    #: the source human execution (io-style conditions).
    boolean_reference: str = "majority"


def report(conditions: Sequence[Condition],
           references: Sequence[ExecutionRecord],
           scorers: Sequence[TextScorer]) -> list[ScoreRow]:
    """One ScoreRow per condition, scored against the human reference set.

    References from the same agent as the scored record are excluded, so an
    annotator replayed as the system is compared to the co-annotators only;
    predictions from agents outside the reference pool score against everyone.
    """
    ref_cells = _cells_from_records(references)
    doc_sets = {tuple(sorted({r.document_id for r in c.executions}))
                for c in conditions if c.executions}
    if len(doc_sets) > 1:
        raise ValueError("conditions cover different document sets")

    rows = []
    for condition in conditions:
        per_metric: dict[str, list[float]] = {s.name: [] for s in scorers}
        unavailable: list[str] = []
        predictions: dict[tuple[Cell, str], bool] = {}
        refs: dict[tuple[Cell, str], object] = {}
        eligible = 0
        for record in condition.executions:
            for sid, answer in sorted(record.answers.items()):
                cell = (record.document_id, sid)
                by_agent = ref_cells.get(cell, {})
                others = {a: ref for a, ref in by_agent.items()
                          if a != record.agent_id}
                if not others:
                    continue
                eligible += 1
                for scorer in scorers:
                    if scorer.name in unavailable:
                        continue
                    try:
                        scores = [scorer.score(answer.text, ref.text)
                                  for _, ref in sorted(others.items())]
                    except RuntimeError:
                        unavailable.append(scorer.name)
                        per_metric.pop(scorer.name, None)
                        continue
                    per_metric[scorer.name].append(float(np.mean(scores)))
                pred_bool = answer_boolean(answer)
                if pred_bool is None:
                    continue
                if condition.boolean_reference == "annotator":
                    ref_agent = record.source_agent_id or record.agent_id
                    ref_answer = by_agent.get(ref_agent)
                    ref_bool = answer_boolean(ref_answer) if ref_answer else None
                    if ref_bool is not None:
                        predictions[(cell, record.execution_id)] = pred_bool
                        refs[(cell, record.execution_id)] = ref_bool
                else:
                    votes = [answer_boolean(a) for a in others.values()]
                    votes = [v for v in votes if v is not None]
                    if votes:
                        predictions[(cell, record.execution_id)] = pred_bool
                        refs[(cell, record.execution_id)] = _majority(votes)
        text_metrics = {
            name: (float(np.mean(vals)), float(np.std(vals)))
            for name, vals in per_metric.items() if vals
        }
        f1 = None
        if predictions:
            try:
                f1 = boolean_f1(predictions, refs)
            except ValueError:
                f1 = None
        rows.append(ScoreRow(condition.tag, text_metrics, f1, eligible,
                             tuple(sorted(set(unavailable)))))
    return rows


def format_table(rows: Sequence[ScoreRow]) -> str:
    """Plain-text table: one row per condition, metric means with std subscripts."""
    metric_names = sorted({name for row in rows for name in row.text_metrics})
    header = ["condition", *metric_names, "F1", "cells"]
    lines = [" | ".join(header)]
    lines.append("-+-".join("-" * len(h) for h in header))
    for row in rows:
        cols = [row.condition]
        for name in metric_names:
            if name in row.text_metrics:
                mean, std = row.text_metrics[name]
                cols.append(f"{mean:.3f}±{std:.2f}")
            else:
                cols.append("n/a")
        cols.append("n/a" if row.boolean is None else f"{row.boolean:.3f}")
        cols.append(str(row.eligible_cells))
        lines.append(" | ".join(cols))
    return "\n".join(lines)
