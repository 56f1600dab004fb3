"""Inter-annotator variability and agreement analyses.

Works on plain mappings keyed by (document, step) cells so it stays
independent of the storage layer; the CLI wires the store into these
functions.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .nlp import Embedder, TokenAnnotator, cosine
from .workflow import Workflow

Cell = tuple[str, str]  # (document id, step id)


@dataclass(frozen=True)
class SimilarityTriple:
    lexical: float  # Jaccard over lemma sets
    syntactic: float  # Jaccard over part-of-speech bigram supports
    semantic: float  # cosine over unit-normalized embeddings


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _lemma_set(annotator: TokenAnnotator, text: str) -> set[str]:
    return {t.lemma for t in annotator.annotate(text)}


def _pos_bigrams(annotator: TokenAnnotator, text: str) -> set[tuple[str, str]]:
    tags = [t.pos for t in annotator.annotate(text)]
    return set(zip(tags, tags[1:]))


def pairwise_similarity(texts: Sequence[str], annotator: TokenAnnotator,
                        embedder: Embedder) -> SimilarityTriple:
    """Mean pairwise similarity over all unordered pairs of answers."""
    if len(texts) < 2:
        raise ValueError("need at least two answers")
    lemmas = [_lemma_set(annotator, t) for t in texts]
    bigrams = [_pos_bigrams(annotator, t) for t in texts]
    vectors = [embedder.embed(t) for t in texts]
    lex, syn, sem = [], [], []
    for i, j in combinations(range(len(texts)), 2):
        lex.append(_jaccard(lemmas[i], lemmas[j]))
        syn.append(_jaccard(bigrams[i], bigrams[j]))
        sem.append(cosine(vectors[i], vectors[j]))
    return SimilarityTriple(
        lexical=float(np.mean(lex)),
        syntactic=float(np.mean(syn)),
        semantic=float(np.mean(sem)),
    )


def similarity_by_cell(cells: Mapping[Cell, Mapping[str, str]],
                       annotator: TokenAnnotator,
                       embedder: Embedder) -> dict[Cell, SimilarityTriple]:
    """Similarity per (document, step); cells with fewer than two answers are skipped."""
    out = {}
    for cell, by_agent in cells.items():
        if len(by_agent) >= 2:
            texts = [by_agent[a] for a in sorted(by_agent)]
            out[cell] = pairwise_similarity(texts, annotator, embedder)
    return out


# ---------------------------------------------------------------------------
# Krippendorff's alpha (nominal metric, missing ratings allowed)

def krippendorff_alpha(matrix: Iterable[Sequence[Hashable | None]]) -> float:
    """1 - D_o/D_e over the value-coincidence matrix.

    Rows are units (step x document), columns raters; None marks a missing
    rating. Units with fewer than two ratings are excluded.
    """
    coincidence: dict[tuple[Hashable, Hashable], float] = defaultdict(float)
    eligible = 0
    for unit in matrix:
        values = [v for v in unit if v is not None]
        m = len(values)
        if m < 2:
            continue
        eligible += 1
        counts = Counter(values)
        for c in counts:
            for k in counts:
                pairs = counts[c] * (counts[k] - (1 if c == k else 0))
                if pairs:
                    coincidence[(c, k)] += pairs / (m - 1)
    if not eligible:
        raise ValueError("no unit has two or more ratings")
    categories = sorted({c for c, _ in coincidence} | {k for _, k in coincidence},
                        key=repr)
    totals = {c: sum(coincidence.get((c, k), 0.0) for k in categories)
              for c in categories}
    n = sum(totals.values())
    observed = sum(coincidence.get((c, k), 0.0)
                   for c in categories for k in categories if c != k)
    expected = sum(totals[c] * totals[k]
                   for c in categories for k in categories if c != k) / (n - 1)
    if expected == 0.0:
        return 1.0  # a single category everywhere: no disagreement possible
    return 1.0 - observed / expected


# ---------------------------------------------------------------------------
# substantial disagreement and its propagation

def agent_semantic_alignment(cells: Mapping[Cell, Mapping[str, str]],
                             embedder: Embedder) -> dict[tuple[str, str, str], float]:
    """Mean cosine of each agent's answer to the co-annotators', per cell."""
    out = {}
    for (doc, step), by_agent in cells.items():
        agents = sorted(by_agent)
        if len(agents) < 2:
            continue
        vectors = {a: embedder.embed(by_agent[a]) for a in agents}
        for a in agents:
            sims = [cosine(vectors[a], vectors[b]) for b in agents if b != a]
            out[(doc, step, a)] = float(np.mean(sims))
    return out


def disagreement_flags(alignment: Mapping[tuple[str, str, str], float]
                       ) -> dict[tuple[str, str, str], bool]:
    """Flag answers whose alignment falls one sample std below the step mean."""
    by_step: dict[str, list[float]] = defaultdict(list)
    for (_, step, _), value in alignment.items():
        by_step[step].append(value)
    thresholds = {}
    for step, values in by_step.items():
        if len(values) >= 2:
            thresholds[step] = float(np.mean(values)) - float(np.std(values, ddof=1))
    out = {}
    for (doc, step, agent), value in alignment.items():
        if step in thresholds:
            out[(doc, step, agent)] = value < thresholds[step]
    return out


@dataclass(frozen=True)
class PropagationRates:
    base_rate: float
    conditional_rate: float | None  # None when no answer has a flagged parent
    eligible: int
    conditioned: int


def disagreement_propagation(flags: Mapping[tuple[str, str, str], bool],
                             workflow: Workflow) -> PropagationRates:
    """Base flag rate and the rate conditioned on a flagged parent answer
    by the same agent on the same document."""
    if not flags:
        return PropagationRates(0.0, None, 0, 0)
    base = sum(1 for v in flags.values() if v) / len(flags)
    conditioned = []
    for (doc, step, agent), value in flags.items():
        parent_flags = [flags.get((doc, parent, agent))
                        for parent in workflow.parents(step)]
        if any(pf is True for pf in parent_flags):
            conditioned.append(value)
    conditional = (sum(1 for v in conditioned if v) / len(conditioned)
                   if conditioned else None)
    return PropagationRates(base, conditional, len(flags), len(conditioned))


def position_similarity_correlation(ordered_steps: Sequence[str],
                                    step_similarity: Mapping[str, float]) -> float:
    """Kendall tau-b between questionnaire position and mean similarity."""
    pairs = [(i, step_similarity[s]) for i, s in enumerate(ordered_steps)
             if s in step_similarity]
    if len(pairs) < 3:
        raise ValueError("need at least three steps with a similarity value")
    positions = [p for p, _ in pairs]
    values = [v for _, v in pairs]
    if len(set(values)) == 1:
        raise ValueError("similarity series is constant")
    tau = stats.kendalltau(positions, values).statistic
    return float(tau)
