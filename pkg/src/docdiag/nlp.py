"""Pluggable text-processing contracts with deterministic bundled fallbacks.

The bundled annotator and embedder exist so that metric contracts can be
tested without model downloads; swap in a real tagger/encoder through the
same interfaces for linguistic fidelity.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class Token:
    text: str
    lemma: str
    pos: str


class TokenAnnotator(Protocol):
    def annotate(self, text: str) -> list[Token]: ...


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:'[a-z]+)?|[^\sA-Za-z0-9]")

_CLOSED_CLASS = {
    "DET": {"a", "an", "the", "this", "that", "these", "those", "some", "any",
            "no", "each", "every", "either", "neither", "both", "all"},
    "PRON": {"i", "you", "he", "she", "it", "we", "they", "me", "him", "her",
             "us", "them", "my", "your", "his", "its", "our", "their", "who",
             "which", "what", "whose", "them"},
    "ADP": {"in", "on", "at", "by", "for", "with", "about", "against",
            "between", "into", "through", "during", "before", "after",
            "above", "below", "to", "from", "of", "over", "under", "as"},
    "CCONJ": {"and", "or", "but", "nor", "so", "yet"},
    "SCONJ": {"if", "because", "while", "although", "though", "since",
              "unless", "whereas", "whether"},
    "AUX": {"is", "are", "was", "were", "be", "been", "being", "am", "do",
            "does", "did", "have", "has", "had", "can", "could", "may",
            "might", "must", "shall", "should", "will", "would"},
    "PART": {"not", "n't"},
}

_VERB_SUFFIXES = ("ate", "ize", "ise", "ify", "ing", "ed")


class NaiveAnnotator:
    """Whitespace/punct tokens, suffix-rule lemmas, closed-class POS lexicon.

    Deterministic by construction; the lemma and POS streams share one token
    list, so their lengths always agree.
    """

    def annotate(self, text: str) -> list[Token]:
        out = []
        for raw in _TOKEN_RE.findall(text):
            lowered = raw.lower()
            out.append(Token(text=raw, lemma=self._lemma(lowered),
                             pos=self._pos(lowered)))
        return out

    @staticmethod
    def _lemma(word: str) -> str:
        if not word[0].isalnum():
            return word
        for suffix, replacement, min_len in (
                ("ies", "y", 5), ("sses", "ss", 6), ("ing", "", 6),
                ("ed", "", 5), ("es", "", 5), ("s", "", 4)):
            if word.endswith(suffix) and len(word) >= min_len:
                return word[: len(word) - len(suffix)] + replacement
        return word

    @staticmethod
    def _pos(word: str) -> str:
        if not word[0].isalnum():
            return "PUNCT"
        if word[0].isdigit():
            return "NUM"
        for tag, words in _CLOSED_CLASS.items():
            if word in words:
                return tag
        if word.endswith(_VERB_SUFFIXES):
            return "VERB"
        if word.endswith("ly"):
            return "ADV"
        if word.endswith(("ous", "ful", "ive", "able", "ible", "al", "ic")):
            return "ADJ"
        return "NOUN"


class HashingEmbedder:
    """Character n-gram hashing embedder: stable, offline, dimension-agnostic.

    Not a semantic model; it gives identical texts identical vectors and
    related texts correlated vectors, which is what the metric tests pin down.
    """

    def __init__(self, dim: int = 256, ngram_range: tuple[int, int] = (3, 5)):
        self.dim = dim
        self.ngram_range = ngram_range

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        normalized = " ".join(text.lower().split())
        padded = f" {normalized} "
        lo, hi = self.ngram_range
        for n in range(lo, hi + 1):
            for i in range(max(0, len(padded) - n + 1)):
                gram = padded[i:i + n]
                digest = hashlib.md5(gram.encode("utf-8")).digest()
                index = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] % 2 else -1.0
                vec[index] += sign
        return vec


def unit_normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return vec
    return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(unit_normalize(a), unit_normalize(b)))


def simple_tokens(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]
