"""Text similarity metrics driving and evaluating the attack.

Three scores matter here:

* ``s_sem`` -- synonym-aware unigram matching with a word-order (chunk)
  penalty; the fitness maximized while harvesting the target dictionary.
* ``s_clip`` -- one minus cosine similarity between text embeddings; the
  fitness minimized during the attack proper (0 means identical).
* ``bleu4`` -- sentence BLEU up to 4-grams, reported for evaluation.

All functions are pure; the synonym lexicon is read-only after loading.
"""

from __future__ import annotations

import logging
import math
import os
import string
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .image import PerturbationStats

log = logging.getLogger(__name__)

TokenSeq = list[str]

POS_TAGS = ("noun", "verb", "adjective", "adverb", "other")

_POS_ALIASES = {
    "n": "noun",
    "v": "verb",
    "a": "adjective",
    "s": "adjective",  # WordNet satellite adjectives
    "r": "adverb",
}


class EmbeddingProviderError(RuntimeError):
    """An embedding provider failed; carries the text that triggered it."""

    def __init__(self, message: str, text: str):
        super().__init__(message)
        self.text = text


def tokenize(text: str) -> TokenSeq:
    """Lowercase, split on whitespace, strip edge ASCII punctuation per token.

    Interior punctuation (e.g. apostrophes) is kept; tokens that reduce to
    nothing are dropped. Empty input yields an empty list.
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


class SynonymLexicon:
    """Word -> (part-of-speech tags, synset ids) mapping.

    Two words match semantically when their synset id sets intersect.
    """

    def __init__(self) -> None:
        self._entries: dict[str, tuple[set[str], set[str]]] = {}

    def add(self, word: str, pos: str, synset: str) -> None:
        word = word.lower()
        pos = _POS_ALIASES.get(pos, pos)
        if pos not in POS_TAGS:
            raise ValueError(f"unknown part-of-speech tag {pos!r} for word {word!r}")
        tags, synsets = self._entries.setdefault(word, (set(), set()))
        tags.add(pos)
        synsets.add(synset)

    def pos_of(self, word: str) -> frozenset[str]:
        entry = self._entries.get(word.lower())
        return frozenset(entry[0]) if entry else frozenset()

    def synsets_of(self, word: str) -> frozenset[str]:
        entry = self._entries.get(word.lower())
        return frozenset(entry[1]) if entry else frozenset()

    def share_synset(self, a: str, b: str) -> bool:
        ea = self._entries.get(a.lower())
        eb = self._entries.get(b.lower())
        if ea is None or eb is None:
            return False
        return not ea[1].isdisjoint(eb[1])

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._entries

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]]) -> "SynonymLexicon":
        lex = cls()
        for word, pos, synset in rows:
            lex.add(word, pos, synset)
        return lex

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SynonymLexicon":
        """Load a UTF-8 TSV of word<TAB>pos<TAB>synset rows; duplicates accumulate."""
        lex = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
                lex.add(*parts)
        return lex

    def save(self, path: str | os.PathLike) -> None:
        from ._fileio import atomic_write_text

        rows = []
        for word in sorted(self._entries):
            tags, synsets = self._entries[word]
            for pos in sorted(tags):
                for synset in sorted(synsets):
                    rows.append(f"{word}\t{pos}\t{synset}")
        atomic_write_text(path, "\n".join(rows) + "\n")


@dataclass(frozen=True)
class Alignment:
    """Greedy matching statistics between a candidate and a reference.

    m matched words, t candidate length, r reference length, ch the number
    of chunks: maximal runs of matches consecutive in both sequences.
    """

    m: int
    t: int
    r: int
    ch: int
    pairs: tuple[tuple[int, int], ...]


def align(candidate: Sequence[str], reference: Sequence[str], lexicon: SynonymLexicon) -> Alignment:
    """Greedy left-to-right alignment of candidate tokens onto reference tokens.

    Each candidate token takes the first unconsumed reference token that is
    string-equal, else the first unconsumed one sharing a synset. Matching
    is deterministic and never produces crossing pairs in candidate order.
    """
    consumed = [False] * len(reference)
    pairs: list[tuple[int, int]] = []
    for ci, ctok in enumerate(candidate):
        hit = None
        for ri, rtok in enumerate(reference):
            if not consumed[ri] and rtok == ctok:
                hit = ri
                break
        if hit is None:
            for ri, rtok in enumerate(reference):
                if not consumed[ri] and lexicon.share_synset(ctok, rtok):
                    hit = ri
                    break
        if hit is not None:
            consumed[hit] = True
            pairs.append((ci, hit))

    chunks = 0
    for k, (ci, ri) in enumerate(pairs):
        if k == 0 or pairs[k - 1] != (ci - 1, ri - 1):
            chunks += 1
    return Alignment(m=len(pairs), t=len(candidate), r=len(reference), ch=chunks, pairs=tuple(pairs))


@dataclass(frozen=True)
class SemParams:
    """Weights of the semantic similarity: precision/recall balance alpha,
    chunk-penalty weight gamma in [0, 1], penalty exponent theta."""

    alpha: float = 3.0
    gamma: float = 0.5
    theta: float = 3.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")


DEFAULT_SEM_PARAMS = SemParams()


def s_sem(
    candidate: Sequence[str],
    target_semantics: Sequence[str],
    lexicon: SynonymLexicon,
    params: SemParams = DEFAULT_SEM_PARAMS,
) -> float:
    """Synonym-aware similarity with a fragmentation penalty, in [0, 1].

    With m matches out of t candidate and r reference words grouped into ch
    chunks: precision P = m/t, recall R = m/r,
    score = (1 - gamma*(ch/m)**theta) * (alpha^2 + 1)*P*R / (alpha^2*P + R).
    Zero when nothing matches.
    """
    a = align(candidate, target_semantics, lexicon)
    if a.m == 0:
        return 0.0
    precision = a.m / a.t
    recall = a.m / a.r
    alpha_sq = params.alpha * params.alpha
    fmean = (alpha_sq + 1.0) * precision * recall / (alpha_sq * precision + recall)
    penalty = 1.0 - params.gamma * (a.ch / a.m) ** params.theta
    return penalty * fmean


def s_clip(u, v) -> float:
    """One minus cosine similarity between two embedding vectors, in [0, 2].

    0 means identical direction. A zero-magnitude vector cannot define a
    direction; it scores the maximal distance 2 (logged) instead of raising,
    so fitness stays totally ordered during optimization.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    v_arr = np.asarray(v, dtype=np.float64)
    if u_arr.shape != v_arr.shape or u_arr.ndim != 1:
        raise ValueError(f"embedding dimension mismatch: {u_arr.shape} vs {v_arr.shape}")
    nu = float(np.linalg.norm(u_arr))
    nv = float(np.linalg.norm(v_arr))
    if nu == 0.0 or nv == 0.0:
        log.warning("zero-magnitude embedding; scoring maximal distance 2.0")
        return 2.0
    cos = float(u_arr @ v_arr) / (nu * nv)
    return min(2.0, max(0.0, 1.0 - cos))


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    """Sentence BLEU with up to 4-grams and no smoothing, in [0, 1].

    Geometric mean of modified n-gram precisions for n = 1..min(4, len
    (candidate)), counts clipped against the per-n-gram maximum over the
    references, times the brevity penalty exp(1 - r*/c) when the candidate
    is shorter than the closest reference length r* (ties -> shorter).
    Returns 0 for an empty candidate or any zero precision.
    """
    if not references:
        raise ValueError("at least one reference is required")
    c = len(candidate)
    if c == 0:
        return 0.0
    max_n = min(4, c)
    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        max_ref_counts: Counter = Counter()
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        clipped = sum(min(count, max_ref_counts[gram]) for gram, count in cand_counts.items())
        total = c - n + 1
        if clipped == 0:
            return 0.0
        log_precision_sum += math.log(clipped / total)
    score = math.exp(log_precision_sum / max_n)
    r_star = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    if c < r_star:
        score *= math.exp(1.0 - r_star / c)
    return score


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary for one adversarial/target text pair.

    clip_score is 1 - s_clip, so 1 means similar for every field.
    """

    s_sem: float
    bleu4: float
    clip_score: float
    stats: Optional[PerturbationStats] = None

    def as_dict(self) -> dict:
        out = {"s_sem": self.s_sem, "bleu4": self.bleu4, "clip_score": self.clip_score}
        if self.stats is not None:
            out["perturbation"] = {
                "mean_abs": self.stats.mean_abs,
                "max_abs": self.stats.max_abs,
                "num_changed": self.stats.num_changed,
            }
        else:
            out["perturbation"] = None
        return out


def eval_report(
    adv_text: str,
    target_text: str,
    lexicon: SynonymLexicon,
    embed: Callable[[str], np.ndarray],
    stats: Optional[PerturbationStats] = None,
    params: SemParams = DEFAULT_SEM_PARAMS,
) -> MetricsReport:
    """Score an adversarial caption against the target text on all metrics."""
    adv_tokens = tokenize(adv_text)
    target_tokens = tokenize(target_text)
    embeddings = []
    for text in (adv_text, target_text):
        try:
            embeddings.append(np.asarray(embed(text), dtype=np.float64))
        except Exception as exc:
            raise EmbeddingProviderError(
                f"embedding provider failed for text {text!r}: {exc}", text
            ) from exc
    return MetricsReport(
        s_sem=s_sem(adv_tokens, target_tokens, lexicon, params),
        bleu4=bleu4(adv_tokens, [target_tokens]),
        clip_score=1.0 - s_clip(embeddings[0], embeddings[1]),
        stats=stats,
    )
