"""Target-dictionary harvesting.

Runs rand/1 differential evolution that maximizes the semantic similarity
between each candidate's caption and the attacker's target semantics, and
collects every content word (noun, adjective, verb) the surviving
individuals' captions produce. The attacker composes the target text from
this dictionary; words in it are known to be reachable near the clean
image in the victim's behavior space.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from ._fileio import atomic_write_text
from .engine import DEConfig, RunTrace, init_uniform, run
from .metrics import SemParams, DEFAULT_SEM_PARAMS, SynonymLexicon, s_sem, tokenize

CONTENT_POS = frozenset({"noun", "adjective", "verb"})


@dataclass(frozen=True)
class DictionaryEntry:
    word: str
    pos: str
    first_generation: int
    count: int


class TargetDictionary:
    """Accumulated (word, pos) entries with first-seen generation and counts."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], list[int]] = {}

    def add(self, word: str, pos: str, generation: int) -> None:
        key = (word, pos)
        entry = self._entries.get(key)
        if entry is None:
            self._entries[key] = [generation, 1]
        else:
            entry[1] += 1

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return any(w == word for w, _ in self._entries)

    def words(self) -> set[str]:
        return {w for w, _ in self._entries}

    def entries(self) -> list[DictionaryEntry]:
        """Entries sorted by occurrence count descending (ties by word, pos)."""
        items = [
            DictionaryEntry(word=w, pos=p, first_generation=gen, count=count)
            for (w, p), (gen, count) in self._entries.items()
        ]
        items.sort(key=lambda e: (-e.count, e.word, e.pos))
        return items

    def save(self, path: str | os.PathLike) -> None:
        """Write word<TAB>pos<TAB>first_generation<TAB>count rows, count-descending."""
        lines = [
            f"{e.word}\t{e.pos}\t{e.first_generation}\t{e.count}"
            for e in self.entries()
        ]
        atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TargetDictionary":
        dictionary = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
                word, pos, first_gen, count = parts
                dictionary._entries[(word, pos)] = [int(first_gen), int(count)]
        return dictionary


def extract_content_words(text: str, lexicon: SynonymLexicon) -> set[tuple[str, str]]:
    """Content words of `text`: tokens whose lexicon tags intersect
    {noun, adjective, verb}, one (word, pos) entry per qualifying tag.
    Words absent from the lexicon are dropped."""
    found = set()
    for token in tokenize(text):
        for pos in lexicon.pos_of(token) & CONTENT_POS:
            found.add((token, pos))
    return found


def run_ask(
    clean,
    target_semantics: str,
    oracle,
    lexicon: SynonymLexicon,
    config: DEConfig,
    epsilon: float,
    params: SemParams = DEFAULT_SEM_PARAMS,
    include_initial: bool = False,
) -> tuple[TargetDictionary, RunTrace]:
    """Harvest a target dictionary by probing the oracle around `clean`.

    Maximizes s_sem(caption, target_semantics) with rand/1 DE; after each
    generation's selection, the content words of every survivor's cached
    caption are unioned into the dictionary. The initial population's
    captions contribute only with `include_initial=True` (or when
    max_generations is 0, in which case they are all there is).
    """
    ts_tokens = tokenize(target_semantics)
    if not ts_tokens:
        raise ValueError("target semantics is empty after tokenization")
    config = replace(config, strategy="rand1", direction="maximize")

    def fitness(genome: np.ndarray) -> tuple[float, str]:
        text = oracle.generate(genome)
        return s_sem(tokenize(text), ts_tokens, lexicon, params), text

    dictionary = TargetDictionary()
    harvest_initial = include_initial or config.max_generations == 0

    def on_generation(generation: int, population) -> None:
        if generation == 0 and not harvest_initial:
            return
        for individual in population:
            for word, pos in extract_content_words(individual.output_text, lexicon):
                dictionary.add(word, pos, generation)

    trace = run(
        clean,
        partial(init_uniform, epsilon=epsilon),
        fitness,
        config,
        epsilon,
        on_generation=on_generation,
    )
    return dictionary, trace
