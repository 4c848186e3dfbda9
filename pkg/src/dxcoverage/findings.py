"""Dictionary entity matching and NegEx-style negation scoping over
clinical notes.

Matching is case-insensitive longest-leftmost over token sequences of the
universe's surface forms. Negation follows the classic trigger/scope scheme:
a pre-trigger negates mentions that start within ``window`` tokens after it,
a post-trigger negates mentions that end within ``window`` tokens before it,
and a terminator token closes either scope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .ehr import Finding, Polarity, SymptomUniverse, tokenize
from .io import load_config

SENTENCE_END = frozenset({".", "!", "?"})


@dataclass(frozen=True)
class Mention:
    symptom: str
    polarity: Polarity
    sentence_index: int
    span: tuple[int, int]  # token range [start, end) within the sentence

    def __post_init__(self):
        if self.span[1] <= self.span[0]:
            raise ValueError(f"empty span {self.span}")

    @property
    def finding(self) -> Finding:
        return Finding(self.symptom, self.polarity)


@dataclass(frozen=True)
class NegationRules:
    pre_triggers: tuple[str, ...] = ("no", "denies", "without", "not", "negative for")
    post_triggers: tuple[str, ...] = ("is ruled out",)
    terminators: tuple[str, ...] = ("but", "however", ";", ".")
    window: int = 6

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.pre_triggers or not self.post_triggers:
            raise ValueError("trigger lists must be non-empty")
        for name in ("pre_triggers", "post_triggers", "terminators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @classmethod
    def from_file(cls, path: str | Path) -> "NegationRules":
        cfg = load_config(path)
        cfg = cfg.get("negation", cfg)
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items()})


def split_sentences(text: str) -> list[list[str]]:
    """Tokenize and cut at sentence-final punctuation (kept on the sentence)."""
    sentences, cur = [], []
    for tok in tokenize(text):
        cur.append(tok)
        if tok in SENTENCE_END:
            sentences.append(cur)
            cur = []
    if cur:
        sentences.append(cur)
    return sentences


class _Matcher:
    def __init__(self, universe: SymptomUniverse):
        self.forms = universe.surface_forms()
        self.max_len = max((len(f) for f in self.forms), default=0)

    def scan(self, tokens: Sequence[str], sentence_index: int) -> list[Mention]:
        out = []
        i, n = 0, len(tokens)
        while i < n:
            hit = None
            for length in range(min(self.max_len, n - i), 0, -1):
                canon = self.forms.get(tuple(tokens[i:i + length]))
                if canon is not None:
                    hit = (canon, length)
                    break
            if hit is None:
                i += 1
                continue
            out.append(Mention(hit[0], Polarity.PRESENT, sentence_index, (i, i + hit[1])))
            i += hit[1]
        return out


_matcher_cache: dict[int, tuple[SymptomUniverse, _Matcher]] = {}


def _matcher_for(universe: SymptomUniverse) -> _Matcher:
    cached = _matcher_cache.get(id(universe))
    if cached is None or cached[0] is not universe:
        cached = (universe, _Matcher(universe))
        _matcher_cache[id(universe)] = cached
    return cached[1]


def match_entities(text: str, universe: SymptomUniverse) -> list[Mention]:
    """All dictionary mentions in ``text``, polarity provisionally present."""
    matcher = _matcher_for(universe)
    out = []
    for si, tokens in enumerate(split_sentences(text)):
        out.extend(matcher.scan(tokens, si))
    return out


def _occurrences(tokens: Sequence[str], phrases: Sequence[str]) -> list[tuple[int, int]]:
    seqs = sorted({tuple(tokenize(p)) for p in phrases if tokenize(p)}, key=len, reverse=True)
    out, i = [], 0
    while i < len(tokens):
        for seq in seqs:
            if tuple(tokens[i:i + len(seq)]) == seq:
                out.append((i, i + len(seq)))
                i += len(seq)
                break
        else:
            i += 1
    return out


def detect_negation(sentence_tokens: Sequence[str], mentions: Sequence[Mention],
                    rules: NegationRules = NegationRules()) -> list[Mention]:
    """Assign final polarity to each mention of one sentence.

    Same mentions out, same order; only ``polarity`` changes.
    """
    tokens = list(sentence_tokens)
    covered = set()
    for m in mentions:
        covered.update(range(*m.span))

    def free(occ):
        return [o for o in occ if covered.isdisjoint(range(*o))]

    pre = free(_occurrences(tokens, rules.pre_triggers))
    post = free(_occurrences(tokens, rules.post_triggers))
    term_seqs = {tuple(tokenize(t)) or (t,) for t in rules.terminators}
    terminated = [False] * (len(tokens) + 1)
    for i in range(len(tokens)):
        for seq in term_seqs:
            if tuple(tokens[i:i + len(seq)]) == seq:
                terminated[i] = True

    def clear(lo, hi):
        return not any(terminated[lo:hi])

    out = []
    for m in mentions:
        start, end = m.span
        negated = any(
            t_end <= start and start - t_end < rules.window and clear(t_end, start)
            for _, t_end in pre
        ) or any(
            t_start >= end and t_start - end < rules.window and clear(end, t_start)
            for t_start, _ in post
        )
        out.append(replace(m, polarity=Polarity.ABSENT if negated else Polarity.PRESENT))
    return out


def extract_mentions(text: str, universe: SymptomUniverse,
                     rules: NegationRules = NegationRules()) -> list[Mention]:
    """Match then negate, sentence by sentence."""
    matcher = _matcher_for(universe)
    out = []
    for si, tokens in enumerate(split_sentences(text)):
        found = matcher.scan(tokens, si)
        if found:
            out.extend(detect_negation(tokens, found, rules))
    return out


def note_findings(text: str, universe: SymptomUniverse,
                  rules: NegationRules = NegationRules()) -> frozenset[Finding]:
    return frozenset(m.finding for m in extract_mentions(text, universe, rules))


# -- labeled negation corpus ---------------------------------------------------

@dataclass(frozen=True)
class LabeledSentence:
    sentence: str
    symptom: str
    polarity: Polarity


def read_negation_corpus(path: str | Path) -> list[LabeledSentence]:
    """Tab-separated rows: sentence, canonical symptom, gold polarity."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.reader(fh, delimiter="\t"):
            if not rec or rec[0].startswith("#"):
                continue
            sentence, symptom, gold = rec
            rows.append(LabeledSentence(sentence, symptom, Polarity(gold.strip())))
    return rows


def negation_accuracy(rows: Sequence[LabeledSentence], universe: SymptomUniverse,
                      rules: NegationRules = NegationRules()) -> tuple[float, list[LabeledSentence]]:
    """Fraction of rows whose symptom is found with the gold polarity.

    A row counts as wrong if the symptom is not matched at all or if any of
    its mentions carries the other polarity.
    """
    misses = []
    for row in rows:
        pols = {m.polarity for m in extract_mentions(row.sentence, universe, rules)
                if m.symptom == row.symptom}
        if pols != {row.polarity}:
            misses.append(row)
    return (len(rows) - len(misses)) / len(rows), misses
