"""Phenotype-driven clinical case construction from patient timelines.

For one disease: select patients with an outpatient encounter carrying one
of its codes, find resolved encounter windows (runs of coded encounters with
no follow-up of any kind for ``tau`` days afterwards), and turn the note of
each window's first encounter into a set of findings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .ehr import ClinicalCase, Finding, Phenotype, SymptomUniverse, Timeline, VisitClass
from .findings import NegationRules, note_findings
from .io import load_config

log = logging.getLogger(__name__)

DEFAULT_TAU = 30


@dataclass(frozen=True)
class EncounterWindow:
    patient_id: str
    start_index: int
    end_index: int
    start_time: int
    end_time: int

    def __post_init__(self):
        if self.end_index < self.start_index or self.end_time < self.start_time:
            raise ValueError("window end precedes start")


def load_phenotypes(path: str | Path) -> list[Phenotype]:
    """Read a disease -> code-list map (TOML or JSON).

    Accepts either a top-level ``[phenotypes]`` table or a bare mapping.
    """
    cfg = load_config(path)
    table = cfg.get("phenotypes", cfg)
    return [Phenotype(name, frozenset(codes)) for name, codes in table.items()]


def identify_patients(corpus: Iterable[Timeline], phenotype: Phenotype,
                      age_range: tuple[int, int] | None = None) -> list[str]:
    """Ids of patients with an outpatient encounter coded for ``phenotype``.

    ``age_range`` (inclusive) drops patients whose recorded age falls
    outside it; patients without an age are kept.
    """
    out = []
    for tl in corpus:
        if age_range is not None and tl.age is not None:
            if not age_range[0] <= tl.age <= age_range[1]:
                continue
        if any(e.visit_class is VisitClass.OUTPATIENT and phenotype.matches(e)
               for e in tl.encounters):
            out.append(tl.patient_id)
    return out


def _other_codes(phenotype: Phenotype, all_phenotypes: Sequence[Phenotype]) -> frozenset[str]:
    codes = set()
    for p in all_phenotypes:
        if p.disease != phenotype.disease:
            codes |= p.codes
    return frozenset(codes - phenotype.codes)


def resolved_windows(timeline: Timeline, phenotype: Phenotype,
                     all_phenotypes: Sequence[Phenotype], tau: int = DEFAULT_TAU) -> list[EncounterWindow]:
    """Resolved runs of phenotype-coded encounters.

    A run grows while the next encounter is within ``tau`` days and carries a
    code of ``phenotype`` (and none of another phenotype). It is emitted when
    the next encounter is ``tau`` or more days later, or absent. Any other
    encounter within ``tau`` days (an uncoded visit, or one coded for a
    different phenotype) leaves the run unresolved and it is dropped.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return _windows(timeline, phenotype, _other_codes(phenotype, all_phenotypes), tau)


def _windows(timeline: Timeline, phenotype: Phenotype, other: frozenset[str],
             tau: int) -> list[EncounterWindow]:
    encs = timeline.encounters
    n = len(encs)
    out = []
    i = 0
    while i < n:
        if not phenotype.matches(encs[i]):
            i += 1
            continue
        start = last = i
        resolved = False
        while True:
            nxt = last + 1
            if nxt >= n or encs[nxt].time - encs[last].time >= tau:
                resolved = True
                break
            follow = encs[nxt]
            if phenotype.matches(follow) and other.isdisjoint(follow.icd_codes):
                last = nxt
                continue
            break
        if resolved:
            out.append(EncounterWindow(timeline.patient_id, start, last,
                                       encs[start].time, encs[last].time))
        i = last + 1
    return out


def extract_findings(window: EncounterWindow, timeline: Timeline, universe: SymptomUniverse,
                     rules: NegationRules = NegationRules()) -> frozenset[Finding]:
    """Deduplicated findings from the note of the window's first encounter."""
    return note_findings(timeline.encounters[window.start_index].note, universe, rules)


def build_cases(corpus: Sequence[Timeline], disease: str, phenotype: Phenotype,
                all_phenotypes: Sequence[Phenotype], universe: SymptomUniverse,
                rules: NegationRules = NegationRules(), tau: int = DEFAULT_TAU,
                age_range: tuple[int, int] | None = None) -> list[ClinicalCase]:
    """Clinical cases labeled ``disease``, one per resolved window with findings."""
    by_id = {tl.patient_id: tl for tl in corpus}
    cases = []
    for pid in identify_patients(corpus, phenotype, age_range):
        tl = by_id[pid]
        for w in resolved_windows(tl, phenotype, all_phenotypes, tau):
            findings = extract_findings(w, tl, universe, rules)
            if findings:
                cases.append(ClinicalCase(pid, findings, disease))
    return cases


def build_all_cases(corpus: Sequence[Timeline], phenotypes: Sequence[Phenotype],
                    universe: SymptomUniverse, rules: NegationRules = NegationRules(),
                    tau: int = DEFAULT_TAU,
                    age_range: tuple[int, int] | None = None) -> dict[str, list[ClinicalCase]]:
    """Run ``build_cases`` for every phenotype; keys follow phenotype order.

    Same result as calling :func:`build_cases` per disease, but only the
    timelines that mention a phenotype's codes are scanned for it.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    by_code: dict[str, set[int]] = {}
    for t, tl in enumerate(corpus):
        for e in tl.encounters:
            for code in e.icd_codes:
                by_code.setdefault(code, set()).add(t)
    all_codes = frozenset().union(*(ph.codes for ph in phenotypes)) if phenotypes else frozenset()
    out = {}
    for ph in phenotypes:
        other = all_codes - ph.codes
        rows = sorted(set().union(*(by_code.get(c, ()) for c in ph.codes)))
        candidates = [corpus[t] for t in rows]
        cases = []
        for tl in candidates:
            if not identify_patients([tl], ph, age_range):
                continue
            for w in _windows(tl, ph, other, tau):
                findings = extract_findings(w, tl, universe, rules)
                if findings:
                    cases.append(ClinicalCase(tl.patient_id, findings, ph.disease))
        out[ph.disease] = cases
        if not cases:
            log.warning("no cases for %s", ph.disease)
    return out
