"""Domain types shared across the pipeline: encounters, timelines,
phenotypes, the symptom universe, findings and clinical cases."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator


class VisitClass(str, Enum):
    OUTPATIENT = "outpatient"
    INPATIENT = "inpatient"
    OTHER = "other"


class Polarity(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"


class CorpusError(ValueError):
    """Raised when a corpus or case file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def normalize_code(code: str) -> str:
    return code.strip().upper()


@dataclass(frozen=True)
class Encounter:
    encounter_id: str
    time: int
    visit_class: VisitClass = VisitClass.OUTPATIENT
    icd_codes: frozenset[str] = frozenset()
    note: str = ""

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"encounter {self.encounter_id}: negative time {self.time}")
        object.__setattr__(self, "visit_class", VisitClass(self.visit_class))
        object.__setattr__(
            self, "icd_codes", frozenset(normalize_code(c) for c in self.icd_codes)
        )

    def to_dict(self) -> dict:
        return {
            "encounter_id": self.encounter_id,
            "time": self.time,
            "visit_class": self.visit_class.value,
            "icd_codes": sorted(self.icd_codes),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encounter":
        return cls(
            encounter_id=str(d["encounter_id"]),
            time=int(d["time"]),
            visit_class=VisitClass(d.get("visit_class", "outpatient")),
            icd_codes=frozenset(d.get("icd_codes", ())),
            note=d.get("note", ""),
        )


@dataclass(frozen=True)
class Timeline:
    patient_id: str
    encounters: tuple[Encounter, ...] = ()
    age: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "encounters", tuple(self.encounters))

    def to_dict(self) -> dict:
        d = {
            "patient_id": self.patient_id,
            "encounters": [e.to_dict() for e in self.encounters],
        }
        if self.age is not None:
            d["age"] = self.age
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Timeline":
        return cls(
            patient_id=str(d["patient_id"]),
            encounters=tuple(Encounter.from_dict(e) for e in d.get("encounters", ())),
            age=d.get("age"),
        )


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_timeline(timeline: Timeline) -> ValidationResult:
    """Check strict chronological order and unique encounter ids.

    Violations are collected, never raised.
    """
    out = []
    seen: dict[str, int] = {}
    prev = None
    for i, enc in enumerate(timeline.encounters):
        if enc.encounter_id in seen:
            out.append(Violation(i, "duplicate-id",
                                 f"encounter id {enc.encounter_id!r} repeats index {seen[enc.encounter_id]}"))
        else:
            seen[enc.encounter_id] = i
        if prev is not None:
            if enc.time == prev:
                out.append(Violation(i, "duplicate-time", f"time {enc.time} repeats previous encounter"))
            elif enc.time < prev:
                out.append(Violation(i, "out-of-order", f"time {enc.time} precedes {prev}"))
        prev = enc.time
    return ValidationResult(tuple(out))


@dataclass(frozen=True)
class Phenotype:
    disease: str
    codes: frozenset[str]

    def __post_init__(self):
        codes = frozenset(normalize_code(c) for c in self.codes)
        if not codes:
            raise ValueError(f"phenotype {self.disease!r} has no codes")
        object.__setattr__(self, "codes", codes)

    def matches(self, encounter: Encounter) -> bool:
        return not self.codes.isdisjoint(encounter.icd_codes)


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class SymptomUniverse:
    """Ordered canonical symptom names plus surface-form synonyms.

    A canonical name is itself a surface form (underscores read as spaces).
    """

    symptoms: tuple[str, ...]
    synonym_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        symptoms = tuple(self.symptoms)
        if len(set(symptoms)) != len(symptoms):
            raise ValueError("canonical symptom names must be unique")
        known = set(symptoms)
        syn = {}
        for surface, canon in self.synonym_map.items():
            if canon not in known:
                raise ValueError(f"synonym {surface!r} maps to unknown symptom {canon!r}")
            syn[surface.lower()] = canon
        object.__setattr__(self, "symptoms", symptoms)
        object.__setattr__(self, "synonym_map", syn)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symptoms)})

    def __len__(self) -> int:
        return len(self.symptoms)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __hash__(self) -> int:
        return hash(self.symptoms)

    def index(self, name: str) -> int:
        return self._index[name]

    def surface_forms(self) -> dict[tuple[str, ...], str]:
        """Token sequence -> canonical name, for dictionary matching."""
        forms = {}
        for s in self.symptoms:
            forms[tuple(tokenize(s.replace("_", " ")))] = s
        for surface, canon in self.synonym_map.items():
            forms[tuple(tokenize(surface.replace("_", " ")))] = canon
        forms.pop((), None)
        return forms

    def digest(self) -> str:
        payload = json.dumps([list(self.symptoms), sorted(self.synonym_map.items())])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"symptoms": list(self.symptoms), "synonyms": dict(sorted(self.synonym_map.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "SymptomUniverse":
        return cls(tuple(d["symptoms"]), dict(d.get("synonyms", {})))


@dataclass(frozen=True, order=True)
class Finding:
    symptom: str
    polarity: Polarity

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))

    def __str__(self) -> str:
        return f"{self.symptom}:{self.polarity.value}"


@dataclass(frozen=True)
class ClinicalCase:
    patient_id: str
    findings: frozenset[Finding]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "findings", frozenset(self.findings))

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "label": self.label,
            "findings": [
                {"symptom": f.symptom, "polarity": f.polarity.value}
                for f in sorted(self.findings)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalCase":
        return cls(
            patient_id=str(d["patient_id"]),
            label=str(d["label"]),
            findings=frozenset(Finding(f["symptom"], Polarity(f["polarity"]))
                               for f in d["findings"]),
        )


# -- JSONL I/O ---------------------------------------------------------------

def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dump_line(rec))
            fh.write("\n")


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, parsed object); blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise CorpusError("expected a JSON object", lineno)
            yield lineno, obj


def dump_timeline(timeline: Timeline) -> str:
    return _dump_line(timeline.to_dict())


def write_corpus(path: str | Path, timelines: Iterable[Timeline]) -> None:
    write_jsonl(path, (t.to_dict() for t in timelines))


def read_corpus(path: str | Path, validate: bool = True) -> list[Timeline]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            tl = Timeline.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"malformed timeline: {exc!r}", lineno) from None
        if validate:
            res = validate_timeline(tl)
            if not res.ok:
                raise CorpusError(f"invalid timeline {tl.patient_id}: {res.violations[0].message}", lineno)
        out.append(tl)
    return out


def write_cases(path: str | Path, cases: Iterable[ClinicalCase]) -> None:
    write_jsonl(path, (c.to_dict() for c in cases))


def read_cases(path: str | Path) -> list[ClinicalCase]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(ClinicalCase.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"malformed case: {exc!r}", lineno) from None
    return out
