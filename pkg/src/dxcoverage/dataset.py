"""Feature encoding, patient-level splits, class balancing, coverage splits
and vignette loading.

Cases are encoded as sparse binary vectors of length ``2K``: index ``i``
marks symptom ``i`` present, index ``K + i`` marks it absent. A symptom with
neither bit set is unknown.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .ehr import ClinicalCase, CorpusError, Polarity, SymptomUniverse, iter_jsonl

log = logging.getLogger(__name__)


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    indices: tuple[int, ...]
    dim: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.indices)] = 1.0
        return out


def encode_case(case: ClinicalCase, universe: SymptomUniverse) -> FeatureVector:
    k = len(universe)
    bits = set()
    for f in case.findings:
        if f.symptom not in universe:
            raise EncodingError(f"unknown symptom {f.symptom!r} in case of {case.patient_id}")
        i = universe.index(f.symptom)
        bits.add(i if f.polarity is Polarity.PRESENT else k + i)
    return FeatureVector(tuple(sorted(bits)), 2 * k)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: tuple[FeatureVector, ...]
    labels: np.ndarray
    label_index: tuple[str, ...]
    universe: SymptomUniverse
    patient_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "label_index", tuple(self.label_index))
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.features):
            raise ValueError("features and labels differ in length")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.label_index)):
            raise ValueError("label out of range")
        if self.patient_ids and len(self.patient_ids) != len(labels):
            raise ValueError("patient_ids and labels differ in length")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return 2 * len(self.universe)

    @property
    def n_classes(self) -> int:
        return len(self.label_index)

    @property
    def cases(self) -> list[tuple[FeatureVector, int]]:
        return list(zip(self.features, self.labels.tolist()))

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) as contiguous int64 arrays."""
        lengths = np.fromiter((len(f.indices) for f in self.features), dtype=np.int64,
                              count=len(self.features))
        indptr = np.zeros(len(self.features) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = np.fromiter((i for f in self.features for i in f.indices),
                              dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, idx: Sequence[int]) -> "LabeledDataset":
        idx = list(idx)
        return LabeledDataset(
            tuple(self.features[i] for i in idx),
            self.labels[idx] if idx else np.zeros(0, dtype=np.int64),
            self.label_index, self.universe,
            tuple(self.patient_ids[i] for i in idx) if self.patient_ids else (),
        )

    def restrict(self, labels: Sequence[str]) -> "LabeledDataset":
        """Cases whose label is in ``labels``, relabeled to that order."""
        pos = {name: i for i, name in enumerate(self.label_index)}
        missing = [l for l in labels if l not in pos]
        if missing:
            raise KeyError(f"labels not in dataset: {missing[:5]}")
        remap = np.full(self.n_classes, -1, dtype=np.int64)
        for new, name in enumerate(labels):
            remap[pos[name]] = new
        keep = [i for i, y in enumerate(self.labels.tolist()) if remap[y] >= 0]
        return LabeledDataset(
            tuple(self.features[i] for i in keep),
            remap[self.labels[keep]] if keep else np.zeros(0, dtype=np.int64),
            tuple(labels), self.universe,
            tuple(self.patient_ids[i] for i in keep) if self.patient_ids else (),
        )


def encode_cases(cases: Sequence[ClinicalCase], universe: SymptomUniverse,
                 label_index: Sequence[str] | None = None) -> LabeledDataset:
    """Encode cases; ``label_index`` defaults to labels in first-seen order."""
    if label_index is None:
        label_index = list(dict.fromkeys(c.label for c in cases))
    pos = {name: i for i, name in enumerate(label_index)}
    unknown = sorted({c.label for c in cases} - set(pos))
    if unknown:
        raise EncodingError(f"labels outside label_index: {unknown[:5]}")
    return LabeledDataset(
        tuple(encode_case(c, universe) for c in cases),
        np.array([pos[c.label] for c in cases], dtype=np.int64),
        tuple(label_index), universe, tuple(c.patient_id for c in cases),
    )


def split_by_patient(cases: Sequence[ClinicalCase], val_fraction: float,
                     seed: int) -> tuple[list[ClinicalCase], list[ClinicalCase]]:
    """Hold out ``round(val_fraction * n_patients)`` whole patients.

    The count is rounded half up and clamped to [1, n_patients - 1].
    Input order of cases is preserved on both sides.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    patients = sorted({c.patient_id for c in cases})
    if len(patients) < 2:
        raise ValueError("need at least two patients to split")
    n_val = min(max(math.floor(val_fraction * len(patients) + 0.5), 1), len(patients) - 1)
    rng = np.random.default_rng(seed)
    held = {patients[i] for i in rng.permutation(len(patients))[:n_val]}
    train = [c for c in cases if c.patient_id not in held]
    val = [c for c in cases if c.patient_id in held]
    return train, val


def balance(train: LabeledDataset, cap: int, seed: int) -> LabeledDataset:
    """Resample every label to exactly ``cap`` cases.

    Labels above the cap are undersampled without replacement, labels below
    it are upsampled with replacement, labels at the cap are kept as is.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    rng = np.random.default_rng(seed)
    by_label = [np.flatnonzero(train.labels == y) for y in range(train.n_classes)]
    empty = [train.label_index[y] for y, idx in enumerate(by_label) if len(idx) == 0]
    if empty:
        raise ValueError(f"labels with no examples: {empty}")
    picked = []
    for idx in by_label:
        if len(idx) > cap:
            picked.append(np.sort(rng.choice(idx, size=cap, replace=False)))
        elif len(idx) < cap:
            picked.append(rng.choice(idx, size=cap, replace=True))
        else:
            picked.append(idx)
    return train.take(np.concatenate(picked).tolist())


@dataclass(frozen=True)
class CoveragePlan:
    base_diseases: tuple[str, ...]
    steps: tuple[tuple[str, ...], ...]
    seed: int

    def __post_init__(self):
        seen = set(self.base_diseases)
        if len(seen) != len(self.base_diseases):
            raise ValueError("duplicate base disease")
        for step in self.steps:
            if not seen.isdisjoint(step) or len(set(step)) != len(step):
                raise ValueError("coverage steps must be disjoint from base and each other")
            seen |= set(step)

    def labels(self, step: int) -> tuple[str, ...]:
        """Label set of the dataset with ``step`` added groups."""
        out = list(self.base_diseases)
        for s in self.steps[:step]:
            out.extend(s)
        return tuple(out)


def plan_coverage(base_diseases: Sequence[str], extra_pool: Sequence[str], n_steps: int,
                  step_size: int, seed: int) -> CoveragePlan:
    if n_steps < 0 or step_size < 1:
        raise ValueError("n_steps must be >= 0 and step_size >= 1")
    overlap = set(base_diseases) & set(extra_pool)
    if overlap:
        raise ValueError(f"pool overlaps base diseases: {sorted(overlap)[:5]}")
    need = n_steps * step_size
    if len(extra_pool) < need:
        raise ValueError(f"pool has {len(extra_pool)} diseases, need {need}")
    rng = np.random.default_rng(seed)
    drawn = [extra_pool[i] for i in rng.choice(len(extra_pool), size=need, replace=False)]
    steps = tuple(tuple(drawn[i * step_size:(i + 1) * step_size]) for i in range(n_steps))
    return CoveragePlan(tuple(base_diseases), steps, seed)


def make_coverage_splits(all_cases: LabeledDataset, base_diseases: Sequence[str],
                         extra_pool: Sequence[str], n_steps: int, step_size: int,
                         seed: int) -> list[LabeledDataset]:
    """Datasets D0, D+step, D+2*step, ... built from ``all_cases``.

    Every label keeps the same cases, in the same order, in every split.
    """
    plan = plan_coverage(base_diseases, extra_pool, n_steps, step_size, seed)
    return [all_cases.restrict(plan.labels(s)) for s in range(n_steps + 1)]


class VignetteError(CorpusError):
    pass


@dataclass(frozen=True)
class VignetteLoad:
    dataset: LabeledDataset
    skipped: tuple[tuple[int, str], ...]  # (line, symptom) dropped as out-of-universe


def load_vignettes(path: str | Path, universe: SymptomUniverse,
                   label_index: Sequence[str]) -> VignetteLoad:
    """Read ``{findings: [{symptom, polarity}], diagnosis}`` rows.

    Symptoms may be canonical names or synonyms. Out-of-universe symptoms are
    dropped and reported; an unknown diagnosis fails the whole load.
    """
    pos = {name: i for i, name in enumerate(label_index)}
    k = len(universe)
    feats, labels, ids, skipped, bad = [], [], [], [], []
    for lineno, row in iter_jsonl(path):
        try:
            diagnosis = row["diagnosis"]
            findings = row["findings"]
        except KeyError as exc:
            raise VignetteError(f"missing field {exc}", lineno) from None
        if diagnosis not in pos:
            bad.append((lineno, diagnosis))
            continue
        bits = set()
        for f in findings:
            name = f["symptom"]
            if name not in universe:
                name = universe.synonym_map.get(name.lower(), name)
            if name not in universe:
                skipped.append((lineno, f["symptom"]))
                continue
            i = universe.index(name)
            bits.add(i if Polarity(f["polarity"]) is Polarity.PRESENT else k + i)
        feats.append(FeatureVector(tuple(sorted(bits)), 2 * k))
        labels.append(pos[diagnosis])
        ids.append(str(row.get("id", f"vignette-{lineno}")))
    if bad:
        rows = ", ".join(f"line {n} ({d!r})" for n, d in bad)
        raise VignetteError(f"diagnoses outside the label index: {rows}")
    if skipped:
        log.warning("%d vignette findings outside the symptom universe were skipped", len(skipped))
    ds = LabeledDataset(tuple(feats), np.array(labels, dtype=np.int64), tuple(label_index),
                        universe, tuple(ids))
    return VignetteLoad(ds, tuple(skipped))
