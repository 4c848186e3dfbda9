"""Ranked-prediction evaluation: top-k accuracy (recall@k) and mean
per-class accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .dataset import LabeledDataset
from .models import Batch, ModelParams, ModelSpec, predict_proba

DEFAULT_KS = (1, 3, 5, 10, 20)
METRIC_FIELDS = ("run_id", "model_kind", "dataset_step", "seed", "k", "accuracy")


@dataclass(frozen=True)
class RankedPrediction:
    case_id: str
    ranked_labels: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.ranked_labels)) != len(self.ranked_labels):
            raise ValueError(f"{self.case_id}: duplicate labels in ranking")

    def rank_of(self, label: int) -> int | None:
        """1-based position of ``label``, or None when outside the ranking."""
        try:
            return self.ranked_labels.index(label) + 1
        except ValueError:
            return None


def rank_probabilities(probs: np.ndarray) -> np.ndarray:
    """Label indices by descending probability; ties by ascending label."""
    return np.argsort(-probs, axis=1, kind="stable")


def predict_ranked(params: ModelParams, spec: ModelSpec,
                   dataset: LabeledDataset) -> list[RankedPrediction]:
    if spec != params.spec:
        raise ValueError("spec does not match params")
    if tuple(dataset.label_index) != tuple(params.label_index):
        raise ValueError("dataset label_index differs from the model's")
    if dataset.n_features != spec.input_dim:
        raise ValueError("dataset encoded against a different symptom universe")
    probs = predict_proba(params, Batch.from_dataset(dataset))
    order = rank_probabilities(probs)
    ids = dataset.patient_ids or tuple(str(i) for i in range(len(dataset)))
    return [RankedPrediction(ids[i], tuple(order[i].tolist())) for i in range(len(dataset))]


def gold_ranks(params: ModelParams, dataset: LabeledDataset) -> np.ndarray:
    """1-based rank of each case's gold label (same tie rule as predict_ranked)."""
    if tuple(dataset.label_index) != tuple(params.label_index):
        raise ValueError("dataset label_index differs from the model's")
    probs = predict_proba(params, Batch.from_dataset(dataset))
    return kernels.gold_ranks(np.ascontiguousarray(probs), np.ascontiguousarray(dataset.labels))


def top_k_from_ranks(ranks: Sequence[int] | np.ndarray, ks: Iterable[int]) -> dict[int, float]:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("empty evaluation set")
    return {int(k): float(np.mean(ranks <= k)) for k in sorted(set(ks))}


def top_k_accuracy(predictions: Sequence[RankedPrediction], gold: Sequence[int],
                   ks: Iterable[int] = DEFAULT_KS) -> dict[int, float]:
    """Fraction of cases whose gold label is among the first ``k`` ranked."""
    if len(predictions) != len(gold):
        raise ValueError("predictions and gold differ in length")
    if not predictions:
        raise ValueError("empty evaluation set")
    ks = sorted(set(int(k) for k in ks))
    if ks and ks[0] < 1:
        raise ValueError("k must be >= 1")
    big = len(predictions[0].ranked_labels) + 1
    ranks = [pred.rank_of(int(g)) or big for pred, g in zip(predictions, gold)]
    return top_k_from_ranks(ranks, ks)


def mean_class_accuracy(predictions: Sequence[RankedPrediction], gold: Sequence[int]) -> float:
    """Unweighted mean over gold classes of per-class top-1 accuracy."""
    if not predictions:
        raise ValueError("empty evaluation set")
    if len(predictions) != len(gold):
        raise ValueError("predictions and gold differ in length")
    gold = np.asarray(gold)
    top1 = np.array([p.ranked_labels[0] for p in predictions])
    return float(np.mean([np.mean(top1[gold == c] == c) for c in np.unique(gold)]))


def write_metrics_csv(path: str | Path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(row[k])) if k == "accuracy" else row[k]) for k in METRIC_FIELDS})
