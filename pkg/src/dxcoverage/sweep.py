"""Accuracy vs. disease-coverage sweep.

Every model is trained on D0, D+step, D+2*step, ... for several random
choices of the added diseases and scored on one fixed evaluation set whose
labels are the base diseases. :func:`summarize` then fits
``accuracy = beta_D * n_added + beta_M`` per (model, k).
"""

from __future__ import annotations

import csv
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (LabeledDataset, balance, encode_cases, load_vignettes, plan_coverage,
                      split_by_patient)
from .ehr import ClinicalCase, SymptomUniverse
from .metrics import DEFAULT_KS, gold_ranks, top_k_from_ranks
from .models import ModelSpec, TrainConfig, train
from .stats import SlopeFit, fit_slope

log = logging.getLogger(__name__)

RECORD_FIELDS = ("run_id", "model_kind", "dataset_step", "n_added_diseases", "seed", "k", "accuracy")


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed from a master seed and a tuple of labels."""
    words = [int(master) & 0xFFFFFFFF]
    for p in parts:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF)
    state = np.random.SeedSequence(words).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


@dataclass(frozen=True)
class ModelEntry:
    name: str
    kind: str
    options: dict = field(default_factory=dict)

    def spec(self, input_dim: int, n_classes: int) -> ModelSpec:
        opts = dict(self.options)
        if "hidden_sizes" in opts:
            opts["hidden_sizes"] = tuple(opts["hidden_sizes"])
        return ModelSpec.default(self.kind, input_dim, n_classes, **opts)


@dataclass(frozen=True)
class SweepConfig:
    base_diseases: tuple[str, ...] = ()
    n_base: int = 39
    pool: tuple[str, ...] = ()
    n_steps: int = 5
    step_size: int = 20
    models: tuple[ModelEntry, ...] = (ModelEntry("lr", "logistic_regression"),
                                      ModelEntry("mlp", "mlp"))
    n_seeds: int = 5
    train: TrainConfig = TrainConfig()
    cap: int = 300
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    evaluation: str | None = None
    ks: tuple[int, ...] = DEFAULT_KS
    master_seed: int = 0

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if not self.models:
            raise ValueError("no models configured")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d.get("sweep", d))
        kw: dict = {}
        for key in ("base_diseases", "pool", "ks"):
            if key in d:
                kw[key] = tuple(d.pop(key))
        if "models" in d:
            kw["models"] = tuple(
                ModelEntry(m.get("name", m["kind"]), m["kind"],
                           {k: v for k, v in m.items() if k not in ("name", "kind")})
                for m in d.pop("models"))
        if "train" in d:
            kw["train"] = TrainConfig(**d.pop("train"))
        for key in ("cases", "universe", "out", "workers"):
            d.pop(key, None)
        kw.update(d)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "base_diseases": list(self.base_diseases), "n_base": self.n_base,
            "pool": list(self.pool), "n_steps": self.n_steps, "step_size": self.step_size,
            "models": [{"name": m.name, "kind": m.kind, **m.options} for m in self.models],
            "n_seeds": self.n_seeds, "train": vars(self.train).copy(), "cap": self.cap,
            "val_fraction": self.val_fraction, "test_fraction": self.test_fraction,
            "evaluation": self.evaluation, "ks": list(self.ks), "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class SweepRecord:
    model_kind: str
    dataset_step: int
    n_added_diseases: int
    seed: int
    k: int
    accuracy: float

    @property
    def run_id(self) -> str:
        return f"{self.model_kind}-s{self.dataset_step}-r{self.seed}"

    def sort_key(self):
        return (self.model_kind, self.dataset_step, self.seed, self.k)


@dataclass
class SweepData:
    """Everything a sweep run needs, prepared once."""
    base: tuple[str, ...]
    pool: tuple[str, ...]
    train_all: LabeledDataset
    val_all: LabeledDataset
    evaluation: LabeledDataset


def choose_diseases(cfg: SweepConfig, labels: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    labels = sorted(set(labels))
    if cfg.base_diseases:
        base = tuple(cfg.base_diseases)
    else:
        if cfg.n_base > len(labels):
            raise ValueError(f"n_base={cfg.n_base} exceeds {len(labels)} available diseases")
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "base"))
        base = tuple(sorted(labels[i] for i in rng.choice(len(labels), cfg.n_base, replace=False)))
    missing = set(base) - set(labels)
    if missing:
        raise ValueError(f"base diseases without cases: {sorted(missing)[:5]}")
    pool = tuple(cfg.pool) if cfg.pool else tuple(l for l in labels if l not in set(base))
    return base, pool


def prepare(cfg: SweepConfig, cases: Sequence[ClinicalCase], universe: SymptomUniverse) -> SweepData:
    """Fix the evaluation set and the train/validation patient split."""
    base, pool = choose_diseases(cfg, [c.label for c in cases])
    label_index = base + pool
    known = set(label_index)
    cases = [c for c in cases if c.label in known]
    if cfg.evaluation:
        evaluation = load_vignettes(cfg.evaluation, universe, base).dataset
        rest = list(cases)
    else:
        rest, test = split_by_patient(cases, cfg.test_fraction, derive_seed(cfg.master_seed, "test"))
        evaluation = encode_cases([c for c in test if c.label in set(base)], universe, base)
    if len(evaluation) == 0:
        raise ValueError("evaluation set is empty")
    train_cases, val_cases = split_by_patient(rest, cfg.val_fraction,
                                              derive_seed(cfg.master_seed, "validation"))
    return SweepData(base, pool,
                     encode_cases(train_cases, universe, label_index),
                     encode_cases(val_cases, universe, label_index),
                     evaluation)


def plan_seed(cfg: SweepConfig, seed_index: int) -> int:
    return derive_seed(cfg.master_seed, "plan", seed_index)


def run_seed(cfg: SweepConfig, step: int, seed_index: int, model_name: str) -> int:
    return derive_seed(cfg.master_seed, step, seed_index, model_name)


def evaluate_on(params, evaluation: LabeledDataset, ks: Sequence[int]) -> dict[int, float]:
    """Top-k accuracy of ``params`` on an evaluation set labeled by name."""
    pos = {name: i for i, name in enumerate(params.label_index)}
    remap = np.array([pos[name] for name in evaluation.label_index], dtype=np.int64)
    relabeled = LabeledDataset(evaluation.features, remap[evaluation.labels], params.label_index,
                               evaluation.universe, evaluation.patient_ids)
    return top_k_from_ranks(gold_ranks(params, relabeled), ks)


def run_one(cfg: SweepConfig, data: SweepData, seed_index: int, step: int,
            entry: ModelEntry) -> list[SweepRecord]:
    plan = plan_coverage(data.base, data.pool, cfg.n_steps, cfg.step_size,
                         plan_seed(cfg, seed_index))
    labels = plan.labels(step)
    try:
        tr = data.train_all.restrict(labels)
        va = data.val_all.restrict(labels)
        rs = run_seed(cfg, step, seed_index, entry.name)
        bal = balance(tr, cfg.cap, rs)
        spec = entry.spec(tr.n_features, tr.n_classes)
        result = train(spec, bal, va, replace(cfg.train, seed=rs))
        acc = evaluate_on(result.params, data.evaluation, cfg.ks)
    except Exception as exc:
        raise RuntimeError(f"sweep run failed (step={step}, seed={seed_index}, "
                           f"model={entry.name}): {exc}") from exc
    n_added = step * cfg.step_size
    return [SweepRecord(entry.name, step, n_added, seed_index, k, acc[k]) for k in sorted(acc)]


_STATE: tuple[SweepConfig, SweepData] | None = None


def _init_worker(cfg: SweepConfig, data: SweepData) -> None:
    global _STATE
    _STATE = (cfg, data)


def _run_job(job: tuple[int, int, int]) -> list[SweepRecord]:
    assert _STATE is not None
    cfg, data = _STATE
    seed_index, step, mi = job
    return run_one(cfg, data, seed_index, step, cfg.models[mi])


def run_sweep(cfg: SweepConfig, cases: Sequence[ClinicalCase], universe: SymptomUniverse,
              workers: int = 1) -> list[SweepRecord]:
    """All (step, seed, model, k) records, sorted by (model, step, seed, k)."""
    data = prepare(cfg, cases, universe)
    jobs = [(s, step, mi) for s in range(cfg.n_seeds) for step in range(cfg.n_steps + 1)
            for mi in range(len(cfg.models))]
    records: list[SweepRecord] = []
    if workers <= 1:
        for s, step, mi in jobs:
            log.info("run model=%s step=%d seed=%d", cfg.models[mi].name, step, s)
            records.extend(run_one(cfg, data, s, step, cfg.models[mi]))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(cfg, data)) as pool:
            for recs in pool.map(_run_job, jobs):
                records.extend(recs)
    return sorted(records, key=SweepRecord.sort_key)


# -- output ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_records(path: str | Path, records: Sequence[SweepRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in sorted(records, key=SweepRecord.sort_key):
            w.writerow([r.run_id, r.model_kind, r.dataset_step, r.n_added_diseases,
                        r.seed, r.k, _fmt(r.accuracy)])


def read_records(path: str | Path) -> list[SweepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    missing = set(RECORD_FIELDS) - set(rows[0] if rows else RECORD_FIELDS)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return [SweepRecord(r["model_kind"], int(r["dataset_step"]), int(r["n_added_diseases"]),
                        int(r["seed"]), int(r["k"]), float(r["accuracy"])) for r in rows]


@dataclass(frozen=True)
class StepStat:
    model_kind: str
    k: int
    n_added_diseases: int
    mean: float
    std: float
    n: int


@dataclass
class Summary:
    fits: dict[tuple[str, int], SlopeFit]
    steps: list[StepStat]


def summarize(records: Sequence[SweepRecord]) -> Summary:
    """Slope fit per (model, k) over all seeds, plus per-step mean and
    sample standard deviation across seeds (0 for a single seed)."""
    if not records:
        raise ValueError("no records")
    groups: dict[tuple[str, int], list[SweepRecord]] = {}
    for r in sorted(records, key=SweepRecord.sort_key):
        groups.setdefault((r.model_kind, r.k), []).append(r)
    fits, steps = {}, []
    for (model, k), recs in sorted(groups.items()):
        fits[(model, k)] = fit_slope([(r.n_added_diseases, r.accuracy) for r in recs])
        by_x: dict[int, list[float]] = {}
        for r in recs:
            by_x.setdefault(r.n_added_diseases, []).append(r.accuracy)
        for x, vals in sorted(by_x.items()):
            a = np.array(vals)
            std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
            steps.append(StepStat(model, k, x, float(a.mean()), std, len(a)))
    return Summary(fits, steps)


SUMMARY_FIELDS = ("model_kind", "k", "beta_D", "beta_M", "std_err", "t_value", "p_value", "n_points")
STEP_FIELDS = ("model_kind", "k", "n_added_diseases", "mean_accuracy", "std_accuracy", "n_seeds")


def write_summary(out_dir: str | Path, summary: Summary) -> list[Path]:
    """Write summary.csv, steps.csv and one plot-data CSV per (model, k)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "summary.csv", out / "steps.csv"]
    with open(paths[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for (model, k), f in sorted(summary.fits.items()):
            w.writerow([model, k, _fmt(f.beta_D), _fmt(f.beta_M), _fmt(f.std_err),
                        _fmt(f.t_value), _fmt(f.p_value), f.n_points])
    with open(paths[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_FIELDS)
        for s in summary.steps:
            w.writerow([s.model_kind, s.k, s.n_added_diseases, _fmt(s.mean), _fmt(s.std), s.n])
    plot_dir = out / "plot_data"
    plot_dir.mkdir(exist_ok=True)
    for model, k in sorted(summary.fits):
        p = plot_dir / f"{model}_top{k}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "y", "yerr"))
            for s in summary.steps:
                if s.model_kind == model and s.k == k:
                    w.writerow([s.n_added_diseases, _fmt(s.mean), _fmt(s.std)])
        paths.append(p)
    return paths


def format_slope_table(summary: Summary) -> str:
    """Plain-text table of slopes in accuracy points per added disease."""
    lines = [f"{'model':<12}{'k':>4}{'beta_D (pts)':>14}{'std err':>10}{'t':>9}{'p':>11}"]
    for (model, k), f in sorted(summary.fits.items()):
        t = f"{f.t_value:9.2f}" if math.isfinite(f.t_value) else f"{f.t_value:>9}"
        lines.append(f"{model:<12}{k:>4}{100 * f.beta_D:14.4f}{100 * f.std_err:10.4f}{t}{f.p_value:11.3g}")
    return "\n".join(lines)
