import csv
from dataclasses import replace

import numpy as np
import pytest

from dxcoverage.cases import build_all_cases
from dxcoverage.dataset import LabeledDataset, balance, make_coverage_splits
from dxcoverage.metrics import predict_ranked, top_k_accuracy
from dxcoverage.models import TrainConfig, train
from dxcoverage.sweep import (ModelEntry, SweepConfig, SweepRecord, derive_seed, plan_seed,
                              prepare, read_records, run_seed, run_sweep, summarize,
                              write_records, write_summary)
from dxcoverage.synth import GenConfig, generate_timelines, generate_world


@pytest.fixture(scope="module")
def corpus():
    world = generate_world(10, 40, 0.3, 0.0, seed=2)
    tls = generate_timelines(world, GenConfig(600, seed=4))
    by = build_all_cases(tls, world.phenotypes, world.universe)
    return [c for d in sorted(by) for c in by[d]], world.universe


CFG = SweepConfig(n_base=4, n_steps=2, step_size=2, n_seeds=2, cap=30,
                  models=(ModelEntry("lr", "lr"), ModelEntry("mlp", "mlp", {"hidden_sizes": [8]})),
                  train=TrainConfig(max_epochs=4, early_stop_patience=2), ks=(1, 3), master_seed=5)


@pytest.fixture(scope="module")
def records(corpus):
    return run_sweep(CFG, *corpus)


def test_record_count(records):
    assert len(records) == 2 * 3 * 2 * 2
    assert all(0.0 <= r.accuracy <= 1.0 for r in records)
    assert records == sorted(records, key=SweepRecord.sort_key)
    assert {r.n_added_diseases for r in records} == {0, 2, 4}


def test_rerun_is_byte_identical(corpus, records, tmp_path):
    write_records(tmp_path / "a.csv", records)
    write_records(tmp_path / "b.csv", run_sweep(CFG, *corpus))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_records(tmp_path / "a.csv") == records


def test_parallel_matches_serial(corpus, records):
    assert run_sweep(CFG, *corpus, workers=2) == records


def test_record_equals_manual_composition(corpus, records):
    cases, universe = corpus
    data = prepare(CFG, cases, universe)
    seed_index, step, entry = 1, 2, CFG.models[0]
    splits = make_coverage_splits(data.train_all, data.base, data.pool, CFG.n_steps,
                                  CFG.step_size, plan_seed(CFG, seed_index))
    tr = splits[step]
    va = data.val_all.restrict(tr.label_index)
    rs = run_seed(CFG, step, seed_index, entry.name)
    spec = entry.spec(tr.n_features, tr.n_classes)
    params = train(spec, balance(tr, CFG.cap, rs), va, replace(CFG.train, seed=rs)).params
    ev = data.evaluation
    gold = np.array([params.label_index.index(ev.label_index[y]) for y in ev.labels])
    relabeled = LabeledDataset(ev.features, gold, params.label_index, ev.universe, ev.patient_ids)
    expect = top_k_accuracy(predict_ranked(params, spec, relabeled), gold, CFG.ks)
    got = {r.k: r.accuracy for r in records
           if (r.model_kind, r.dataset_step, r.seed) == (entry.name, step, seed_index)}
    assert got == expect


def test_evaluation_set_is_fixed(corpus):
    cases, universe = corpus
    a = prepare(CFG, cases, universe).evaluation
    b = prepare(replace(CFG, n_seeds=3, step_size=1), cases, universe).evaluation
    assert a.features == b.features and a.labels.tolist() == b.labels.tolist()
    assert set(a.label_index) == set(prepare(CFG, cases, universe).base)


def test_seeds_depend_only_on_their_parts():
    assert derive_seed(5, 1, 0, "lr") == derive_seed(5, 1, 0, "lr")
    assert len({derive_seed(5, s, r, m) for s in range(3) for r in range(3) for m in ("lr", "mlp")}) == 18
    more = replace(CFG, models=CFG.models + (ModelEntry("emb", "mlp_embedding"),))
    assert run_seed(more, 1, 1, "lr") == run_seed(CFG, 1, 1, "lr")


def test_errors_name_the_run(corpus):
    bad = replace(CFG, models=(ModelEntry("broken", "lr", {"hidden_sizes": [3]}),))
    with pytest.raises(RuntimeError, match=r"step=0, seed=0, model=broken"):
        run_sweep(bad, *corpus)


def test_config_round_trip():
    assert SweepConfig.from_dict(CFG.to_dict()) == CFG


def test_summary_single_group():
    recs = [SweepRecord("lr", s, 10 * s, r, 1, 0.8 - 0.01 * s) for s in range(3) for r in range(2)]
    summary = summarize(recs)
    assert list(summary.fits) == [("lr", 1)]
    assert summary.fits[("lr", 1)].beta_D == pytest.approx(-0.001)
    assert all(s.std == 0.0 and s.n == 2 for s in summary.steps)


def test_group_means_recomputed_from_csv(records, tmp_path):
    write_records(tmp_path / "r.csv", records)
    write_summary(tmp_path / "out", summarize(read_records(tmp_path / "r.csv")))
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(tmp_path / "out" / "steps.csv", newline="") as fh:
        steps = list(csv.DictReader(fh))
    assert len(steps) == 2 * 2 * 3
    for s in steps:
        vals = [float(r["accuracy"]) for r in rows
                if (r["model_kind"], r["k"], r["n_added_diseases"]) == (s["model_kind"], s["k"], s["n_added_diseases"])]
        assert float(s["mean_accuracy"]) == pytest.approx(sum(vals) / len(vals), abs=1e-12)
        assert float(s["std_accuracy"]) == pytest.approx(np.std(vals, ddof=1), abs=1e-12)
    plot = tmp_path / "out" / "plot_data" / "lr_top1.csv"
    assert plot.read_text().splitlines()[0] == "x,y,yerr"
