"""Command-line front end: generate, build-cases, train, eval, sweep, analyze, report.

Every command writes a ``manifest-<command>.json`` next to its outputs.
Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Sequence

from .cases import DEFAULT_TAU, build_all_cases, load_phenotypes
from .dataset import balance, encode_cases, load_vignettes, split_by_patient
from .ehr import (ClinicalCase, CorpusError, SymptomUniverse, read_cases, read_corpus,
                  write_cases, write_corpus)
from .findings import NegationRules
from .io import data_path, dumps_canonical, file_digest, load_config
from .metrics import DEFAULT_KS, mean_class_accuracy, predict_ranked, top_k_accuracy, write_metrics_csv
from .models import KIND_ALIASES, ModelSpec, TrainConfig, load_model, save_model, top_weights, train
from .sweep import (SweepConfig, format_slope_table, read_records, run_sweep, summarize,
                    write_records, write_summary)
from .synth import GenConfig, SCENARIOS, generate_cohort, generate_world

log = logging.getLogger("dxcoverage")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("dxcoverage")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = field(default_factory=tool_version)

    @staticmethod
    def hash_config(settings: dict) -> str:
        blob = json.dumps(settings, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest-{self.command}.json"
        path.write_text(dumps_canonical(asdict(self)), encoding="utf-8")
        return path


def _finish(command: str, args: argparse.Namespace, inputs: Sequence[Path],
            outputs: Sequence[Path], out_dir: Path, seed: int | None = None) -> None:
    settings = {k: v for k, v in vars(args).items() if k not in ("func", "verbose", "config")}
    RunManifest(
        command=command,
        config_hash=RunManifest.hash_config(settings),
        seed=seed,
        inputs={str(p): file_digest(p) for p in inputs},
        outputs={str(p): file_digest(p) for p in outputs},
    ).write(out_dir)


# -- argument types --------------------------------------------------------------------

def unit_interval(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{x} is outside [0, 1]")
    return x


def positive_int(text: str) -> int:
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if x < 1:
        raise argparse.ArgumentTypeError(f"{x} must be >= 1")
    return x


def int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return vals


def prob_pair(text: str) -> tuple[float, float]:
    parts = str(text).split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LOW,HIGH")
    lo, hi = (unit_interval(p) for p in parts)
    if not 0.0 < lo <= hi:
        raise argparse.ArgumentTypeError("need 0 < LOW <= HIGH <= 1")
    return lo, hi


def scenario_mix(text: str) -> dict[str, float]:
    mix = {}
    for item in str(text).split(","):
        key, _, val = item.partition("=")
        key = key.strip().upper()
        if key not in SCENARIOS or not val:
            raise argparse.ArgumentTypeError(f"bad mix entry {item!r}; use e.g. A=0.6,B=0.15,C=0.1,D=0.15")
        mix[key] = unit_interval(val)
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError("scenario weights must sum to 1")
    return mix


def model_kind(text: str) -> str:
    kind = KIND_ALIASES.get(text, text)
    if kind not in KIND_ALIASES.values():
        raise argparse.ArgumentTypeError(f"unknown model {text!r}; choose lr, mlp or emb")
    return kind


# -- shared helpers --------------------------------------------------------------------

def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _universe(path: str | None, cases: Sequence[ClinicalCase] = ()) -> SymptomUniverse:
    """Universe from a file, or the sorted set of symptoms named in ``cases``."""
    if path:
        return SymptomUniverse.from_dict(load_config(path))
    names = sorted({f.symptom for c in cases for f in c.findings})
    if not names:
        raise ValueError("cannot derive a symptom universe from an empty case file")
    return SymptomUniverse(tuple(names), {})


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


# -- commands --------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    if args.symptoms < args.diseases:
        raise UsageError("--symptoms must be at least --diseases")
    world = generate_world(args.diseases, args.symptoms, args.overlap, args.skew, args.seed,
                           core_prob=tuple(args.core_prob), mean_positive=args.mean_positive)
    cfg = GenConfig(args.patients, scenario_mix=args.mix, tau=args.tau, noise=args.noise,
                    seed=args.seed)
    cohort = generate_cohort(world, cfg)
    out = _out_dir(args.out)
    paths = [out / "corpus.jsonl", out / "world.json", out / "phenotypes.toml",
             out / "universe.json", out / "truth.csv"]
    write_corpus(paths[0], (g.timeline for g in cohort))
    world.save(paths[1])
    lines = ["[phenotypes]"]
    lines += [f"{json.dumps(p.disease)} = {json.dumps(sorted(p.codes))}" for p in world.phenotypes]
    paths[2].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths[3].write_text(dumps_canonical(world.universe.to_dict()), encoding="utf-8")
    with open(paths[4], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("patient_id", "disease", "scenario"))
        for g in cohort:
            w.writerow((g.timeline.patient_id, g.disease, g.scenario))
    _finish("generate", args, [], paths, out, args.seed)
    print(f"wrote {len(cohort)} timelines for {len(world.profiles)} diseases to {out}")
    return EXIT_OK


def cmd_build_cases(args: argparse.Namespace) -> int:
    _require(args, "corpus", "phenotypes")
    if args.tau < 1:
        raise UsageError("--tau must be >= 1")
    corpus = read_corpus(args.corpus)
    phenotypes = load_phenotypes(args.phenotypes)
    universe = _universe(args.universe or str(data_path("symptoms.json")))
    rules = NegationRules.from_file(args.negation_rules) if args.negation_rules else NegationRules()
    by_disease = build_all_cases(corpus, phenotypes, universe, rules, args.tau)
    out = _out_dir(args.out)
    cases_path, counts_path = out / "cases.jsonl", out / "counts.csv"
    write_cases(cases_path, (c for cases in by_disease.values() for c in cases))
    with open(counts_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("disease", "n_cases"))
        for disease, cases in by_disease.items():
            w.writerow((disease, len(cases)))
    inputs = [Path(args.corpus), Path(args.phenotypes)]
    inputs += [Path(p) for p in (args.universe, args.negation_rules) if p]
    _finish("build-cases", args, inputs, [cases_path, counts_path], out)
    total = sum(len(c) for c in by_disease.values())
    empty = [d for d, c in by_disease.items() if not c]
    print(f"{total} cases for {len(by_disease) - len(empty)} of {len(by_disease)} diseases")
    for disease, cases in by_disease.items():
        print(f"  {disease}\t{len(cases)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "cases")
    cases = read_cases(args.cases)
    if not cases:
        raise ValueError(f"{args.cases}: no cases")
    universe = _universe(args.universe, cases)
    label_index = tuple(sorted({c.label for c in cases}))
    train_cases, val_cases = split_by_patient(cases, args.val_fraction, args.seed)
    tr = encode_cases(train_cases, universe, label_index)
    va = encode_cases(val_cases, universe, label_index)
    bal = balance(tr, args.cap, args.seed)
    overrides = {"l2_lambda": args.l2}
    if args.hidden:
        overrides["hidden_sizes"] = tuple(args.hidden)
    if args.embedding_dim:
        overrides["embedding_dim"] = args.embedding_dim
    if args.dropout is not None:
        overrides["dropout_p"] = args.dropout
    spec = ModelSpec.default(args.model, tr.n_features, tr.n_classes, **overrides)
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, momentum=args.momentum,
                      max_epochs=args.epochs, early_stop_patience=args.patience, seed=args.seed)
    result = train(spec, bal, va, cfg)
    out = _out_dir(args.out)
    model_path, log_path = out / "model.npz", out / "train_log.csv"
    save_model(model_path, result.params, {"seed": args.seed, "cap": args.cap,
                                           "best_epoch": result.best_epoch})
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_loss", "val_top1"))
        for e in result.log:
            w.writerow((e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_top1)))
    inputs = [Path(args.cases)] + ([Path(args.universe)] if args.universe else [])
    _finish("train", args, inputs, [model_path, log_path], out, args.seed)
    best = result.log[result.best_epoch]
    print(f"{spec.kind}: {len(bal)} training rows, {tr.n_classes} classes, "
          f"best epoch {result.best_epoch} (validation top-1 {best.val_top1:.4f})")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "model")
    if bool(args.vignettes) == bool(args.cases):
        raise UsageError("give exactly one of --vignettes or --cases")
    params, meta = load_model(args.model)
    if args.vignettes:
        dataset = load_vignettes(args.vignettes, params.universe, params.label_index).dataset
    else:
        dataset = encode_cases(read_cases(args.cases), params.universe, params.label_index)
    if len(dataset) == 0:
        raise ValueError("evaluation set is empty")
    ranked = predict_ranked(params, params.spec, dataset)
    gold = dataset.labels.tolist()
    acc = top_k_accuracy(ranked, gold, args.ks)
    mca = mean_class_accuracy(ranked, gold)
    extra = meta.get("extra", {})
    out = _out_dir(args.out)
    metrics_path = out / "metrics.csv"
    rows = [{"run_id": Path(args.model).stem, "model_kind": params.spec.kind,
             "dataset_step": extra.get("dataset_step", 0), "seed": extra.get("seed", 0),
             "k": k, "accuracy": a} for k, a in acc.items()]
    write_metrics_csv(metrics_path, rows)
    inputs = [Path(args.model), Path(args.vignettes or args.cases)]
    _finish("eval", args, inputs, [metrics_path], out)
    print(f"{len(dataset)} cases  " + "  ".join(f"top-{k} {a:.4f}" for k, a in acc.items())
          + f"  mca {mca:.4f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    _require(args, "config")
    cfg_path = Path(args.config)
    raw = load_config(cfg_path)
    section = dict(raw.get("sweep", raw))

    def resolve(key: str) -> str | None:
        val = getattr(args, key, None) or section.get(key) or raw.get(key)
        if val and getattr(args, key, None) is None and not Path(val).is_absolute():
            val = str(cfg_path.parent / val)
        return val

    cases_path, universe_path = resolve("cases"), resolve("universe")
    if not cases_path:
        raise UsageError("the sweep needs a case file (--cases or `cases` in the config)")
    try:
        cfg = SweepConfig.from_dict(section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{cfg_path}: {exc}") from None
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if cfg.evaluation and not Path(cfg.evaluation).is_absolute():
        cfg = replace(cfg, evaluation=str(cfg_path.parent / cfg.evaluation))
    cases = read_cases(cases_path)
    universe = _universe(universe_path, cases)
    workers = args.workers if args.workers is not None else int(section.get("workers", 1))
    records = run_sweep(cfg, cases, universe, workers=workers)
    out = _out_dir(args.out or section.get("out") or "sweep_out")
    rec_path = out / "records.csv"
    write_records(rec_path, records)
    inputs = [cfg_path, Path(cases_path)] + [Path(p) for p in (universe_path, cfg.evaluation) if p]
    args.effective_config = cfg.to_dict()
    _finish("sweep", args, inputs, [rec_path], out, cfg.master_seed)
    print(f"{len(records)} records written to {rec_path}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    _require(args, "records")
    summary = summarize(read_records(args.records))
    out = _out_dir(args.out)
    paths = write_summary(out, summary)
    table = format_slope_table(summary)
    slopes = out / "slopes.txt"
    slopes.write_text(table + "\n", encoding="utf-8")
    _finish("analyze", args, [Path(args.records)], paths + [slopes], out)
    print(table)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    if not args.records and not args.model:
        raise UsageError("give --records, --model, or both")
    out = _out_dir(args.out)
    inputs, outputs = [], []
    if args.records:
        table = format_slope_table(summarize(read_records(args.records)))
        path = out / "slopes.txt"
        path.write_text(table + "\n", encoding="utf-8")
        inputs.append(Path(args.records))
        outputs.append(path)
        print(table)
    if args.model:
        params, _ = load_model(args.model)
        diseases = args.diseases.split(",") if args.diseases else list(params.label_index)
        path = out / "top_weights.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("disease", "direction", "rank", "feature", "weight"))
            for disease in diseases:
                pos, neg = top_weights(params, disease.strip(), args.top)
                print(f"{disease}")
                print("  + " + ", ".join(f"{n} ({v:.3f})" for n, v in pos))
                print("  - " + ", ".join(f"{n} ({v:.3f})" for n, v in neg))
                for direction, items in (("positive", pos), ("negative", neg)):
                    for rank, (name, val) in enumerate(items, 1):
                        w.writerow((disease, direction, rank, name, repr(val)))
        inputs.append(Path(args.model))
        outputs.append(path)
    _finish("report", args, inputs, outputs, out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="dxcoverage",
        description="Diagnosis-model coverage experiments on EHR-derived clinical cases.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, func, help_text: str, config_help: str = "TOML/JSON file of option defaults"):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help=config_help)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("generate", cmd_generate, "Generate a synthetic world and patient corpus.")
    p.add_argument("--diseases", type=positive_int, default=164)
    p.add_argument("--symptoms", type=positive_int, default=400)
    p.add_argument("--patients", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlap", type=unit_interval, default=0.3,
                   help="target mean pairwise symptom-support overlap")
    p.add_argument("--skew", type=float, default=0.0, help="prevalence skew exponent")
    p.add_argument("--tau", type=int, default=DEFAULT_TAU)
    p.add_argument("--noise", type=unit_interval, default=0.05)
    p.add_argument("--mix", type=scenario_mix, default=None,
                   help="scenario weights, e.g. A=0.6,B=0.15,C=0.1,D=0.15")
    p.add_argument("--core-prob", type=prob_pair, default=(0.15, 0.4),
                   help="LOW,HIGH mention probability of disease-specific symptoms")
    p.add_argument("--mean-positive", type=float, default=6.0,
                   help="expected number of present findings per note")
    p.add_argument("--out", default="generated")

    p = add("build-cases", cmd_build_cases, "Turn a corpus into labeled clinical cases.")
    p.add_argument("--corpus")
    p.add_argument("--phenotypes")
    p.add_argument("--universe", help="symptom universe JSON (default: bundled list)")
    p.add_argument("--negation-rules")
    p.add_argument("--tau", type=int, default=DEFAULT_TAU)
    p.add_argument("--out", default="cases")

    p = add("train", cmd_train, "Train one diagnosis model.")
    p.add_argument("--model", type=model_kind, default="logistic_regression", help="lr, mlp or emb")
    p.add_argument("--cases")
    p.add_argument("--universe", help="symptom universe JSON (default: symptoms in the cases)")
    p.add_argument("--cap", type=positive_int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=unit_interval, default=0.1)
    p.add_argument("--epochs", type=positive_int, default=50)
    p.add_argument("--patience", type=positive_int, default=5)
    p.add_argument("--batch-size", type=positive_int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--l2", type=float, default=0.01)
    p.add_argument("--hidden", type=int_list, default=None, help="hidden sizes, e.g. 256,128")
    p.add_argument("--embedding-dim", type=positive_int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--out", default="model")

    p = add("eval", cmd_eval, "Evaluate a trained model.")
    p.add_argument("--model", help="model .npz written by train")
    p.add_argument("--vignettes", help="JSONL of {findings, diagnosis}")
    p.add_argument("--cases", help="case JSONL as written by build-cases")
    p.add_argument("--ks", type=int_list, default=DEFAULT_KS)
    p.add_argument("--out", default="eval")

    p = add("sweep", cmd_sweep, "Run the accuracy vs. coverage sweep.", "sweep config (TOML/JSON)")
    p.add_argument("--cases", default=None)
    p.add_argument("--universe", default=None)
    p.add_argument("--workers", type=positive_int, default=None)
    p.add_argument("--seed", type=int, default=None, help="overrides master_seed")
    p.add_argument("--out", default=None)

    p = add("analyze", cmd_analyze, "Fit slopes and per-step statistics from sweep records.")
    p.add_argument("--records")
    p.add_argument("--out", default="analysis")

    p = add("report", cmd_report, "Print a slope table and/or top weights of a linear model.")
    p.add_argument("--records")
    p.add_argument("--model")
    p.add_argument("--diseases", help="comma-separated diseases (default: all)")
    p.add_argument("--top", type=positive_int, default=10)
    p.add_argument("--out", default="report")
    return parser, subs


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser,
                  args: argparse.Namespace, argv: Sequence[str]) -> argparse.Namespace:
    """Re-parse with config-file values as defaults so explicit flags win."""
    raw = load_config(args.config)
    section = raw.get(args.command, raw)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in section.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        action = known[dest]
        if action.type is not None and not isinstance(val, (dict, list)):
            val = action.type(str(val))
        elif action.type is not None and isinstance(val, list):
            val = action.type(",".join(str(v) for v in val))
        defaults[dest] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = subs[args.command]
    try:
        if args.config and args.command != "sweep":
            args = _apply_config(parser, sub, args, argv)
        if args.command == "generate" and args.mix is None:
            args.mix = dict(GenConfig(0).scenario_mix)
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        sub.print_usage(sys.stderr)
        print(f"dxcoverage {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dxcoverage {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
