"""Symptom-to-diagnosis classifiers trained by minibatch SGD with momentum.

Three architectures share one input layout (``2K`` sparse binary features)
and one output (softmax over ``L`` diseases):

``logistic_regression``
    logits = z @ W + b
``mlp``
    ReLU hidden layers (default 256 then 128), then a linear softmax layer
``mlp_embedding``
    separate embedding tables for present and absent symptoms, averaged over
    the active bits, then dropout, ReLU, ReLU hidden layer(s) and softmax

The objective is mean cross-entropy over the batch plus ``l2_lambda`` times
the sum of squared weights. Biases are never penalised; embedding tables are
penalised only in ``mlp_embedding``.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .dataset import FeatureVector, LabeledDataset
from .ehr import SymptomUniverse

KINDS = ("logistic_regression", "mlp", "mlp_embedding")
KIND_ALIASES = {"lr": "logistic_regression", "mlp": "mlp", "emb": "mlp_embedding",
                "mlp-embedding": "mlp_embedding", "mlp_embedding": "mlp_embedding",
                "logistic_regression": "logistic_regression"}
EPS = 1e-12
MODEL_FORMAT = "dxcoverage-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    n_classes: int
    hidden_sizes: tuple[int, ...] | None = None  # None: the kind's default
    embedding_dim: int = 128
    dropout_p: float = 0.0
    l2_lambda: float = 0.01

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        hidden = self.hidden_sizes
        if hidden is None:
            hidden = {"logistic_regression": (), "mlp": (256, 128)}.get(
                kind, (max(self.embedding_dim // 2, 1),))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in hidden))
        if kind == "logistic_regression" and self.hidden_sizes:
            raise ValueError("logistic regression takes no hidden layers")
        if self.input_dim < 2 or self.input_dim % 2:
            raise ValueError("input_dim must be a positive even number (2K)")
        if self.n_classes < 1 or self.embedding_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")

    @classmethod
    def default(cls, kind: str, input_dim: int, n_classes: int, **overrides) -> "ModelSpec":
        """Repo defaults per kind: MLP 256-128; embedding E=128, E/2 hidden, dropout 0.5."""
        kind = KIND_ALIASES.get(kind, kind)
        kw: dict = {"dropout_p": 0.5} if kind == "mlp_embedding" else {}
        kw.update(overrides)
        return cls(kind, input_dim, n_classes, **kw)

    @property
    def n_symptoms(self) -> int:
        return self.input_dim // 2

    def shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "logistic_regression":
            return {"W": (self.input_dim, self.n_classes), "b": (self.n_classes,)}
        out: dict[str, tuple[int, ...]] = {}
        if self.kind == "mlp":
            widths = [self.input_dim, *self.hidden_sizes, self.n_classes]
        else:
            out["E_present"] = (self.n_symptoms, self.embedding_dim)
            out["E_absent"] = (self.n_symptoms, self.embedding_dim)
            widths = [self.embedding_dim, *self.hidden_sizes, self.n_classes]
        for i in range(len(widths) - 1):
            out[f"W{i + 1}"] = (widths[i], widths[i + 1])
            out[f"b{i + 1}"] = (widths[i + 1],)
        return out

    def penalized(self) -> list[str]:
        """Parameter names entering the L2 term."""
        names = [n for n in self.shapes() if n.startswith("W")]
        if self.kind == "mlp_embedding":
            names += ["E_present", "E_absent"]
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class ModelParams:
    spec: ModelSpec
    label_index: tuple[str, ...]
    universe: SymptomUniverse
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.shapes()
        if set(shapes) != set(self.arrays):
            raise ValueError(f"parameter names {sorted(self.arrays)} do not match spec")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: shape {self.arrays[name].shape} != {shape}")
        if len(self.label_index) != self.spec.n_classes:
            raise ValueError("label_index length differs from n_classes")
        if 2 * len(self.universe) != self.spec.input_dim:
            raise ValueError("universe size differs from input_dim / 2")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.label_index, self.universe,
                           {k: v.copy() for k, v in self.arrays.items()})

    def l2(self) -> float:
        return float(sum(np.sum(self.arrays[n] ** 2) for n in self.spec.penalized()))


def init_params(spec: ModelSpec, label_index: Sequence[str], universe: SymptomUniverse,
                rng: np.random.Generator) -> ModelParams:
    """Uniform in +-1/sqrt(fan_in); biases zero.

    An embedding lookup reads one row per active bit, so its fan-in is 1.
    """
    arrays = {}
    for name, shape in spec.shapes().items():
        if name.startswith("b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = 1 if name.startswith("E_") else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(spec, tuple(label_index), universe, arrays)


# -- forward / backward ---------------------------------------------------------

@dataclass
class Batch:
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.indptr) - 1

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], labels=None) -> "Batch":
        indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
        np.cumsum([len(v.indices) for v in vectors], out=indptr[1:])
        indices = np.array([i for v in vectors for i in v.indices], dtype=np.int64)
        lab = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(indptr, indices, lab)

    @classmethod
    def from_dataset(cls, ds: LabeledDataset, rows: np.ndarray | None = None) -> "Batch":
        indptr, indices = ds.csr
        if rows is None:
            return cls(indptr, indices, ds.labels)
        return gather_rows(indptr, indices, rows, ds.labels)


def gather_rows(indptr, indices, rows, labels=None) -> Batch:
    rows = np.asarray(rows, dtype=np.int64)
    starts = indptr[rows]
    lengths = indptr[rows + 1] - starts
    new_indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lengths, out=new_indptr[1:])
    offsets = np.repeat(starts - new_indptr[:-1], lengths)
    new_indices = indices[offsets + np.arange(new_indptr[-1])]
    return Batch(new_indptr, new_indices, None if labels is None else labels[rows])


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    if len(batch.indices) and (batch.indices.min() < 0 or batch.indices.max() >= spec.input_dim):
        raise ValueError(f"feature index outside [0, {spec.input_dim})")


def _forward(params: ModelParams, batch: Batch, train_mode: bool,
             rng: np.random.Generator | None):
    spec = params.spec
    a = params.arrays
    _check_batch(spec, batch)
    cache: dict = {}
    if spec.kind == "logistic_regression":
        logits = kernels.spmm(batch.indptr, batch.indices, None, a["W"]) + a["b"]
        return softmax(logits), cache

    n_layers = len(spec.hidden_sizes) + 1
    drop = train_mode and spec.dropout_p > 0
    if drop and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = 1.0 - spec.dropout_p

    def dropout(h, key):
        if not drop:
            return h
        mask = (rng.random(h.shape) < keep) / keep
        cache[key] = mask
        return h * mask

    if spec.kind == "mlp":
        h = kernels.spmm(batch.indptr, batch.indices, None, a["W1"]) + a["b1"]
        h = np.maximum(h, 0.0)
        h = dropout(h, "mask1")
        cache["h1"] = h
        first_dense = 2
    else:
        counts = np.diff(batch.indptr).astype(np.float64)
        scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        table = np.vstack([a["E_present"], a["E_absent"]])
        avg = kernels.spmm(batch.indptr, batch.indices, scale, table)
        cache["scale"] = scale
        h = dropout(avg, "mask0")
        cache["pre0"] = h
        h = np.maximum(h, 0.0)
        cache["h0"] = h
        first_dense = 1
    for i in range(first_dense, n_layers + 1):
        z = h @ a[f"W{i}"] + a[f"b{i}"]
        if i == n_layers:
            return softmax(z), cache
        h = np.maximum(z, 0.0)
        h = dropout(h, f"mask{i}")
        cache[f"h{i}"] = h
    raise AssertionError("unreachable")


def _backward(params: ModelParams, batch: Batch, probs: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
    spec = params.spec
    a = params.arrays
    n = len(batch)
    delta = probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    g: dict[str, np.ndarray] = {}
    if spec.kind == "logistic_regression":
        g["W"] = kernels.spmm_t(batch.indptr, batch.indices, None, delta, spec.input_dim)
        g["b"] = delta.sum(axis=0)
    else:
        n_layers = len(spec.hidden_sizes) + 1
        first_dense = 2 if spec.kind == "mlp" else 1
        for i in range(n_layers, first_dense - 1, -1):
            h_in = cache[f"h{i - 1}"]
            g[f"W{i}"] = h_in.T @ delta
            g[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ a[f"W{i}"].T
            if f"mask{i - 1}" in cache:
                delta = delta * cache[f"mask{i - 1}"]
            if i - 1 >= 1:
                delta = delta * (h_in > 0)
            else:
                delta = delta * (cache["pre0"] > 0)
        if spec.kind == "mlp":
            g["W1"] = kernels.spmm_t(batch.indptr, batch.indices, None, delta, spec.input_dim)
            g["b1"] = delta.sum(axis=0)
        else:
            gt = kernels.spmm_t(batch.indptr, batch.indices, cache["scale"], delta, spec.input_dim)
            k = spec.n_symptoms
            g["E_present"] = gt[:k]
            g["E_absent"] = gt[k:]
    lam = spec.l2_lambda
    if lam:
        for name in spec.penalized():
            g[name] = g[name] + 2.0 * lam * a[name]
    return g


def predict_proba(params: ModelParams, batch: Batch, train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    return _forward(params, batch, train_mode, rng)[0]


def forward(params: ModelParams, spec: ModelSpec, z: FeatureVector | np.ndarray,
            train_mode: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities for a single feature vector (sparse or dense 0/1)."""
    if spec != params.spec:
        raise ValueError("spec does not match params")
    if isinstance(z, FeatureVector):
        if z.dim != spec.input_dim:
            raise ValueError(f"feature length {z.dim} != {spec.input_dim}")
        batch = Batch.from_vectors([z])
    else:
        z = np.asarray(z)
        if z.shape != (spec.input_dim,):
            raise ValueError(f"feature length {z.shape} != ({spec.input_dim},)")
        nz = np.flatnonzero(z)
        batch = Batch(np.array([0, len(nz)], dtype=np.int64), nz.astype(np.int64))
    return predict_proba(params, batch, train_mode, rng)[0]


def loss(probabilities: np.ndarray, gold: int, params: ModelParams | None = None,
         l2_lambda: float | None = None) -> float:
    """Cross-entropy of one prediction plus the L2 penalty of ``params``."""
    ce = -np.log(max(float(probabilities[gold]), EPS))
    if params is None:
        return float(ce)
    lam = params.spec.l2_lambda if l2_lambda is None else l2_lambda
    return float(ce + lam * params.l2())


def batch_loss(params: ModelParams, batch: Batch, train_mode: bool = False,
               rng: np.random.Generator | None = None) -> float:
    probs = predict_proba(params, batch, train_mode, rng)
    p = probs[np.arange(len(batch)), batch.labels]
    return float(np.mean(-np.log(np.maximum(p, EPS))) + params.spec.l2_lambda * params.l2())


def gradients(params: ModelParams, spec: ModelSpec, batch: Batch, train_mode: bool = False,
              rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Analytic gradient of the mean batch loss (L2 term included)."""
    if spec != params.spec:
        raise ValueError("spec does not match params")
    if len(batch) == 0 or batch.labels is None:
        raise ValueError("gradients need a non-empty labeled batch")
    probs, cache = _forward(params, batch, train_mode, rng)
    return _backward(params, batch, probs, cache)


# -- training ---------------------------------------------------------------------

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_top1: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochLog]
    best_epoch: int


def top1_accuracy(params: ModelParams, ds: LabeledDataset) -> float:
    if len(ds) == 0:
        return 0.0
    probs = predict_proba(params, Batch.from_dataset(ds))
    ranks = kernels.gold_ranks(np.ascontiguousarray(probs), np.ascontiguousarray(ds.labels))
    return float(np.mean(ranks == 1))


def canonical_order(ds: LabeledDataset) -> list[int]:
    """Case order that does not depend on how the input was ordered."""
    return sorted(range(len(ds)), key=lambda i: (int(ds.labels[i]), ds.features[i].indices))


def train(spec: ModelSpec, train_set: LabeledDataset, validation_set: LabeledDataset | None,
          cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Momentum SGD on epoch-shuffled minibatches with early stopping.

    Keeps the parameters with the best validation top-1 accuracy seen so
    far (epoch 0 is the initialisation) and stops after
    ``early_stop_patience`` epochs without improvement. Without a
    validation set the final parameters are returned.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if validation_set is not None and validation_set.label_index != train_set.label_index:
        raise ValueError("train and validation label indexes differ")
    if spec.input_dim != train_set.n_features or spec.n_classes != train_set.n_classes:
        raise ValueError("spec dimensions do not match the training set")

    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(spec, train_set.label_index, train_set.universe,
                         np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)

    ordered = train_set.take(canonical_order(train_set))
    indptr, indices = ordered.csr
    labels = ordered.labels
    n = len(ordered)
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    val_batch = Batch.from_dataset(validation_set) if validation_set is not None and len(validation_set) else None

    def val_metrics(p: ModelParams) -> tuple[float, float]:
        if val_batch is None:
            return float("nan"), float("nan")
        probs = predict_proba(p, val_batch)
        gp = probs[np.arange(len(val_batch)), val_batch.labels]
        vloss = float(np.mean(-np.log(np.maximum(gp, EPS))) + spec.l2_lambda * p.l2())
        ranks = kernels.gold_ranks(np.ascontiguousarray(probs), val_batch.labels)
        return vloss, float(np.mean(ranks == 1))

    vloss, vtop1 = val_metrics(params)
    log = [EpochLog(0, float("nan"), vloss, vtop1)]
    best, best_epoch, best_top1, stale = params.copy(), 0, vtop1, 0
    lr, mu = cfg.learning_rate, cfg.momentum
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            batch = gather_rows(indptr, indices, rows, labels)
            probs, cache = _forward(params, batch, True, drop_rng)
            gp = probs[np.arange(len(batch)), batch.labels]
            total += float(np.sum(-np.log(np.maximum(gp, EPS))))
            grads = _backward(params, batch, probs, cache)
            for name, g in grads.items():
                v = velocity[name]
                v *= mu
                v -= lr * g
                params.arrays[name] += v
        train_loss = total / n + spec.l2_lambda * params.l2()
        vloss, vtop1 = val_metrics(params)
        log.append(EpochLog(epoch, train_loss, vloss, vtop1))
        if val_batch is None:
            best, best_epoch = params, epoch
            continue
        if vtop1 > best_top1:
            best, best_epoch, best_top1, stale = params.copy(), epoch, vtop1, 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    if val_batch is None:
        best = params
    return TrainResult(best, log, best_epoch)


# -- inspection ----------------------------------------------------------------------

def feature_names(universe: SymptomUniverse) -> list[str]:
    """Presence features by symptom name, absence features as ``NOT <symptom>``."""
    names = [s.replace("_", " ") for s in universe.symptoms]
    return names + [f"NOT {s}" for s in names]


def top_weights(params: ModelParams, disease: str, m: int) -> tuple[list[tuple[str, float]], list[tuple[str, float]]]:
    """The ``m`` most positive and ``m`` most negative weights for ``disease``.

    Ties are broken by feature index.
    """
    if params.spec.kind != "logistic_regression":
        raise ValueError("top_weights needs a logistic regression model")
    if disease not in params.label_index:
        raise KeyError(f"unknown disease {disease!r}")
    w = params["W"][:, params.label_index.index(disease)]
    idx = np.arange(len(w))
    names = feature_names(params.universe)
    pos = np.lexsort((idx, -w))[:m]
    neg = np.lexsort((idx, w))[:m]
    return ([(names[i], float(w[i])) for i in pos], [(names[i], float(w[i])) for i in neg])


# -- artifact ------------------------------------------------------------------------

def save_model(path: str | Path, params: ModelParams, extra: dict | None = None) -> None:
    """Write an ``.npz`` container with a JSON header under ``__meta__``."""
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": params.spec.to_dict(),
        "label_index": list(params.label_index),
        "universe": params.universe.to_dict(),
        "universe_digest": params.universe.digest(),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta, sort_keys=True)),
             **{f"p_{k}": v for k, v in sorted(params.arrays.items())})
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
        if meta.get("version") != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {meta.get('version')}")
        arrays = {k[2:]: z[k].copy() for k in z.files if k.startswith("p_")}
    spec_d = dict(meta["spec"])
    spec_d["hidden_sizes"] = tuple(spec_d["hidden_sizes"])
    universe = SymptomUniverse.from_dict(meta["universe"])
    if universe.digest() != meta["universe_digest"]:
        raise ValueError(f"{path}: universe digest mismatch")
    params = ModelParams(ModelSpec(**spec_d), tuple(meta["label_index"]), universe, arrays)
    return params, meta.get("extra", {})
