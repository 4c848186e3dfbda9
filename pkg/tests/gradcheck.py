"""Finite-difference gradient checking shared by the model tests."""

import numpy as np

from dxcoverage.dataset import FeatureVector
from dxcoverage.ehr import SymptomUniverse
from dxcoverage.models import Batch, ModelSpec, batch_loss, gradients, init_params

REL_FLOOR = 1e-7  # below this both gradients count as zero


def random_model(kind, k, n_classes, seed, l2=0.01, dropout=0.0, **kw):
    rng = np.random.default_rng(seed)
    extra = {"hidden_sizes": (6, 5)} if kind == "mlp" else {}
    if kind == "mlp_embedding":
        extra = {"embedding_dim": 6, "hidden_sizes": (3,), "dropout_p": dropout}
    extra.update(kw)
    spec = ModelSpec.default(kind, 2 * k, n_classes, l2_lambda=l2, **extra)
    universe = SymptomUniverse(tuple(f"s{i}" for i in range(k)))
    params = init_params(spec, [f"d{i}" for i in range(n_classes)], universe, rng)
    for name, arr in params.arrays.items():
        if name.startswith("b"):
            arr[...] = rng.uniform(-0.1, 0.1, size=arr.shape)
    return spec, params


def random_batch(k, n_classes, n, seed):
    rng = np.random.default_rng(seed)
    vecs = []
    for _ in range(n):
        m = int(rng.integers(1, 2 * k + 1))
        vecs.append(FeatureVector(tuple(sorted(rng.choice(2 * k, size=m, replace=False).tolist())), 2 * k))
    return Batch.from_vectors(vecs, rng.integers(0, n_classes, size=n))


def max_relative_error(spec, params, batch, eps=1e-5, train_mode=False, mask_seed=0):
    def rng():
        return np.random.default_rng(mask_seed) if train_mode else None

    analytic = gradients(params, spec, batch, train_mode, rng())
    worst = 0.0
    for name, arr in params.arrays.items():
        g = analytic[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = batch_loss(params, batch, train_mode, rng())
            arr[idx] = old - eps
            down = batch_loss(params, batch, train_mode, rng())
            arr[idx] = old
            numeric = (up - down) / (2 * eps)
            denom = max(abs(g[idx]), abs(numeric))
            if denom > REL_FLOOR:
                worst = max(worst, abs(g[idx] - numeric) / denom)
    return worst
