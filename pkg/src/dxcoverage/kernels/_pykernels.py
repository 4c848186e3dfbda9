"""Numpy versions of the sparse kernels, used when the extension is absent."""

import numpy as np


def _densify(indptr, indices, row_scale, n_features):
    n = len(indptr) - 1
    x = np.zeros((n, n_features))
    rows = np.repeat(np.arange(n), np.diff(indptr))
    x[rows, indices] = 1.0 if row_scale is None else np.asarray(row_scale)[rows]
    return x


def spmm(indptr, indices, row_scale, dense):
    dense = np.asarray(dense, dtype=np.float64)
    return _densify(indptr, indices, row_scale, dense.shape[0]) @ dense


def spmm_t(indptr, indices, row_scale, rows, n_features):
    return _densify(indptr, indices, row_scale, n_features).T @ np.asarray(rows, dtype=np.float64)


def gold_ranks(probs, gold):
    probs = np.asarray(probs, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    pg = probs[np.arange(len(gold)), gold][:, None]
    ahead = (probs > pg) | ((probs == pg) & (np.arange(probs.shape[1]) < gold[:, None]))
    return ahead.sum(axis=1).astype(np.int64) + 1
