"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --rows 2048 --symptoms 300 --repeat 20
"""

import argparse
import sys
import timeit

import numpy as np

from dxcoverage.kernels import _pykernels

try:
    from dxcoverage.kernels import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(rows, symptoms, active, width, labels, seed):
    rng = np.random.default_rng(seed)
    n_feat = 2 * symptoms
    cols = [np.sort(rng.choice(n_feat, active, replace=False)) for _ in range(rows)]
    indptr = np.arange(0, rows * active + 1, active, dtype=np.int64)
    indices = np.concatenate(cols).astype(np.int64)
    return {
        "indptr": indptr,
        "indices": indices,
        "n_feat": n_feat,
        "dense": rng.normal(size=(n_feat, width)),
        "delta": rng.normal(size=(rows, width)),
        "probs": np.ascontiguousarray(rng.dirichlet(np.ones(labels), size=rows)),
        "gold": rng.integers(0, labels, rows).astype(np.int64),
    }


def cases(mod, x):
    return {
        "spmm": lambda: mod.spmm(x["indptr"], x["indices"], None, x["dense"]),
        "spmm_t": lambda: mod.spmm_t(x["indptr"], x["indices"], None, x["delta"], x["n_feat"]),
        "gold_ranks": lambda: mod.gold_ranks(x["probs"], x["gold"]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2048, help="batch rows")
    ap.add_argument("--symptoms", type=int, default=300)
    ap.add_argument("--active", type=int, default=12, help="set bits per row")
    ap.add_argument("--width", type=int, default=256, help="dense columns (first hidden layer)")
    ap.add_argument("--labels", type=int, default=139)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("compiled extension not built; only the numpy timings are shown", file=sys.stderr)
    x = make_inputs(args.rows, args.symptoms, args.active, args.width, args.labels, args.seed)
    py = cases(_pykernels, x)
    cy = cases(_ckernels, x) if _ckernels else {}

    print(f"{'kernel':<12}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in py.items():
        t_py = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        if name in cy:
            np.testing.assert_allclose(cy[name](), fn(), atol=1e-10)
            t_cy = min(timeit.repeat(cy[name], number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<12}{t_py:12.3f}{t_cy:12.3f}{t_py / t_cy:9.1f}x")
        else:
            print(f"{name:<12}{t_py:12.3f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
