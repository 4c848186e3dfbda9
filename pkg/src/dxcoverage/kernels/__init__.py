"""Hot kernels: the compiled extension when built, numpy otherwise.

``BACKEND`` names the implementation picked at import time.
"""

try:
    from ._ckernels import gold_ranks, spmm, spmm_t
    BACKEND = "cython"
except ImportError:  # extension not compiled
    from ._pykernels import gold_ranks, spmm, spmm_t
    BACKEND = "numpy"

__all__ = ["BACKEND", "gold_ranks", "spmm", "spmm_t"]
