"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist:
a compiled Cython extension (`_ckernels`) and a numpy fallback
(`pykernels`). The compiled module only defines the kernels where
compiled loops beat numpy (row-softmax, cross-entropy, edit distance);
matrix products always go through numpy's BLAS, which wins at every
size this package uses. The active backend is chosen at import time
from the MSLAB_KERNELS environment variable:

    auto  (default) compiled if built, else numpy
    c     compiled, ImportError if the extension is missing
    py    numpy

`use_backend()` rebinds at runtime; `benchmarks/bench_kernels.py` uses
it to time both implementations side by side.
"""

import os

from . import pykernels

_EXPORTS = [
    "matmul",
    "matmul_grad_a",
    "matmul_grad_b",
    "bmm",
    "bmm_grad_a",
    "bmm_grad_b",
    "softmax_rows",
    "softmax_rows_grad",
    "cross_entropy",
    "cross_entropy_grad",
    "levenshtein",
]

BACKEND = "py"


def compiled_available():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


def use_backend(name):
    """Bind the named backend ("c" or "py") into this module."""
    global BACKEND
    if name == "c":
        from . import _ckernels as impl
    elif name == "py":
        impl = pykernels
    else:
        raise ValueError(f"unknown kernel backend {name!r} (expected 'c' or 'py')")
    for fn in _EXPORTS:
        globals()[fn] = getattr(impl, fn, getattr(pykernels, fn))
    BACKEND = name
    return name


def _select_initial():
    choice = os.environ.get("MSLAB_KERNELS", "auto")
    if choice == "auto":
        return use_backend("c" if compiled_available() else "py")
    if choice in ("c", "py"):
        return use_backend(choice)
    raise ValueError(f"MSLAB_KERNELS={choice!r} not recognized (auto|c|py)")


_select_initial()
