"""Hot-spot kernels with a compiled core and a numpy fallback.

The inner loops that dominate training time (im2col/col2im for the 1-D
convolutions, the fused LSTM gate math, and the Adam update) exist twice:
as numpy code in `npops` and as a Cython extension `_fastops`. The
extension is selected at import when present; set ACCENTDET_NO_EXT=1 to
force the numpy path (the kernel benchmark uses this to compare both).

Matrix products go through BLAS (numpy matmul) on both paths; the
compiled core only replaces the gather/scatter and elementwise-fusion
kernels where numpy pays per-op overhead.
"""

import os

import numpy as np

from . import npops

_fastops = None
if os.environ.get("ACCENTDET_NO_EXT", "") not in ("1", "true", "yes"):
    try:
        from . import _fastops  # noqa: F401
    except ImportError:
        _fastops = None

_KERNEL_NAMES = (
    "im2col",
    "col2im",
    "lstm_pointwise_fwd",
    "lstm_pointwise_bwd",
    "adam_update",
)


def backend() -> str:
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return "cython" if _fastops is not None else "numpy"


def get_backend_module(name: str):
    """Return a kernel module by name, for side-by-side benchmarking."""
    if name == "numpy":
        return npops
    if name == "cython":
        if _fastops is None:
            raise RuntimeError("compiled kernels are not available")
        return _fastops
    raise ValueError(f"unknown backend {name!r}")


_active = _fastops if _fastops is not None else npops

im2col = _active.im2col
col2im = _active.col2im
lstm_pointwise_fwd = _active.lstm_pointwise_fwd
lstm_pointwise_bwd = _active.lstm_pointwise_bwd
adam_update = _active.adam_update


def ascontiguous(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)
