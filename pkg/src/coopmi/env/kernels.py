"""Backend selection for the environment kernels.

The compiled extension is used when it imports and ``COOPMI_PURE_PYTHON`` is not
set; otherwise the numpy fallback is used. Both expose the same three functions.
"""

import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("COOPMI_PURE_PYTHON"):
    _active = compiled_backend
    BACKEND = "cython"
else:
    _active = python_backend
    BACKEND = "python"

extract_views = _active.extract_views
neighbor_counts = _active.neighbor_counts
trace_beam = _active.trace_beam


def backends():
    """Available backends keyed by name."""
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
