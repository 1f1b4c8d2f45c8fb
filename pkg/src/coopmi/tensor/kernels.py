"""Backend selection for the optimizer kernel (same rule as the environment kernels:
compiled unless ``COOPMI_PURE_PYTHON`` is set or the extension is missing)."""

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

adam_update = _active.adam_update
all_finite = _active.all_finite


def backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
