"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``SMM_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from smm import _kernels_py

if os.environ.get("SMM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from smm import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

forward = _impl.forward
probs = _impl.probs
backward = _impl.backward
train_step = _impl.train_step
