"""Backend selection for the group-correlation kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation. ``HOMOSSL_BACKEND=python`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_requested = os.environ.get("HOMOSSL_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"HOMOSSL_BACKEND must be 'python' or 'compiled', got {_requested!r}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("HOMOSSL_BACKEND=compiled but the extension is not built")

_active = BACKENDS["python"] if _requested == "python" or _compiled is None else _compiled


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def use_backend(name: str) -> None:
    global _active
    _active = BACKENDS[name]


def _table(table):
    return np.ascontiguousarray(table, dtype=np.int64)


def gconv_forward(y, psi, table):
    return _active.gconv_forward(y, psi, _table(table))


def gconv_backward_input(dz, psi, table, x):
    return _active.gconv_backward_input(dz, psi, _table(table), x)


def gconv_backward_filter(dz, y, table):
    return _active.gconv_backward_filter(dz, y, _table(table))
