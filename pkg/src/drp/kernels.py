"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``DRP_PURE_PYTHON=1`` to
force the numpy fallback. All callers go through this module.
"""

import os

from drp import _kernels_py

BACKEND = "python"
if os.environ.get("DRP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from drp import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

adam_update = _impl.adam_update
scatter_add_rows = _impl.scatter_add_rows
mean_pool_forward = _impl.mean_pool_forward
mean_pool_backward = _impl.mean_pool_backward


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from drp import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
