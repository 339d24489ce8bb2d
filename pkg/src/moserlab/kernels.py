"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

Set ``MOSERLAB_PURE_PYTHON=1`` to force the NumPy path.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("MOSERLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

flux_assembly = _impl.flux_assembly
log_power_sum = _impl.log_power_sum


def backends():
    """Available implementations keyed by name (for benchmarks and cross-checks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
