"""Kernel backend selection.

The compiled extension is used when importable; set
``HYBRIDNET_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("HYBRIDNET_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

kernels = _compiled if _compiled is not None else _fallback
NAME = "compiled" if _compiled is not None else "python"


def get(name=None):
    """Return the kernel module ``'compiled'``, ``'python'`` or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available():
    return ["python"] + (["compiled"] if _compiled is not None else [])
