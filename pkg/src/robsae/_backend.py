"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when importable; set
``SAE_BACKEND=python`` to force the numpy fallback.
"""

import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

_requested = os.environ.get("SAE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "compiled", "python"):
    raise ImportError(f"SAE_BACKEND must be auto, compiled or python, not {_requested!r}")
if _requested == "compiled" and compiled_kernels is None:
    raise ImportError("SAE_BACKEND=compiled but robsae._ckernels is not built")

if _requested == "python" or compiled_kernels is None:
    kernels = _pykernels
    BACKEND = "python"
else:
    kernels = compiled_kernels
    BACKEND = "compiled"
