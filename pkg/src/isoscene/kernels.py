"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``ISOSCENE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("ISOSCENE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

rasterize_triangles = _impl.rasterize_triangles
splat_max = _impl.splat_max
