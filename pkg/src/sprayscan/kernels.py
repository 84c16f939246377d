"""Hot loops, compiled when possible.

The Cython extension ``sprayscan._core`` is used when it imports; otherwise
(or with ``SPRAYSCAN_PURE_PYTHON=1``) the numpy implementations in
``sprayscan._pycore`` take over.  ``BACKEND`` names the active one.
"""

import os

from . import _pycore

if os.environ.get("SPRAYSCAN_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pycore
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pycore
        BACKEND = "python"

column_centroids = _impl.column_centroids
splat_max = _impl.splat_max
cast_rays = _impl.cast_rays
accumulate_max = _impl.accumulate_max
fill_rows = _impl.fill_rows


def available_backends():
    """Mapping of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _pycore}
    try:
        from . import _core

        out["cython"] = _core
    except ImportError:
        pass
    return out
