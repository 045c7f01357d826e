"""Hot kernels: per-cell clipping and mass, extension fill, monotone sweep.

The compiled extension ``_core`` is used when it imports; otherwise, or when
``MONGE2BVP_PURE_PYTHON=1`` is set, the pure-Python ``_pure`` module backs
the same functions.
"""

import os

from . import _pure

BACKEND = "python"
if os.environ.get("MONGE2BVP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pure
else:
    _impl = _pure

cell_vertices = _impl.cell_vertices
cell_masses = _impl.cell_masses
fill_exterior = _impl.fill_exterior
monotone_sweep = _impl.monotone_sweep


def backends():
    """Available backend modules keyed by name."""
    out = {"python": _pure}
    try:
        from . import _core

        out["cython"] = _core
    except ImportError:  # pragma: no cover
        pass
    return out
