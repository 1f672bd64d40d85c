"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
pure numpy implementation is the fallback.  Set SHAPERANK_PURE=1 to force
the fallback (used by the benchmark and the backend-equality tests).
"""
import os

from . import pure

if os.environ.get("SHAPERANK_PURE"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _voxelcy as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

voxelize_surface = _impl.voxelize_surface
flood_fill_outside = _impl.flood_fill_outside

__all__ = ["BACKEND", "voxelize_surface", "flood_fill_outside", "pure"]
