"""Texture-based lighting inverse rendering."""
import numba as _numba

# TBB in this image is too old for numba; pick a layer that never probes it
if _numba.config.THREADING_LAYER == "default":
    _numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
