"""Backend selection for the rasterization kernels.

The compiled extension is preferred; set ``SFFSIM_PURE_PYTHON=1`` to force the
numpy fallback.
"""

import importlib
import os

from . import _pykernels


def load_backend(name: str):
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("sffsim._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list:
    names = ["python"]
    try:
        load_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


if os.environ.get("SFFSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        _impl = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

stamp_polygons = _impl.stamp_polygons
convolve_clamped = _impl.convolve_clamped
stamp_hulls = _impl.stamp_hulls
