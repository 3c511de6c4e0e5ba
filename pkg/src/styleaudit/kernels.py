"""Kernel backend selection.

The Cython extension is used when it has been built; otherwise the numpy
fallback is loaded. Set ``STYLEAUDIT_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

from . import _kernels_py as python_impl

logger = logging.getLogger(__name__)

try:
    from . import _kernels as compiled_impl
except ImportError:  # extension not built
    compiled_impl = None

if compiled_impl is not None and not os.environ.get("STYLEAUDIT_PURE_PYTHON"):
    _impl = compiled_impl
    BACKEND = "cython"
else:
    _impl = python_impl
    BACKEND = "python"

logger.debug("kernel backend: %s", BACKEND)

pool_stage = _impl.pool_stage
paint_strokes = _impl.paint_strokes
adam_step = _impl.adam_step

__all__ = ["BACKEND", "adam_step", "compiled_impl", "paint_strokes", "pool_stage", "python_impl"]
