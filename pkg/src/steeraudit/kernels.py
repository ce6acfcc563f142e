"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used. Set ``STEERAUDIT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

BACKEND = "python"

if os.environ.get("STEERAUDIT_PURE_PYTHON") != "1":
    try:
        from ._kernels import bnb_assign, flip_max  # noqa: F401
    except ImportError:
        logger.debug("compiled kernels unavailable; using fallback")
    else:
        BACKEND = "cython"

if BACKEND == "python":
    from ._fallback import bnb_assign, flip_max  # noqa: F401

__all__ = ["BACKEND", "bnb_assign", "flip_max"]
