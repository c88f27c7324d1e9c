"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``TRAJSEG_PURE=1`` to force the fallback (used by the benchmark and
the parity tests).
"""
from __future__ import annotations

import os

from . import _kernels_py as fallback

BACKEND = "python"
_impl = fallback

if os.environ.get("TRAJSEG_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

dilate_disk = _impl.dilate_disk
knn_mean_distance = _impl.knn_mean_distance
linear_sum_assignment = _impl.linear_sum_assignment
rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode
disk_offsets = fallback.disk_offsets

try:
    from . import _kernels as compiled  # noqa: F401  (exposed for parity tests)
except ImportError:
    compiled = None
