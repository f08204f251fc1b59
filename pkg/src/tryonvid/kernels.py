"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``TRYONVID_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from tryonvid import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("TRYONVID_PURE_PYTHON"):
    try:
        from tryonvid import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

rms_distance = _impl.rms_distance
greedy_keyframes = _impl.greedy_keyframes
agn_loss_grad = _impl.agn_loss_grad

__all__ = ["BACKEND", "agn_loss_grad", "greedy_keyframes", "rms_distance"]
