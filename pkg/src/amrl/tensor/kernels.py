"""Backend selection for the conv kernels.

The compiled extension is preferred; set ``AMRL_KERNELS=python`` to force the
numpy fallback. ``BACKEND`` names whichever was chosen at import.
"""
import os

import numpy as np

from amrl.tensor import _pykernels

python_backend = _pykernels

compiled_backend = None
try:
    from amrl.tensor import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("AMRL_KERNELS", "").lower() != "python":
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = _pykernels
    BACKEND = "python"


def conv2d_forward(x, w, b):
    return _impl.conv2d_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b)
    )


def conv2d_backward(x, w, gout):
    return _impl.conv2d_backward(
        np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(gout)
    )
