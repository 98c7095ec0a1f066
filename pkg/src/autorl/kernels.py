"""Kernel backend selection.

The compiled extension is used when importable; set ``AUTORL_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("AUTORL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

RELU, TANH, ELU = _kernels_py.RELU, _kernels_py.TANH, _kernels_py.ELU
IDENTITY, SCALED_TANH = _kernels_py.IDENTITY, _kernels_py.SCALED_TANH

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
adam_update = _impl.adam_update
soft_update = _impl.soft_update
all_finite = _impl.all_finite
