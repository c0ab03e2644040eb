"""Selects the conv lowering kernels at import time.

The compiled extension is used when it was built and ``OCCURATE_PURE_PYTHON``
is not set; both backends produce bitwise-identical results.
"""

import os

from . import _conv_py

BACKEND = "python"
if not os.environ.get("OCCURATE_PURE_PYTHON"):
    try:
        from . import _conv_ext as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _conv_py
else:
    _impl = _conv_py

im2col = _impl.im2col
col2im = _impl.col2im
out_size = _conv_py.out_size
