"""Hot kernels for 2-D convolution and max-pooling.

The compiled extension is preferred when it was built; otherwise the numpy
fallback in `conv_py` is used. Set CSIL_PURE_PYTHON=1 to force the fallback
(useful for debugging and for benchmarking the two side by side).
"""

import os

from . import conv_py

if os.environ.get("CSIL_PURE_PYTHON"):
    _impl = conv_py
else:
    try:
        from . import _conv_ext as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = conv_py

BACKEND = "python" if _impl is conv_py else "compiled"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
