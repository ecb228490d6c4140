"""Hot kernels for the symplectic flow.

The compiled Cython module ``_flow`` is used when it was built; otherwise the
numpy implementation in ``_flow_py`` is loaded.  Set ``STRETCHTIME_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _flow_py

if os.environ.get("STRETCHTIME_PURE_PYTHON", "") not in ("", "0"):
    _impl = _flow_py
    BACKEND = "python"
else:
    try:
        from . import _flow as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _flow_py
        BACKEND = "python"

flow_forward = _impl.flow_forward
flow_backward = _impl.flow_backward

__all__ = ["BACKEND", "flow_forward", "flow_backward"]
