"""Sequential whitening kernels for the 1D exponential covariance.

The compiled extension is used when it was built; otherwise the pure-Python
module is loaded. Set ``GEOGIC_KERNEL=python`` to force the fallback.
"""

import os

from . import _ou_py

if os.environ.get("GEOGIC_KERNEL", "").lower() == "python":
    _impl = _ou_py
    BACKEND = "python"
else:
    try:
        from . import _ou as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _ou_py
        BACKEND = "python"

whiten = _impl.whiten
color = _impl.color

__all__ = ["BACKEND", "whiten", "color"]
