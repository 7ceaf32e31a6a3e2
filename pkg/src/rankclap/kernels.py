"""Backend selection for the hot kernels.

Imports the compiled extension (rankclap._accel) when it is built, otherwise
the pure-Python fallback.  Set RANKCLAP_NO_ACCEL=1 to force the fallback,
e.g. for the backend-comparison benchmark.
"""

import os

from rankclap import _kernels_py

if os.environ.get("RANKCLAP_NO_ACCEL"):
    _impl = _kernels_py
else:
    try:
        from rankclap import _accel as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if getattr(_impl, "ACCELERATED", False) else "python"

fill_uniform = _impl.fill_uniform
fill_normal = _impl.fill_normal
rnc_scan = _impl.rnc_scan
greedy_retrieve = _impl.greedy_retrieve
