"""Backend selection for the hot kernels.

Prefers the compiled Cython extension and falls back to the pure numpy
implementation.  Set the environment variable ``RHFLOW_PURE_PYTHON=1``
to force the fallback (used by the benchmark and the equivalence tests).
"""

import os

from . import _kernels_py

if os.environ.get("RHFLOW_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

fast_march = _impl.fast_march
solve_cyclic_tridiag_batch = _impl.solve_cyclic_tridiag_batch
