"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time (see ``treatrisk._accel``). Both
implementations stay importable as ``kernels.numpy_impl`` and
``kernels.numba_impl`` so tests and benchmarks can compare them directly.
"""

from .. import _accel
from . import _numpy as numpy_impl

if _accel.HAS_NUMBA:
    from . import _numba as numba_impl
else:  # pragma: no cover
    numba_impl = None

_impl = numba_impl if _accel.USE_NUMBA else numpy_impl

sorted_cvar = _impl.sorted_cvar
grid_cvar_max = _impl.grid_cvar_max
variance_bound_value = _impl.variance_bound_value
golden_variance_bound = _impl.golden_variance_bound
grid_variance_bound_max = _impl.grid_variance_bound_max

BACKEND = _accel.backend_name()

__all__ = [
    "BACKEND",
    "grid_cvar_max",
    "golden_variance_bound",
    "grid_variance_bound_max",
    "numba_impl",
    "numpy_impl",
    "sorted_cvar",
    "variance_bound_value",
]
