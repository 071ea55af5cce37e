"""Selects the numba or pure-numpy kernel backend.

Set ``TREATRISK_DISABLE_NUMBA=1`` before import to force the numpy path.
The numpy path is also used when numba cannot be imported.
"""

import os

_FLAG = os.environ.get("TREATRISK_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
