"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set LOGITGMM_BACKEND=python to force the fallback (useful for benchmarking
and debugging); LOGITGMM_BACKEND=compiled raises if the extension is absent.
"""

import os

import numpy as np

from . import numpy_backend

try:
    from . import _gausskern

    _HAVE_COMPILED = True
except ImportError:
    _gausskern = None
    _HAVE_COMPILED = False

_FORCED = os.environ.get("LOGITGMM_BACKEND", "").strip().lower()
if _FORCED == "compiled" and not _HAVE_COMPILED:
    raise ImportError(
        "LOGITGMM_BACKEND=compiled but the _gausskern extension is not built; "
        "install with the Cython extension or unset the variable"
    )

_USE_COMPILED = _HAVE_COMPILED and _FORCED != "python"


def backend_name() -> str:
    return "compiled" if _USE_COMPILED else "python"


def compiled_available() -> bool:
    return _HAVE_COMPILED


def component_log_densities(x, means, chols):
    """Log-density of each sample under each Gaussian component.

    x: (n, d) samples; means: (m, d); chols: (m, d, d) lower Cholesky
    factors of the component covariances. Returns (n, m).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    means = np.ascontiguousarray(means, dtype=np.float64)
    chols = np.ascontiguousarray(chols, dtype=np.float64)
    if _USE_COMPILED:
        return _gausskern.component_log_densities(x, means, chols)
    return numpy_backend.component_log_densities(x, means, chols)
