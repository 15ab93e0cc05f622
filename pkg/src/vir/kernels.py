"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementations in ``_pykernels`` take over. Set ``VIR_PURE_PYTHON=1``
to force the numpy path.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("VIR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

scan_pooled = _impl.scan_pooled
scan_states = _impl.scan_states
scan_backward = _impl.scan_backward
lyapunov_run = _impl.lyapunov_run


def backends() -> dict:
    """Both implementations keyed by name, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
