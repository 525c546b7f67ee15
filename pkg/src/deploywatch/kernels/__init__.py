"""Backend selection for the hot scan kernels.

The compiled extension is preferred when importable; the numpy fallback is
always available. Set DEPLOYWATCH_FORCE_FALLBACK=1 to skip the extension
(used by tests and `deploywatch bench` to compare backends).
"""

from __future__ import annotations

import os
from types import ModuleType

from deploywatch.kernels import _fallback

BACKEND = "fallback"
_impl: ModuleType = _fallback

if os.environ.get("DEPLOYWATCH_FORCE_FALLBACK", "") not in ("1", "true", "yes"):
    try:
        from deploywatch.kernels import _native  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "native"
        _impl = _native

subseq_min_dist = _impl.subseq_min_dist
subseq_min_dists = _impl.subseq_min_dists


def available_backends() -> dict[str, ModuleType]:
    """All importable kernel backends, keyed by name."""
    backends: dict[str, ModuleType] = {"fallback": _fallback}
    try:
        from deploywatch.kernels import _native  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        backends["native"] = _native
    return backends
