"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy versions in ``_pykernels`` are used.  Setting ``LMSGNN_BACKEND`` to
``python`` or ``compiled`` before import forces a choice (``compiled``
raises if the extension is missing).
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # not built, or built for another interpreter
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels


def _select():
    wanted = os.environ.get("LMSGNN_BACKEND", "").strip().lower()
    if wanted == "python":
        return "python"
    if wanted == "compiled":
        if _ckernels is None:
            raise ImportError("LMSGNN_BACKEND=compiled but lmsgnn._ckernels is not built")
        return "compiled"
    if wanted:
        log.warning("unknown LMSGNN_BACKEND=%r, using default", wanted)
    return "compiled" if _ckernels is not None else "python"


BACKEND = _select()
kernels = BACKENDS[BACKEND]


def get_kernels(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None
