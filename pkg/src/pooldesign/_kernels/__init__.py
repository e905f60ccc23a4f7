"""Numerical kernels with a compiled core and a pure-Python fallback.

The compiled extension (``pooldesign._kernels._core``) and the fallback
(``pooldesign._kernels.pykernels``) expose the same functions; whichever is
active is chosen once at import time.  Set ``POOLDESIGN_BACKEND=python`` to
force the fallback, ``POOLDESIGN_BACKEND=c`` to require the extension.
"""

import os

from . import pykernels

_requested = os.environ.get("POOLDESIGN_BACKEND", "auto").strip().lower()

_compiled = None
if _requested in ("auto", "c", "compiled"):
    try:
        from . import _core as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

if _requested in ("c", "compiled") and _compiled is None:
    raise ImportError(
        "POOLDESIGN_BACKEND=%s but the compiled kernel extension is not "
        "built; run `pip install -e . --no-build-isolation`" % _requested
    )

if _requested in ("python", "py"):
    _active = pykernels
elif _compiled is not None:
    _active = _compiled
else:
    _active = pykernels

HAVE_COMPILED = _compiled is not None


def active_backend():
    """Return the kernel module in use (compiled if available)."""
    return _active


def backend_name() -> str:
    return _active.BACKEND_NAME


def all_backends():
    """Mapping of available backend name -> module (for tests/benchmarks)."""
    out = {pykernels.BACKEND_NAME: pykernels}
    if _compiled is not None:
        out[_compiled.BACKEND_NAME] = _compiled
    return out
