"""Kernel backend selection.

The compiled extension is used when importable; set ``R2F_PURE_PYTHON=1`` to
force the numpy fallback. Both backends expose the same four functions.
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("R2F_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

backend = compiled_backend or python_backend
BACKEND = backend.NAME

conv_acc = backend.conv_acc
permac_correct = backend.permac_correct
encode_sparse = backend.encode_sparse
decode_sparse = backend.decode_sparse


def available():
    """Backends importable in this process, keyed by name."""
    found = {python_backend.NAME: python_backend}
    if compiled_backend is not None:
        found[compiled_backend.NAME] = compiled_backend
    return found
