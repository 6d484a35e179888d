"""Backend selection for the Euler stepping kernel.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Set ``HHLAB_KERNEL=python`` to force the fallback, or
``HHLAB_KERNEL=compiled`` to make a missing extension an import error.
"""
from __future__ import annotations

import os

from . import _euler_py

_choice = os.environ.get("HHLAB_KERNEL", "auto").lower()

if _choice == "python":
    em_advance = _euler_py.em_advance
    BACKEND = "python"
else:
    try:
        from ._euler import em_advance  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        em_advance = _euler_py.em_advance
        BACKEND = "python"

python_em_advance = _euler_py.em_advance


def compiled_em_advance():
    """The compiled kernel, or None if the extension is not built."""
    try:
        from ._euler import em_advance as fn  # type: ignore[attr-defined]
    except ImportError:
        return None
    return fn
