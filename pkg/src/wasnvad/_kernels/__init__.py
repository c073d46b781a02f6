"""Numeric kernel dispatch: compiled extension if available, else pure python.

Set the environment variable ``WASNVAD_NO_EXT=1`` to force the fallback.
"""
import os

from . import reference

if os.environ.get("WASNVAD_NO_EXT"):
    _impl = reference
    HAVE_EXT = False
else:
    try:
        from . import _speedups as _impl

        HAVE_EXT = True
    except ImportError:
        _impl = reference
        HAVE_EXT = False

lasso_spg_gram = _impl.lasso_spg_gram
mnica_run = _impl.mnica_run

__all__ = ["HAVE_EXT", "lasso_spg_gram", "mnica_run", "reference"]
