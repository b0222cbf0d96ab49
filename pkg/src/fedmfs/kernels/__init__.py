"""Tree kernels with a compiled backend and a numpy fallback.

The Cython module is used when it was built at install time. Setting
``FEDMFS_KERNELS=python`` forces the numpy implementation.
"""

from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("FEDMFS_KERNELS", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if _compiled is not None else "python"
python_backend = _pykernels
compiled_backend = _compiled


def grow_tree(X, y, n_classes, max_depth):
    if _compiled is not None and len(X) <= _compiled.MAX_GROW_ROWS:
        return _compiled.grow_tree(X, y, n_classes, max_depth)
    return _pykernels.grow_tree(X, y, n_classes, max_depth)


def forest_votes(feature, value, left, right, leaf, roots, X, n_classes):
    impl = _compiled or _pykernels
    return impl.forest_votes(feature, value, left, right, leaf, roots, X, n_classes)


def masked_label_votes(feature, value, left, right, leaf, roots, samples, labels, background):
    impl = _compiled or _pykernels
    return impl.masked_label_votes(feature, value, left, right, leaf, roots, samples, labels, background)
