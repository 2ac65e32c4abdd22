"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``SGD_SOBOLEV_PURE_PYTHON=1`` to force the
fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("SGD_SOBOLEV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _i64(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def gram_power_sum(ca, va, cb, vb, k, impl=None):
    """Sum over term pairs of ``ca[i] * cb[j] * (va[i] . vb[j])**k``."""
    impl = impl or _impl
    return float(impl.gram_power_sum(_f64(ca), _f64(va), _f64(cb), _f64(vb), int(k)))


def batch_apply(v, a, batches, step, impl=None):
    """Apply ``I - step * sum_{j in J} a_j a_j^T`` to every row of ``v`` for every batch ``J``.

    Returns an array of shape ``(len(batches), len(v), w)``.
    """
    impl = impl or _impl
    batches = _i64(np.atleast_2d(batches))
    return np.asarray(impl.batch_apply(_f64(v), _f64(a), batches, float(step)))


def rowwise_apply(v, a, batches, step, impl=None):
    """Row ``t`` of ``v`` is multiplied by the batch matrix built from ``batches[t]``."""
    impl = impl or _impl
    return np.asarray(impl.rowwise_apply(_f64(v), _f64(a), _i64(batches), float(step)))
