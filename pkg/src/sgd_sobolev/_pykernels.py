"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

_BLOCK = 1024


def gram_power_sum(ca, va, cb, vb, k):
    total = 0.0
    for start in range(0, va.shape[0], _BLOCK):
        g = va[start:start + _BLOCK] @ vb.T
        total += float(ca[start:start + _BLOCK] @ (g**k @ cb))
    return total


def batch_apply(v, a, batches, step):
    rows = a[batches]  # (nb, B, w)
    proj = np.einsum("bjl,tl->btj", rows, v)
    return v[None, :, :] - step * np.einsum("btj,bjl->btl", proj, rows)


def rowwise_apply(v, a, batches, step):
    rows = a[batches]  # (r, B, w)
    proj = np.einsum("tjl,tl->tj", rows, v)
    return v - step * np.einsum("tj,tjl->tl", proj, rows)
