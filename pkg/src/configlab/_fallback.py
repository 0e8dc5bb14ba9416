"""Pure numpy versions of the compiled kernels (same signatures)."""

import numpy as np


def shifted_product_sums(slots, offsets, shape):
    """See ``_kernels.shifted_product_sums``."""
    shape = tuple(int(s) for s in shape)
    slots = np.asarray(slots, dtype=float).reshape((-1,) + shape)
    offsets = np.asarray(offsets, dtype=np.int64)
    out = np.zeros(offsets.shape[0])
    for b, offs in enumerate(offsets):
        lo = np.maximum(0, -offs.min(axis=0))
        hi = np.minimum(shape, np.array(shape) - offs.max(axis=0))
        if np.any(lo >= hi):
            continue
        prod = None
        for s, o in enumerate(offs):
            sl = tuple(slice(l + oa, h + oa) for l, h, oa in zip(lo, hi, o))
            prod = slots[s][sl].copy() if prod is None else prod * slots[s][sl]
        out[b] = prod.sum()
    return out


def brute_correlation(f0, f1, shape):
    """See ``_kernels.brute_correlation``."""
    shape = tuple(int(s) for s in shape)
    a = np.asarray(f0, dtype=float).reshape(shape)
    rev = np.asarray(f1, dtype=float).reshape(shape)[(slice(None, None, -1),) * len(shape)]
    out = np.zeros(tuple(2 * s - 1 for s in shape))
    for i in zip(*np.nonzero(a)):
        sl = tuple(slice(ia, ia + s) for ia, s in zip(i, shape))
        out[sl] += a[i] * rev
    return out.ravel()
