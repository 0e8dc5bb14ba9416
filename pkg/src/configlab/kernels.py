"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``CONFIGLAB_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("CONFIGLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def shifted_product_sums(slots, offsets, backend=None):
    """Sum over cells of products of shifted slot arrays.

    Parameters
    ----------
    slots : sequence of ndarray
        Arrays of identical shape.
    offsets : array_like of shape (B, m, d) or (m, d)
        Integer index offsets; slot ``s`` is read at ``i + offsets[b, s]``,
        zero outside the grid.
    backend : {"compiled", "python"}, optional
        Override the import-time choice.
    """
    slots = [np.asarray(s, dtype=float) for s in slots]
    shape = slots[0].shape
    offs = np.ascontiguousarray(offsets, dtype=np.int64)
    single = offs.ndim == 2
    if single:
        offs = offs[None]
    flat = np.ascontiguousarray(np.stack([s.ravel() for s in slots]))
    impl = _pick(backend)
    out = impl.shifted_product_sums(flat, offs, shape)
    return out[0] if single else out


def brute_correlation(f0, f1, backend=None):
    """Direct lattice correlation; returns shape ``(2n_a - 1, ...)``."""
    f0 = np.ascontiguousarray(f0, dtype=float)
    f1 = np.ascontiguousarray(f1, dtype=float)
    impl = _pick(backend)
    out = impl.brute_correlation(f0.ravel(), f1.ravel(), f0.shape)
    return np.asarray(out).reshape(tuple(2 * s - 1 for s in f0.shape))


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")
