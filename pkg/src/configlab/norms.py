"""Uniformity functionals: the U^1(L) norm, the box norm and window defects.

Windows are cubes ``t + [-L/2, L/2]^d`` with ``t`` ranging over the unit
cube (or over a sub-cube for windowed tests); functions are zero-extended,
so windows overflowing the boundary lose mass exactly as in the continuum.
Integrals over ``t`` are exact: window fractions are piecewise linear in
``t`` and their products are integrated with Gauss rules split at the kinks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.linalg import toeplitz

from .errors import ResolutionError, UsageError
from .grid import (GridFunction, _smoothing_weights, apply_axes, box_smooth, window_fractions,
                   window_gram, window_square_integral)


def _check_scale(f: GridFunction, L: float, upper: float = 0.25):
    if L < f.h * (1 - 1e-12):
        raise ResolutionError(f"scale L={L:g} is below the cell size h={f.h:g}")
    if L > upper + 1e-12:
        raise UsageError(f"scale L={L:g} exceeds {upper:g}")


def u1_norm(f: GridFunction, L: float) -> float:
    """``(int_{[0,1]^d} |L^{-d} int_{t+Q_L} f|^2 dt)^{1/2}``, integrated exactly in ``t``."""
    _check_scale(f, L)
    sq, _ = window_square_integral(f.values, L / f.h)
    return float(np.sqrt(max(sq * f.h**f.d, 0.0)))


def u1_psi_form(f: GridFunction, L: float) -> float:
    """``int int f(x) f(x - x1) psi_L(x1) dx1 dx`` with ``psi_L = L^{-2d} 1_Q * 1_Q``."""
    _check_scale(f, L, upper=1.0)
    return float(np.vdot(f.values, box_smooth(f, L).values) * f.h**f.d)


# ---------------------------------------------------------------------------
# box norm
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _psi_matrix(N: int, ell: float) -> np.ndarray:
    W = _smoothing_weights(ell)
    K = (W.size - 1) // 2
    col = np.zeros(N)
    m = min(N, K + 1)
    col[:m] = W[K:K + m]
    return toeplitz(col)


def box_quartic_sum(values: np.ndarray, d1: int, Mx: np.ndarray, My: np.ndarray) -> float:
    """``sum Mx[i,i'] My[j,j'] f_ij f_i'j f_ij' f_i'j'`` with per-axis matrices.

    ``Mx`` and ``My`` are ``(n, n)`` symmetric banded matrices applied on
    every axis of the first and second factor.  The sum is organised by the
    first-factor offset ``delta = i' - i``; offsets ``delta`` and ``-delta``
    contribute equally.
    """
    n = values.shape[0]
    d = values.ndim
    d2 = d - d1
    band = _bandwidth(Mx)
    yaxes = tuple(range(d1, d))
    total = 0.0
    for delta in product(range(-band, band + 1), repeat=d1):
        # lexicographically nonnegative half
        nz = [x for x in delta if x != 0]
        if nz and nz[0] < 0:
            continue
        mult = 1.0 if not nz else 2.0
        src, dst = [], []
        ok = True
        for o in delta:
            if abs(o) >= n:
                ok = False
                break
            src.append(slice(max(o, 0), n + min(o, 0)))
            dst.append(slice(max(-o, 0), n - max(o, 0)))
        if not ok:
            continue
        # p[i] = f[i] f[i + delta] on the overlap (indexed by i)
        p = values[tuple(dst)] * values[tuple(src)]
        w = np.ones(())
        for a, o in enumerate(delta):
            idx = np.arange(n)[dst[a]]
            w = np.multiply.outer(w, Mx[idx, idx + o])
        if not np.any(w):
            continue
        q = apply_axes(p, [My] * d2, axes=yaxes)
        rowsum = np.sum(p * q, axis=yaxes)
        total += mult * float(np.sum(w * rowsum))
    return total


def _bandwidth(M: np.ndarray) -> int:
    n = M.shape[0]
    for b in range(n - 1, -1, -1):
        if np.any(np.diagonal(M, b) != 0):
            return b
    return 0


def _check_product(f: GridFunction):
    if f.split is None:
        raise UsageError("box norm needs a function on a product grid")
    return f.dims


def box_norm(f: GridFunction, L: float, window=None, mode: str = "exact",
             stride: float | None = None) -> float:
    """Box norm ``||f||_{box(L)}``.

    Parameters
    ----------
    window : (t1, t2), optional
        Window centres; returns the windowed norm ``||f||_{box(L)(t1,t2)}``.
    mode : {"exact", "lattice"}
        ``exact`` integrates ``t`` exactly; ``lattice`` sums windows on a
        stride lattice (default ``L/4``) and is only an approximation.
    """
    d1, d2 = _check_product(f)
    _check_scale(f, L)
    if window is not None:
        return box_window_quartic(f, window[0], window[1], L) ** 0.25
    q4 = box_norm4(f, L, mode=mode, stride=stride)
    return float(max(q4, 0.0) ** 0.25)


def box_norm4(f: GridFunction, L: float, mode: str = "exact", stride: float | None = None) -> float:
    """Fourth power of the global box norm; asserted nonnegative up to 1e-10."""
    d1, d2 = _check_product(f)
    ell = L / f.h
    if mode == "exact":
        M, _ = window_gram(f.n, ell)
        val = box_quartic_sum(f.values, d1, M, M) * f.h ** (d1 + d2)
    elif mode == "lattice":
        s = L / 4 if stride is None else stride
        ts = np.arange(s / 2, 1.0, s)
        val = 0.0
        for t1 in product(ts, repeat=d1):
            for t2 in product(ts, repeat=d2):
                val += box_window_quartic(f, t1, t2, L)
        val *= s ** (d1 + d2)
    else:
        raise UsageError(f"unknown box norm mode {mode!r}")
    if val < -1e-10:
        raise ArithmeticError(f"box norm fourth power is negative ({val:.3g})")
    return float(max(val, 0.0))


def box_psi_form(f: GridFunction, L: float) -> float:
    """``int f f f f psi_{1,L}(x1) psi_{2,L}(y1)``, the kernel form of the fourth power."""
    d1, d2 = _check_product(f)
    _check_scale(f, L, upper=1.0)
    P = _psi_matrix(f.n, L / f.h)
    return box_quartic_sum(f.values, d1, P, P) * f.h ** (d1 + d2)


def _window_slices(t, N, ell):
    """Cell range touched by the window centred at ``t`` (cell units) and its fractions."""
    lo = max(int(np.floor(t - ell / 2)), 0)
    hi = min(int(np.ceil(t + ell / 2)), N)
    frac = window_fractions([t], N, ell)[0, lo:hi]
    return slice(lo, hi), frac


def box_window_quartic(f: GridFunction, t1, t2, L: float) -> float:
    """``||f||^4_{box(L)(t1, t2)}`` for one window (physical centres)."""
    d1, d2 = _check_product(f)
    ell = L / f.h
    t1 = np.atleast_1d(np.asarray(t1, dtype=float)) / f.h
    t2 = np.atleast_1d(np.asarray(t2, dtype=float)) / f.h
    if t1.size != d1 or t2.size != d2:
        raise UsageError("window centres must match the factor dimensions")
    sl, fr = zip(*[_window_slices(t, f.n, ell) for t in np.concatenate([t1, t2])])
    block = f.values[tuple(sl)]
    if block.size == 0:
        return 0.0
    a = fr[0]
    for x in fr[1:d1]:
        a = np.multiply.outer(a, x)
    b = fr[d1]
    for x in fr[d1 + 1:]:
        b = np.multiply.outer(b, x)
    X = block.reshape(a.size, b.size)
    S = X.T @ (a.ravel()[:, None] * X)
    bb = b.ravel()
    return float(bb @ (S * S) @ bb)


# ---------------------------------------------------------------------------
# uniform distribution
# ---------------------------------------------------------------------------


@dataclass
class UniformityReport:
    """Uniform-distribution diagnostics of a set at scale ``L``.

    ``eps_min`` is the smallest ``eps`` for which the mean-square deviation
    of window densities is at most ``eps^2``; ``bad_mass`` is the measure
    (relative to the window cube) of centres whose window density is at
    most ``(1 - eps^2)`` times the set density, evaluated at cell centres
    with ``eps = threshold_eps``.
    """

    L: float
    norm: float
    eps_min: float
    bad_mass: float
    density: float
    threshold_eps: float
    boundary_slack: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _cube_slices(window, n, d):
    if window is None:
        return tuple([slice(0, n)] * d)
    lo, hi = window
    lo = np.broadcast_to(np.asarray(lo, dtype=int), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=int), (d,))
    if np.any(hi - lo != hi[0] - lo[0]) or np.any(lo < 0) or np.any(hi > n) or hi[0] <= lo[0]:
        raise UsageError(f"window must be a cube of whole cells inside the grid, got {window}")
    return tuple(slice(a, b) for a, b in zip(lo, hi))


def defect_from_values(values: np.ndarray, ell: float) -> tuple[float, float]:
    """Mean-square window deviation on a cube array (cell units) and its density."""
    m = values.shape[0]
    vol = float(m**values.ndim)
    delta = float(values.sum()) / vol
    sq, lin = window_square_integral(values, ell)
    mse = (sq - 2 * delta * lin + delta**2 * vol) / vol
    return max(mse, 0.0), delta


def uniformity_defect(A: GridFunction, L: float, window=None,
                      eps: float | None = None) -> UniformityReport:
    """Measure how uniformly ``A`` is distributed at scale ``L``.

    Parameters
    ----------
    window : (lo, hi), optional
        Whole-cell index corners of a cube ``Q``; the set is restricted to
        ``Q`` and windows are centred in ``Q``.
    eps : float, optional
        Threshold for the bad-window mass; defaults to ``eps_min``.
    """
    sl = _cube_slices(window, A.n, A.d)
    vals = A.values[sl]
    m = vals.shape[0]
    ell = L / A.h
    if ell < 1 - 1e-12:
        raise ResolutionError(f"scale L={L:g} is below the cell size h={A.h:g}")
    if ell > m + 1e-9:
        raise UsageError("scale exceeds the window cube")
    mse, delta = defect_from_values(vals, ell)
    if delta <= 0:
        raise UsageError("set is empty on the window")
    eps_min = float(np.sqrt(mse))
    sq, _ = window_square_integral(vals - delta, ell)
    norm = float(np.sqrt(max(sq, 0.0) / m**A.d))
    thr = eps_min if eps is None else float(eps)
    centres = np.arange(m) + 0.5
    P = window_fractions(centres, m, ell)
    g = apply_axes(vals, [P] * A.d)
    bad = float(np.mean(g <= (1 - thr**2) * delta + 1e-15))
    slack = min(1.0, A.d * ell / m)  # fraction of centres whose window overflows
    return UniformityReport(L, norm, eps_min, bad, delta, thr, slack)
