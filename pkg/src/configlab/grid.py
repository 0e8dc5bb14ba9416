"""Cell-average grid functions on [0,1]^d, set rasterization and smoothing.

A :class:`GridFunction` stores one value per cell of the uniform lattice
with ``n`` cells per axis.  Values are cell averages, functions are zero
outside the unit cube, and every integral is the exact integral of the
piecewise-constant function the values describe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import convolve1d

from .errors import ResolutionError, UsageError

MAX_DIM = 6
MIN_RESOLUTION = 8
FFT_BUDGET = 2**27  # largest padded FFT grid (cells) correlate will allocate


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real function on [0,1]^d given by cell averages.

    Parameters
    ----------
    values : ndarray
        Array of shape ``(n,) * d``.
    split : int, optional
        For functions on a product ``[0,1]^d1 x [0,1]^d2``, the number of
        leading axes belonging to the first factor.
    kind : {"real", "indicator"}
        Indicator-kind values must lie in [0, 1].
    """

    values: np.ndarray
    split: int | None = None
    kind: str = "real"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 1 or v.ndim > MAX_DIM:
            raise UsageError(f"dimension must be in 1..{MAX_DIM}, got {v.ndim}")
        if len(set(v.shape)) != 1:
            raise UsageError(f"grid must have equal resolution per axis, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise UsageError("grid values must be finite")
        if self.kind == "indicator" and (v.min() < -1e-12 or v.max() > 1 + 1e-12):
            raise UsageError("indicator values must lie in [0, 1]")
        if self.split is not None and not 1 <= self.split < v.ndim:
            raise UsageError(f"split {self.split} incompatible with d={v.ndim}")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def dims(self) -> tuple[int, int]:
        """Factor dimensions ``(d1, d2)`` of a product grid."""
        if self.split is None:
            raise UsageError("not a product grid")
        return self.split, self.d - self.split

    def integral(self) -> float:
        return float(self.values.mean())

    def density(self) -> float:
        return density(self)

    def with_values(self, values, kind=None) -> "GridFunction":
        return GridFunction(values, split=self.split, kind=kind or "real")

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            _check_same_grid(self, other)
            other = other.values
        return GridFunction(self.values * other, split=self.split)

    __rmul__ = __mul__


def density(f: GridFunction) -> float:
    """Mean of the cell values; equals the measure of A for indicators."""
    return float(np.mean(f.values))


def _check_same_grid(f0: GridFunction, f1: GridFunction):
    if f0.values.shape != f1.values.shape:
        raise UsageError(f"grid mismatch: {f0.values.shape} vs {f1.values.shape}")


# ---------------------------------------------------------------------------
# set specifications
# ---------------------------------------------------------------------------


class SetSpec:
    """Base class for set expressions rasterized to cell coverage fractions."""

    dim: int | None = None

    def rasterize(self, d: int, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_dim(self, d):
        if self.dim is not None and self.dim != d:
            raise UsageError(f"{type(self).__name__} has dimension {self.dim}, grid has {d}")


def _interval_fractions(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each cell ``[i/n, (i+1)/n]`` covered by ``[lo, hi]``."""
    edges = np.arange(n + 1) / n
    cover = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return cover * n


def _outer(factors) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def _cell_subpoints(d: int, n: int, sub: int = 3):
    """Supersampling points, ``sub`` per axis per cell, as a (d, n*sub, ...) grid."""
    t = (np.arange(n * sub) + 0.5) / (n * sub)
    return np.meshgrid(*([t] * d), indexing="ij", sparse=True)


def _average_sub(mask: np.ndarray, n: int, sub: int) -> np.ndarray:
    d = mask.ndim
    shape = []
    for _ in range(d):
        shape += [n, sub]
    m = mask.reshape(shape)
    return m.mean(axis=tuple(range(1, 2 * d, 2)))


@dataclass(frozen=True)
class Cube(SetSpec):
    """Axis-aligned cube ``center +- halfwidth`` (rasterized exactly)."""

    center: tuple
    halfwidth: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.halfwidth < 0:
            raise UsageError("cube halfwidth must be nonnegative")

    @property
    def dim(self):
        return len(self.center)

    def rasterize(self, d, n):
        self._check_dim(d)
        return _outer([_interval_fractions(c - self.halfwidth, c + self.halfwidth, n)
                       for c in self.center])

    def to_dict(self):
        return {"type": "cube", "center": list(self.center), "halfwidth": self.halfwidth}


@dataclass(frozen=True)
class Box(SetSpec):
    """Axis-aligned box ``[lo, hi]`` (rasterized exactly)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if len(self.lo) != len(self.hi):
            raise UsageError("box corners must have equal length")

    @property
    def dim(self):
        return len(self.lo)

    def rasterize(self, d, n):
        self._check_dim(d)
        return _outer([_interval_fractions(a, b, n) for a, b in zip(self.lo, self.hi)])

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball(SetSpec):
    """Euclidean ball, rasterized by 3^d supersampling per cell."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius < 0:
            raise UsageError("ball radius must be nonnegative")

    @property
    def dim(self):
        return len(self.center)

    def rasterize(self, d, n):
        self._check_dim(d)
        pts = _cell_subpoints(d, n)
        r2 = sum((p - c) ** 2 for p, c in zip(pts, self.center))
        return _average_sub((r2 <= self.radius**2).astype(float), n, 3)

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Halfspace(SetSpec):
    """``{x : normal . x <= offset}``; exact when the normal is axis-aligned."""

    normal: tuple
    offset: float

    def __post_init__(self):
        nv = tuple(float(c) for c in self.normal)
        if not any(nv):
            raise UsageError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", nv)

    @property
    def dim(self):
        return len(self.normal)

    def rasterize(self, d, n):
        self._check_dim(d)
        nz = [i for i, c in enumerate(self.normal) if c != 0.0]
        if len(nz) == 1:
            a = nz[0]
            c = self.normal[a]
            bound = self.offset / c
            frac = (_interval_fractions(-np.inf, bound, n) if c > 0
                    else _interval_fractions(bound, np.inf, n))
            factors = [np.ones(n)] * d
            factors[a] = frac
            return _outer(factors)
        pts = _cell_subpoints(d, n)
        s = sum(p * c for p, c in zip(pts, self.normal))
        return _average_sub((s <= self.offset).astype(float), n, 3)

    def to_dict(self):
        return {"type": "halfspace", "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class RandomSet(SetSpec):
    """I.i.d. Bernoulli(p) cells on a coarse lattice of side ``cellsize``."""

    p: float
    cellsize: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise UsageError("random set probability must lie in [0, 1]")
        if self.seed is None:
            raise UsageError("random set requires an explicit seed")
        if not 0 < self.cellsize <= 1:
            raise UsageError("random set cellsize must lie in (0, 1]")

    def rasterize(self, d, n):
        m = int(round(1.0 / self.cellsize))
        if abs(m * self.cellsize - 1.0) > 1e-9:
            raise UsageError(f"1/cellsize must be an integer, got {1.0 / self.cellsize}")
        rng = np.random.default_rng(self.seed)
        coarse = (rng.random((m,) * d) < self.p).astype(float)
        if n % m == 0:
            r = n // m
            out = coarse
            for a in range(d):
                out = np.repeat(out, r, axis=a)
            return out
        if m % n == 0:
            return _average_sub(coarse, n, m // n)
        raise UsageError(f"resolution {n} incompatible with random cellsize 1/{m}")

    def to_dict(self):
        return {"type": "random", "p": self.p, "cellsize": self.cellsize, "seed": self.seed}


@dataclass(frozen=True)
class Product(SetSpec):
    """Product ``A x B`` of sets in ``[0,1]^d1`` and ``[0,1]^d2``."""

    first: SetSpec
    second: SetSpec
    d1: int

    def rasterize(self, d, n):
        if not 1 <= self.d1 < d:
            raise UsageError(f"product split {self.d1} incompatible with d={d}")
        return np.multiply.outer(self.first.rasterize(self.d1, n),
                                 self.second.rasterize(d - self.d1, n))

    def to_dict(self):
        return {"type": "product", "first": self.first.to_dict(),
                "second": self.second.to_dict(), "d1": self.d1}


@dataclass(frozen=True)
class Union(SetSpec):
    parts: tuple

    def rasterize(self, d, n):
        return np.maximum.reduce([p.rasterize(d, n) for p in self.parts])

    def to_dict(self):
        return {"type": "union", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Intersect(SetSpec):
    parts: tuple

    def rasterize(self, d, n):
        return np.minimum.reduce([p.rasterize(d, n) for p in self.parts])

    def to_dict(self):
        return {"type": "intersect", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Complement(SetSpec):
    part: SetSpec

    def rasterize(self, d, n):
        return 1.0 - self.part.rasterize(d, n)

    def to_dict(self):
        return {"type": "complement", "part": self.part.to_dict()}


@dataclass(frozen=True)
class Full(SetSpec):
    """The whole unit cube."""

    def rasterize(self, d, n):
        return np.ones((n,) * d)

    def to_dict(self):
        return {"type": "full"}


@dataclass(frozen=True)
class Empty(SetSpec):
    def rasterize(self, d, n):
        return np.zeros((n,) * d)

    def to_dict(self):
        return {"type": "empty"}


def spec_from_dict(obj) -> SetSpec:
    """Build a :class:`SetSpec` from its dictionary form (see ``to_dict``)."""
    if isinstance(obj, SetSpec):
        return obj
    if not isinstance(obj, dict) or "type" not in obj:
        raise UsageError(f"set spec must be a mapping with a 'type' key, got {obj!r}")
    t = obj["type"]
    try:
        if t == "cube":
            return Cube(tuple(obj["center"]), float(obj["halfwidth"]))
        if t == "box":
            return Box(tuple(obj["lo"]), tuple(obj["hi"]))
        if t == "ball":
            return Ball(tuple(obj["center"]), float(obj["radius"]))
        if t == "halfspace":
            return Halfspace(tuple(obj["normal"]), float(obj["offset"]))
        if t == "random":
            if "seed" not in obj:
                raise UsageError("random set spec requires an explicit 'seed'")
            return RandomSet(float(obj["p"]), float(obj["cellsize"]), int(obj["seed"]))
        if t == "product":
            return Product(spec_from_dict(obj["first"]), spec_from_dict(obj["second"]),
                           int(obj["d1"]))
        if t == "union":
            return Union(tuple(spec_from_dict(p) for p in obj["parts"]))
        if t == "intersect":
            return Intersect(tuple(spec_from_dict(p) for p in obj["parts"]))
        if t == "complement":
            return Complement(spec_from_dict(obj["part"]))
        if t == "full":
            return Full()
        if t == "empty":
            return Empty()
    except KeyError as exc:
        raise UsageError(f"set spec of type {t!r} is missing key {exc}") from None
    raise UsageError(f"unknown set spec type {t!r}")


def make_grid_function(spec: SetSpec, d: int, n: int) -> GridFunction:
    """Rasterize a set to cell coverage fractions on the ``n^d`` lattice."""
    if n < MIN_RESOLUTION:
        raise ResolutionError(f"resolution n={n} below the minimum {MIN_RESOLUTION}")
    if not 1 <= d <= MAX_DIM:
        raise UsageError(f"dimension must be in 1..{MAX_DIM}, got {d}")
    spec = spec_from_dict(spec)
    vals = np.clip(spec.rasterize(d, n), 0.0, 1.0)
    split = spec.d1 if isinstance(spec, Product) else None
    return GridFunction(vals, split=split, kind="indicator")


def product_function(f1: GridFunction, f2: GridFunction) -> GridFunction:
    """Tensor product ``f1(x) f2(y)`` on the product grid."""
    if f1.n != f2.n:
        raise UsageError("product factors must share the resolution")
    kind = "indicator" if f1.kind == f2.kind == "indicator" else "real"
    return GridFunction(np.multiply.outer(f1.values, f2.values), split=f1.d, kind=kind)


def balanced_part(a: GridFunction, b_mask: GridFunction | None = None) -> GridFunction:
    """Return ``1_A - alpha 1`` or, relative to a mask, ``1_A - alpha 1_B``.

    With a mask, ``alpha = |A| / |B|``.  The result integrates to zero up to
    rounding.
    """
    if a.kind != "indicator":
        raise UsageError("balanced_part expects an indicator-kind function")
    if b_mask is None:
        alpha = a.integral()
        return GridFunction(a.values - alpha, split=a.split)
    _check_same_grid(a, b_mask)
    beta = b_mask.integral()
    if beta <= 0:
        raise UsageError("mask is empty")
    if np.any(a.values > b_mask.values + 1e-12):
        raise UsageError("set exceeds the mask")
    alpha = a.integral() / beta
    return GridFunction(a.values - alpha * b_mask.values, split=a.split)


# ---------------------------------------------------------------------------
# window operators (all in cell units: cells have side 1, windows side ell)
# ---------------------------------------------------------------------------

_GL2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _window_nodes(N: int, ell: float):
    """Gauss nodes/weights on [0, N] exact for products of window fractions."""
    bps = np.concatenate([np.arange(N + 1) - ell / 2, np.arange(N + 1) + ell / 2, [0.0, N]])
    bps = np.unique(np.clip(bps, 0.0, N))
    a, b = bps[:-1], bps[1:]
    keep = b - a > 1e-14
    a, b = a[keep], b[keep]
    mid, half = (a + b) / 2, (b - a) / 2
    t = (mid[:, None] + half[:, None] * _GL2[None, :]).ravel()
    w = np.repeat(half, 2)
    return t, w


def window_fractions(t, N: int, ell: float) -> np.ndarray:
    """``a[q, i]`` = fraction of window ``[t_q - ell/2, t_q + ell/2]`` covered by cell i."""
    t = np.asarray(t, dtype=float)[:, None]
    i = np.arange(N)[None, :]
    cover = np.minimum(i + 1, t + ell / 2) - np.maximum(i, t - ell / 2)
    return np.clip(cover, 0.0, None) / ell


@lru_cache(maxsize=64)
def _window_gram_cached(N: int, ell: float):
    t, w = _window_nodes(N, ell)
    M = np.zeros((N, N))
    c = np.zeros(N)
    chunk = max(1, 2_000_000 // max(N, 1))
    for s in range(0, t.size, chunk):
        P = window_fractions(t[s:s + chunk], N, ell)
        M += P.T @ (P * w[s:s + chunk, None])
        c += w[s:s + chunk] @ P
    M.setflags(write=False)
    c.setflags(write=False)
    return M, c


def window_gram(N: int, ell: float):
    """Exact Gram data of window averages along one axis.

    With ``a_i(t)`` the fraction of the window of side ``ell`` centred at
    ``t`` covered by cell ``i`` (cells ``[i, i+1]``, ``t`` in ``[0, N]``),
    returns ``M[i, j] = int a_i a_j dt`` and ``c[i] = int a_i dt``.
    """
    return _window_gram_cached(int(N), float(round(ell, 12)))


def apply_axes(values: np.ndarray, mats, axes=None) -> np.ndarray:
    """Apply one matrix per axis: ``out = (M_0 x M_1 x ...) values``."""
    out = values
    axes = range(values.ndim) if axes is None else axes
    for a, M in zip(axes, mats):
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [a])), 0, a)
    return out


def window_square_integral(values: np.ndarray, ell: float):
    """Exact ``int g(t)^2 dt`` and ``int g(t) dt`` over the grid box (cell units).

    ``g(t)`` is the average of the zero-extended function over the window of
    side ``ell`` centred at ``t``; ``t`` ranges over the box ``[0, N]^d``.
    """
    N = values.shape[0]
    M, c = window_gram(N, ell)
    sq = float(np.vdot(values, apply_axes(values, [M] * values.ndim)))
    lin = float(apply_axes(values, [c[None, :]] * values.ndim).ravel()[0])
    return sq, lin


def _smoothing_weights(ell: float) -> np.ndarray:
    """Cell-averaged tent kernel ``W[k] = int psi(k+u) (1-|u|) du`` (cell units)."""
    K = int(np.ceil(ell)) + 1
    ks = np.arange(-K, K + 1)
    W = np.zeros(ks.size)
    for idx, k in enumerate(ks):
        bps = np.array([-1.0, 0.0, 1.0, -k, -k - ell, -k + ell])
        bps = np.unique(np.clip(bps, -1.0, 1.0))
        tot = 0.0
        for a, b in zip(bps[:-1], bps[1:]):
            if b - a < 1e-15:
                continue
            u = (a + b) / 2 + (b - a) / 2 * _GL2
            psi = np.clip(ell - np.abs(k + u), 0.0, None) / ell**2
            tot += (b - a) / 2 * np.sum(psi * (1 - np.abs(u)))
        W[idx] = tot
    return W


def box_smooth(f: GridFunction, L: float) -> GridFunction:
    """Convolve with ``psi_L = L^{-2d} 1_{Q_L} * 1_{Q_L}`` (zero extension).

    The returned values are exact cell averages of ``f * psi_L``.
    """
    if L < f.h * (1 - 1e-12):
        raise ResolutionError(f"scale L={L} is below the cell size {f.h}")
    if L > 1:
        raise UsageError("scale L must not exceed 1")
    W = _smoothing_weights(L / f.h)
    out = f.values
    for a in range(f.d):
        out = convolve1d(out, W, axis=a, mode="constant", cval=0.0)
    return GridFunction(out, split=f.split)


# ---------------------------------------------------------------------------
# correlation fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrelationField:
    """Lattice values of ``C(z) = int f0(x) f1(x - z) dx``.

    ``values[k + n - 1]`` holds ``C(k h)`` for integer shifts ``k`` with
    ``|k_a| <= n - 1``.  Between lattice shifts ``C`` is exactly multilinear
    because both inputs are piecewise constant on the same cells.
    """

    values: np.ndarray
    n: int

    @property
    def d(self):
        return self.values.ndim

    @property
    def h(self):
        return 1.0 / self.n

    def at_index(self, k) -> np.ndarray:
        """Values at integer shifts ``k`` (array (..., d)); zero off the lattice."""
        k = np.asarray(k, dtype=np.int64)
        idx = k + self.n - 1
        ok = np.all((idx >= 0) & (idx < 2 * self.n - 1), axis=-1)
        out = np.zeros(k.shape[:-1])
        sel = tuple(np.moveaxis(idx[ok], -1, 0))
        out[ok] = self.values[sel]
        return out

    def at(self, z) -> np.ndarray:
        """Multilinear interpolation at physical shifts ``z`` (array (..., d))."""
        z = np.asarray(z, dtype=float) / self.h
        base = np.floor(z).astype(np.int64)
        frac = z - base
        out = np.zeros(z.shape[:-1])
        for corner in np.ndindex(*([2] * self.d)):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1 - frac), axis=-1)
            out += w * self.at_index(base + c)
        return out


def correlate(f0: GridFunction, f1: GridFunction) -> CorrelationField:
    """``C(z) = int f0(x) f1(x - z) dx`` by zero-padded FFT on a (2n)^d grid."""
    _check_same_grid(f0, f1)
    n, d = f0.n, f0.d
    P = 2 * n
    if P**d > FFT_BUDGET:
        raise ResolutionError(f"correlation grid (2n)^d = {P}^{d} exceeds the FFT budget")
    s = (P,) * d
    F0 = sfft.rfftn(f0.values, s=s)
    F1 = sfft.rfftn(f1.values, s=s)
    circ = sfft.irfftn(F0 * np.conj(F1), s=s)
    idx = np.arange(-(n - 1), n) % P
    vals = circ[np.ix_(*([idx] * d))] * f0.h**d
    return CorrelationField(vals, n)


def correlate_brute(f0: GridFunction, f1: GridFunction, backend=None) -> CorrelationField:
    """Direct O(n^{2d}) evaluation of the lattice correlation."""
    from . import kernels

    _check_same_grid(f0, f1)
    vals = kernels.brute_correlation(f0.values, f1.values, backend=backend)
    return CorrelationField(vals * f0.h**f0.d, f0.n)


def shift_array(values: np.ndarray, offset) -> np.ndarray:
    """``out[i] = values[i + offset]`` with zero fill outside the grid."""
    out = np.zeros_like(values)
    src, dst = [], []
    for o, n in zip(offset, values.shape):
        o = int(o)
        if abs(o) >= n:
            return out
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = values[tuple(src)]
    return out
