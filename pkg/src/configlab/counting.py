"""Configuration counts: distances, simplices, rectangles and simplex products.

All counts are evaluated on cell-average grid functions.  For two slots the
correlation ``C(z) = int f0(x) f1(x - z) dx`` is exactly the multilinear
interpolation of its values at whole-cell shifts, so a spherical average of
``C`` reduces to a weighted sum over lattice shifts (the *sphere stencil*).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import ResolutionError, UsageError
from .grid import GridFunction, correlate, correlate_brute, shift_array
from .measures import SimplexSpec, haar_rotations, intersection_sphere, unit_sphere_quadrature

BRUTE_LIMIT = 2**24  # largest n^(2d) accepted by brute-force paths


@dataclass
class CountResult:
    """Value of a counting operator with its numerical error estimate."""

    value: float
    error: float
    method: str
    budgets: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "method": self.method,
                "budgets": dict(self.budgets)}


# ---------------------------------------------------------------------------
# sphere stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SphereStencil:
    """Weights ``phi[k]`` with ``int F(rho u) dsigma(u) = sum_k phi[k] F[k]``
    for every ``F`` that is multilinear on each lattice cell."""

    offsets: np.ndarray  # (K, d) int
    weights: np.ndarray  # (K,)
    error: float
    budget: int

    @property
    def reach(self) -> int:
        return int(np.abs(self.offsets).max()) if self.offsets.size else 0

    def dense(self, d: int | None = None) -> tuple[np.ndarray, int]:
        """Dense array of weights centred at index ``reach``."""
        r = self.reach
        d = self.offsets.shape[1] if d is None else d
        out = np.zeros((2 * r + 1,) * d)
        np.add.at(out, tuple((self.offsets + r).T), self.weights)
        return out, r


def _circle_stencil(rho: float) -> SphereStencil:
    """Exact stencil on the circle of radius ``rho`` (cell units)."""
    m = np.arange(np.ceil(-rho), np.floor(rho) + 1)
    m = m[np.abs(m) <= rho]
    ac = np.arccos(np.clip(m / rho, -1, 1))
    asn = np.arcsin(np.clip(m / rho, -1, 1))
    br = np.concatenate([ac, -ac, asn, np.pi - asn, [0.0, 2 * np.pi]])
    br = np.unique(np.mod(br, 2 * np.pi))
    br = np.concatenate([br, [2 * np.pi]]) if br[-1] < 2 * np.pi else br
    t0, t1 = br[:-1], br[1:]
    keep = t1 - t0 > 1e-15
    t0, t1 = t0[keep], t1[keep]
    mid = (t0 + t1) / 2
    a = np.floor(rho * np.cos(mid))
    b = np.floor(rho * np.sin(mid))
    # integrals of 1, x, y and x*y over each arc (x = rho cos t, y = rho sin t)
    i1 = t1 - t0
    ix = rho * (np.sin(t1) - np.sin(t0))
    iy = -rho * (np.cos(t1) - np.cos(t0))
    ixy = rho**2 * (np.sin(t1) ** 2 - np.sin(t0) ** 2) / 2
    # bilinear corner weights, expanded in 1, x, y, xy
    w00 = (a + 1) * (b + 1) * i1 - (b + 1) * ix - (a + 1) * iy + ixy
    w10 = -a * (b + 1) * i1 + (b + 1) * ix + a * iy - ixy
    w01 = -(a + 1) * b * i1 + b * ix + (a + 1) * iy - ixy
    w11 = a * b * i1 - b * ix - a * iy + ixy
    offs = np.concatenate([np.stack([a, b], 1), np.stack([a + 1, b], 1),
                           np.stack([a, b + 1], 1), np.stack([a + 1, b + 1], 1)])
    wts = np.concatenate([w00, w10, w01, w11]) / (2 * np.pi)
    return _merge(offs.astype(np.int64), wts, error=64 * np.finfo(float).eps, budget=len(t0))


def _merge(offs, wts, error, budget) -> SphereStencil:
    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), weights=wts, minlength=len(uniq))
    keep = np.abs(w) > 1e-300
    return SphereStencil(uniq[keep], w[keep], float(error), int(budget))


def _spread(points: np.ndarray, weights: np.ndarray):
    """Distribute point masses to the 2^d lattice corners with hat weights."""
    base = np.floor(points).astype(np.int64)
    frac = points - base
    d = points.shape[1]
    offs, wts = [], []
    for corner in np.ndindex(*([2] * d)):
        c = np.array(corner)
        offs.append(base + c)
        wts.append(weights * np.prod(np.where(c == 1, frac, 1 - frac), axis=1))
    return np.concatenate(offs), np.concatenate(wts)


def sphere_stencil(d: int, rho: float, budget: int = 4096, seed: int = 0) -> SphereStencil:
    """Stencil of the normalized sphere measure of radius ``rho`` cells in ``R^d``.

    Exact (up to rounding) for ``d = 2``; for ``d >= 3`` built from the sphere
    quadrature, with the error estimated by halving the budget.
    """
    if rho <= 0:
        raise UsageError("stencil radius must be positive")
    if d == 2:
        return _circle_stencil(rho)
    q = unit_sphere_quadrature(d, budget, seed)
    offs, wts = _spread(rho * q.nodes, q.weights)
    return _merge(offs, wts, 0.0 if d == 1 else np.nan, q.size)


def _apply_stencil(field_at_index, stencil: SphereStencil) -> float:
    return float(np.dot(stencil.weights, field_at_index(stencil.offsets)))


def _resolvable(scale: float, h: float, what: str = "lambda"):
    if scale < 2 * h * (1 - 1e-12):
        raise ResolutionError(f"{what}={scale:g} is below 2h={2 * h:g}; the grid cannot resolve it")


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def count_distance(f0: GridFunction, f1: GridFunction, lam: float, method: str = "fft",
                   budget: int = 4096, seed: int = 0) -> CountResult:
    """``T(f0, f1)(lam) = int int f0(x) f1(x - lam x1) dsigma(x1) dx``.

    Parameters
    ----------
    method : {"fft", "brute", "quadrature"}
        ``fft`` correlates by FFT and applies the sphere stencil; ``brute``
        uses the direct O(n^{2d}) correlation; ``quadrature`` averages exact
        shifted overlaps at sphere quadrature nodes without the FFT.
    """
    if f0.values.shape != f1.values.shape:
        raise UsageError("count_distance needs functions on the same grid")
    if not 0 < lam <= 1:
        raise UsageError(f"lambda must lie in (0, 1], got {lam}")
    _resolvable(lam, f0.h)
    d, rho = f0.d, lam * f0.n
    if method == "quadrature":
        return _distance_quadrature(f0, f1, rho, budget, seed)
    if method == "fft":
        C = correlate(f0, f1)
    elif method == "brute":
        if f0.n ** (2 * d) > BRUTE_LIMIT:
            raise UsageError(f"brute method limited to n^(2d) <= {BRUTE_LIMIT}; n={f0.n}, d={d}")
        C = correlate_brute(f0, f1)
    else:
        raise UsageError(f"unknown method {method!r}")
    st = sphere_stencil(d, rho, budget, seed)
    value = _apply_stencil(C.at_index, st)
    err = st.error * max(1.0, abs(value))
    if np.isnan(st.error):
        half = sphere_stencil(d, rho, max(16, budget // 2), seed + 1)
        err = abs(value - _apply_stencil(C.at_index, half))
    return CountResult(value, float(err), method, {"stencil_nodes": st.budget})


def _distance_quadrature(f0, f1, rho, budget, seed) -> CountResult:
    d = f0.d
    q = unit_sphere_quadrature(d, budget, seed)
    pts = rho * q.nodes
    offs, wts = _spread(pts, q.weights)
    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    inv = inv.ravel()
    shifts = np.zeros((len(uniq), 2, d), dtype=np.int64)
    shifts[:, 1] = -uniq  # f1 read at i - k
    Ck = kernels.shifted_product_sums([f0.values, f1.values], shifts) * f0.h**d
    hat = wts / np.tile(q.weights, 2**d)
    per_node = (Ck[inv] * hat).reshape(2**d, q.size).sum(axis=0)
    value = float(np.dot(q.weights, per_node))
    if q.exact:
        err = abs(value - per_node[::2].mean())
    else:
        pairs = per_node.reshape(2, -1).mean(axis=0)
        err = pairs.std(ddof=1) / np.sqrt(pairs.size) if pairs.size > 1 else abs(value)
    return CountResult(value, float(err), "quadrature", {"nodes": q.size})


# ---------------------------------------------------------------------------
# simplices
# ---------------------------------------------------------------------------


def simplex_offsets(simplex: SimplexSpec, d: int, lam: float, n: int, count: int,
                    seed: int) -> np.ndarray:
    """Integer slot offsets ``(count, k+1, d)`` for randomly rotated simplices.

    Each draw takes a Haar rotation ``U`` and a uniform sub-cell point ``u``;
    slot ``i`` is read at ``floor(u - lam U v_i / h)`` relative to the cell.
    Averaging ``h^d`` times the shifted product sums over draws is an
    unbiased estimate of the rotation-averaged count.
    """
    rng = np.random.default_rng([seed, 1])
    U = haar_rotations(d, count, seed)
    verts = np.vstack([np.zeros(d), simplex.embed(d)])  # (k+1, d)
    p = lam * n * np.einsum("bij,kj->bki", U, verts)
    u = rng.random((count, 1, d))
    return np.floor(u - p).astype(np.int64)


def count_simplex(fs, simplex: SimplexSpec, lam: float, method: str = "rotation",
                  budget: int = 256, seed: int = 0) -> CountResult:
    """``T_Delta(f_0..f_k)(lam) = int int prod_i f_i(x - lam U v_i) dU dx``.

    Parameters
    ----------
    method : {"rotation", "iterated"}
        ``rotation`` averages over Haar rotations (``budget`` draws);
        ``iterated`` nests intersection-sphere quadratures, with ``budget``
        split across random global rotations.
    """
    fs = list(fs)
    k = simplex.k
    if len(fs) != k + 1:
        raise UsageError(f"simplex with k={k} needs {k + 1} slots, got {len(fs)}")
    f0 = fs[0]
    for f in fs[1:]:
        if f.values.shape != f0.values.shape:
            raise UsageError("all slots must share the grid")
    d, n, h = f0.d, f0.n, f0.h
    if d < k + 1:
        raise UsageError(f"simplex count needs d >= k + 1 = {k + 1}, got d={d}")
    if not 0 < lam <= 1:
        raise UsageError(f"lambda must lie in (0, 1], got {lam}")
    _resolvable(lam * simplex.diameter, h, "lambda*max|v_i|")
    slots = [f.values for f in fs]
    if method == "rotation":
        offs = simplex_offsets(simplex, d, lam, n, budget, seed)
        vals = kernels.shifted_product_sums(slots, offs) * h**d
        err = vals.std(ddof=1) / np.sqrt(vals.size) if vals.size > 1 else 0.0
        return CountResult(float(vals.mean()), float(err), "rotation", {"rotations": budget})
    if method == "iterated":
        return _simplex_iterated(slots, simplex, d, n, lam, budget, seed)
    raise UsageError(f"unknown method {method!r}")


def iterated_nodes(simplex: SimplexSpec, d: int, level_budget: int, seed: int):
    """Chained intersection-sphere nodes: ``(N, k, d)`` vertex tuples and weights."""
    k = simplex.k
    tuples = np.zeros((1, 0, d))
    weights = np.ones(1)
    for j in range(1, k + 1):
        new_t, new_w = [], []
        for t, w in zip(tuples, weights):
            sph = intersection_sphere(d, t, simplex, j)
            q = sph.quadrature(level_budget, seed + j)
            new_t.append(np.concatenate([np.repeat(t[None], q.size, 0), q.nodes[:, None, :]], 1))
            new_w.append(w * q.weights)
        tuples = np.concatenate(new_t)
        weights = np.concatenate(new_w)
    return tuples, weights


def _simplex_iterated(slots, simplex, d, n, lam, budget, seed) -> CountResult:
    k = simplex.k
    level = max(2, int(round(budget ** (1.0 / k))))
    batches = 16
    tuples, weights = iterated_nodes(simplex, d, level, seed)
    rng = np.random.default_rng([seed, 2])
    U = haar_rotations(d, batches, seed + 7919)
    vals = np.empty(batches)
    for b in range(batches):
        verts = np.concatenate([np.zeros((len(tuples), 1, d)), tuples], axis=1)
        p = lam * n * verts @ U[b].T
        u = rng.random((1, 1, d))
        offs = np.floor(u - p).astype(np.int64)
        sums = kernels.shifted_product_sums(slots, offs)
        vals[b] = np.dot(weights, sums) / n**d
    err = vals.std(ddof=1) / np.sqrt(batches)
    return CountResult(float(vals.mean()), float(err), "iterated",
                       {"level_nodes": level, "tuples": len(tuples), "batches": batches})


# ---------------------------------------------------------------------------
# rectangles
# ---------------------------------------------------------------------------


def _split_check(fs, name="rectangle"):
    f = fs[0]
    for g in fs[1:]:
        if g.values.shape != f.values.shape:
            raise UsageError("all slots must share the grid")
    if f.split is None:
        raise UsageError(f"{name} counts need functions on a product grid")
    return f.dims


def count_rectangle(f00: GridFunction, f10: GridFunction, f01: GridFunction,
                    f11: GridFunction, lam: float, c: float, method: str = "fft",
                    budget: int = 4096, seed: int = 0) -> CountResult:
    """``T_box_c(f00, f10, f01, f11)(lam)``.

    Slot order: ``f00(x, y) f10(x - lam x1, y) f01(x, y - c lam y1)
    f11(x - lam x1, y - c lam y1)`` averaged over ``x1, y1`` on unit spheres.
    """
    fs = [f00, f10, f01, f11]
    d1, d2 = _split_check(fs)
    if d1 < 2 or d2 < 2:
        raise UsageError("rectangle counts need d1, d2 >= 2")
    if not 0 < c <= 1:
        raise UsageError(f"aspect c must lie in (0, 1], got {c}")
    if not 0 < lam <= 1:
        raise UsageError(f"lambda must lie in (0, 1], got {lam}")
    h, n = f00.h, f00.n
    _resolvable(c * lam, h, "c*lambda")
    st1 = sphere_stencil(d1, lam * n, budget, seed)
    st2 = sphere_stencil(d2, c * lam * n, budget, seed + 1)
    vals = [f.values for f in fs]
    if method == "brute":
        if n ** (2 * (d1 + d2)) > BRUTE_LIMIT * 64:
            raise UsageError("brute rectangle count limited to small grids")
        value = _rectangle_brute(vals, st1, st2, d1, d2, h)
    elif method == "fft":
        value = rectangle_lattice_sum(vals, st1, st2, d1, d2) * h ** (d1 + d2)
    else:
        raise UsageError(f"unknown method {method!r}")
    if np.isnan(st1.error) or np.isnan(st2.error):
        # rerun with half-budget stencils on the inexact factors
        half1 = sphere_stencil(d1, lam * n, budget // 2, seed + 2) if np.isnan(st1.error) else st1
        half2 = sphere_stencil(d2, c * lam * n, budget // 2, seed + 3) if np.isnan(st2.error) else st2
        err = abs(value - rectangle_lattice_sum(vals, half1, half2, d1, d2) * h ** (d1 + d2))
    else:
        err = (st1.error + st2.error) * max(1.0, abs(value))
    return CountResult(float(value), float(err), method,
                       {"stencil1": st1.budget, "stencil2": st2.budget})


def _rectangle_brute(vals, st1, st2, d1, d2, h):
    K1, K2 = len(st1.offsets), len(st2.offsets)
    k = np.repeat(st1.offsets, K2, axis=0)
    l = np.tile(st2.offsets, (K1, 1))
    z1 = np.zeros_like(k)
    z2 = np.zeros_like(l)
    offs = np.stack([np.concatenate([z1, z2], 1), np.concatenate([-k, z2], 1),
                     np.concatenate([z1, -l], 1), np.concatenate([-k, -l], 1)], axis=1)
    sums = kernels.shifted_product_sums(vals, offs)
    w = np.repeat(st1.weights, K2) * np.tile(st2.weights, K1)
    return float(np.dot(w, sums)) * h ** (d1 + d2)


def rectangle_lattice_sum(vals, st1: SphereStencil, st2: SphereStencil, d1: int,
                          d2: int) -> float:
    """``sum_{k,l} phi1[k] phi2[l] sum_{i,j} F00[i,j] F10[i-k,j] F01[i,j-l] F11[i-k,j-l]``.

    Loops over ``k`` and evaluates the ``l``-sum for all rows at once by FFT
    along the second factor.
    """
    n = vals[0].shape[0]
    F00, F10, F01, F11 = vals
    same = all(v is F00 or np.array_equal(v, F00) for v in (F10, F01, F11))
    reach2 = st2.reach
    P = sfft.next_fast_len(n + reach2 + 1, real=True)
    Phi2, r2 = st2.dense(d2)
    # circular embedding of phi2 on the padded grid; index l maps to l mod P
    ker = np.zeros((P,) * d2)
    idx = tuple(np.arange(-r2, r2 + 1) % P for _ in range(d2))
    ker[np.ix_(*idx)] = Phi2
    Khat = sfft.rfftn(ker, s=(P,) * d2)
    binw = np.full(Khat.shape[-1], 2.0)
    binw[0] = 1.0
    if P % 2 == 0:
        binw[-1] = 1.0
    rows = n**d1

    def lsum(g0, g1):
        a = g0.reshape(rows, *g0.shape[d1:])
        live = np.any(a != 0, axis=tuple(range(1, d2 + 1)))
        if g1 is not g0:
            b = g1.reshape(rows, *g1.shape[d1:])
            live &= np.any(b != 0, axis=tuple(range(1, d2 + 1)))
        if not live.any():
            return 0.0
        G0 = sfft.rfftn(a[live], s=(P,) * d2, axes=tuple(range(1, d2 + 1)))
        if g1 is g0:
            S = np.sum(G0.real**2 + G0.imag**2, axis=0)
        else:
            G1 = sfft.rfftn(b[live], s=(P,) * d2, axes=tuple(range(1, d2 + 1)))
            S = np.sum(G0 * np.conj(G1), axis=0)
        # sum_l phi2[l] corr[l] with corr = irfft(S): Parseval on the rfft half-spectrum
        return float(np.sum(binw * (S * np.conj(Khat)).real)) / P**d2

    total = 0.0
    done = set()
    for kk, w in zip(st1.offsets, st1.weights):
        key = tuple(kk)
        if key in done:
            continue
        shift = tuple(-kk) + (0,) * d2
        g0 = F00 * shift_array(F10, shift)
        g1 = g0 if same else F01 * shift_array(F11, shift)
        r = lsum(g0, g1)
        if same:
            neg = tuple(-kk)
            # the sum at -k equals the sum at k when all slots coincide
            wneg = _weight_at(st1, neg) if neg != key else 0.0
            total += (w + wneg) * r
            done.add(neg)
        else:
            total += w * r
        done.add(key)
    return total


def _weight_at(st: SphereStencil, key) -> float:
    hit = np.all(st.offsets == np.asarray(key), axis=1)
    return float(st.weights[hit].sum())


# ---------------------------------------------------------------------------
# products of simplices
# ---------------------------------------------------------------------------


def count_product_simplices(fs, s1: SimplexSpec, s2: SimplexSpec, lam: float,
                            budget: int = 16, seed: int = 0) -> CountResult:
    """``T_{Delta,Delta}``: slot ``f_ij`` read at ``(x - lam U1 v_i, y - lam U2 w_j)``.

    Parameters
    ----------
    fs : sequence of sequences
        ``fs[i][j]`` for ``0 <= i <= k1``, ``0 <= j <= k2``.
    budget : int
        Rotations per factor; all ``budget**2`` pairs are averaged.
    """
    k1, k2 = s1.k, s2.k
    if len(fs) != k1 + 1 or any(len(row) != k2 + 1 for row in fs):
        raise UsageError(f"expected a {(k1 + 1)}x{(k2 + 1)} matrix of slots")
    flat = [f for row in fs for f in row]
    d1, d2 = _split_check(flat, "product-simplex")
    if d1 < k1 + 1 or d2 < k2 + 1:
        raise UsageError(f"need d1 >= {k1 + 1} and d2 >= {k2 + 1}")
    if not 0 < lam <= 1:
        raise UsageError(f"lambda must lie in (0, 1], got {lam}")
    n, h = flat[0].n, flat[0].h
    _resolvable(lam * min(s1.diameter, s2.diameter), h, "lambda*max|v_i|")
    o1 = simplex_offsets(s1, d1, lam, n, budget, seed)      # (R, k1+1, d1)
    o2 = simplex_offsets(s2, d2, lam, n, budget, seed + 1)  # (R, k2+1, d2)
    R = budget
    offs = np.zeros((R, R, k1 + 1, k2 + 1, d1 + d2), dtype=np.int64)
    offs[..., :d1] = o1[:, None, :, None, :]
    offs[..., d1:] = o2[None, :, None, :, :]
    slots = [f.values for f in flat]
    vals = kernels.shifted_product_sums(slots, offs.reshape(R * R, -1, d1 + d2))
    vals = vals.reshape(R, R) * h ** (d1 + d2)
    se = np.sqrt(vals.mean(1).var(ddof=1) / R + vals.mean(0).var(ddof=1) / R) if R > 1 else 0.0
    return CountResult(float(vals.mean()), float(se), "rotation", {"rotations_per_factor": R})


def make_relative_weights(B1: GridFunction, B2: GridFunction, k1: int = 1, k2: int = 1):
    """Relative weights ``(nu, nu_tilde, nu1, nu2)`` for sets ``B1``, ``B2``.

    ``nu1 = 1_B1 / |B1|``, ``nu2 = 1_B2 / |B2|``, ``nu = nu1^(1/2) (x) nu2^(1/2)``
    and ``nu_tilde = nu1^(1/(k2+1)) (x) nu2^(1/(k1+1))``.
    """
    if B1.n != B2.n:
        raise UsageError("B1 and B2 must share the resolution")
    b1, b2 = B1.integral(), B2.integral()
    if b1 <= 0 or b2 <= 0:
        raise UsageError("B1 and B2 must have positive density")
    nu1 = GridFunction(B1.values / b1, meta={"beta": b1})
    nu2 = GridFunction(B2.values / b2, meta={"beta": b2})
    nu = GridFunction(np.multiply.outer(np.sqrt(nu1.values), np.sqrt(nu2.values)), split=B1.d)
    nut = GridFunction(np.multiply.outer(nu1.values ** (1.0 / (k2 + 1)),
                                         nu2.values ** (1.0 / (k1 + 1))), split=B1.d)
    return nu, nut, nu1, nu2
