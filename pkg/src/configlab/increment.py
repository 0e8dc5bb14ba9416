"""Density-increment machinery: scale-adapted regularity partitions,
inverse-theorem increment search, the dichotomy step and the pipeline.

Partitions live on the common ``n``-cell lattice of both factors; every
cube and rectangle has whole-cell corners, so densities and energies are
exact sums of cell values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .counting import count_rectangle, make_relative_weights
from .errors import (BudgetExhausted, HypothesisError, ResolutionError, ScaleError,
                     ScalesExhausted, UsageError)
from .grid import MIN_RESOLUTION, GridFunction, apply_axes, balanced_part, window_fractions
from .norms import box_norm, box_window_quartic, uniformity_defect

INVERSE_C = 2.0**-16
IDENTITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# per-factor statistics
# ---------------------------------------------------------------------------


def _box_sum_table(values: np.ndarray) -> np.ndarray:
    S = values
    for a in range(values.ndim):
        S = np.cumsum(S, axis=a)
    return np.pad(S, [(1, 0)] * values.ndim)


@lru_cache(maxsize=128)
def _inner_window_gram(side: int, ell: int):
    """Gram data of window fractions for corners ``t in [0, side - ell]`` (cell units)."""
    span = side - ell
    gl = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    k = np.arange(span)
    t = (k[:, None] + 0.5 + 0.5 * gl[None, :]).ravel()
    w = np.full(t.size, 0.5)
    P = window_fractions(t + ell / 2, side, ell)
    M = P.T @ (P * w[:, None])
    c = w @ P
    M.setflags(write=False)
    c.setflags(write=False)
    return M, c


class FactorStats:
    """Box sums and cached cube defects of one factor set ``B``."""

    def __init__(self, B: GridFunction):
        self.B = B
        self.values = B.values
        self.d = B.d
        self.n = B.n
        self._table = _box_sum_table(self.values)
        self._defects = {}

    def box_sum(self, lo, hi) -> float:
        total = 0.0
        for corner in product((0, 1), repeat=self.d):
            idx = tuple(hi[a] if c else lo[a] for a, c in enumerate(corner))
            sign = (-1) ** (self.d - sum(corner))
            total += sign * self._table[idx]
        return float(total)

    def density(self, lo, hi) -> float:
        vol = float(np.prod(np.subtract(hi, lo)))
        return self.box_sum(lo, hi) / vol

    def cube_defect(self, lo, side: int, ell: int) -> float:
        """Root mean-square deviation of window densities on a cube.

        Windows ``t + [0, ell]^d`` with corners ``t`` ranging over the cube
        such that the window stays inside it; the mean over ``t`` is exact.
        """
        key = (tuple(lo), side, ell)
        if key in self._defects:
            return self._defects[key]
        if ell >= side:
            raise UsageError(f"window of {ell} cells does not fit a cube of {side} cells")
        sl = tuple(slice(a, a + side) for a in lo)
        block = self.values[sl]
        delta = float(block.mean())
        M, c = _inner_window_gram(side, ell)
        sq = float(np.vdot(block, apply_axes(block, [M] * self.d)))
        lin = float(apply_axes(block, [c[None, :]] * self.d).ravel()[0])
        vol = float((side - ell) ** self.d)
        mse = (sq - 2 * delta * lin + delta**2 * vol) / vol
        val = float(np.sqrt(max(mse, 0.0)))
        self._defects[key] = val
        return val

    def best_shift(self, lo, side: int, s: int, delta: float, eta: float):
        """Grid shift (stride one cell) capturing most of ``E_eta``.

        Returns ``(shift, capture)`` where ``capture`` is the fraction of the
        ``m^d`` sub-cubes of side ``s`` (``m = side // s``) whose density
        deviates from ``delta`` by at least ``eta / 2``.
        """
        sl = tuple(slice(a, a + side) for a in lo)
        block = self.values[sl]
        sums = block
        for a in range(self.d):
            cs = np.cumsum(np.pad(sums, [(1, 0) if b == a else (0, 0) for b in range(self.d)]), axis=a)
            sums = np.take(cs, np.arange(s, side + 1), axis=a) - np.take(cs, np.arange(side - s + 1), axis=a)
        E = np.abs(sums / s**self.d - delta) >= eta / 2 - 1e-15
        m = side // s
        best, best_count = (0,) * self.d, -1
        for o in product(range(s), repeat=self.d):
            cnt = int(E[tuple(slice(x, None, s) for x in o)].sum())
            if cnt > best_count:
                best, best_count = o, cnt
        return best, best_count / m**self.d


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


@dataclass
class Cell:
    """Product cell ``Q1 x Q2`` with whole-cell corners (``hi`` exclusive)."""

    lo1: tuple
    hi1: tuple
    lo2: tuple
    hi2: tuple
    kind: str  # "U" uniform cube, "N" non-uniform cube, "R" rectangle
    scale: int
    delta1: float
    delta2: float
    volume: float
    defects: tuple = (0.0, 0.0)

    @property
    def is_cube(self) -> bool:
        return self.kind in ("U", "N")

    def to_dict(self) -> dict:
        return {"lo1": list(self.lo1), "hi1": list(self.hi1), "lo2": list(self.lo2),
                "hi2": list(self.hi2), "kind": self.kind, "scale": self.scale,
                "delta1": self.delta1, "delta2": self.delta2, "volume": self.volume,
                "defects": list(self.defects)}


@dataclass
class ScalePartition:
    """Partition of ``[0,1]^d1 x [0,1]^d2`` into cubes and rectangles.

    ``level`` is the index ``j`` of the finest scale used so far; the
    ``N`` cubes have side ``L_j`` and were tested at ``L_{j+1}``.
    """

    n: int
    d1: int
    d2: int
    scales: list
    sides: list
    eta: float
    cells: list
    level: int = 0
    energy_value: float = 0.0
    rounds: list = field(default_factory=list)
    status: str = "open"

    def mass(self, kind: str) -> float:
        return float(sum(c.volume for c in self.cells if c.kind == kind))

    @property
    def energy_trace(self) -> list:
        return [r["energy_before"] for r in self.rounds] + [self.energy_value]

    def to_dict(self, with_cells: bool = False) -> dict:
        out = {"n": self.n, "d1": self.d1, "d2": self.d2, "scales": list(self.scales),
               "eta": self.eta, "level": self.level, "energy": self.energy_value,
               "status": self.status, "cells": len(self.cells),
               "mass": {k: self.mass(k) for k in "UNR"}, "rounds": self.rounds,
               "energy_trace": self.energy_trace}
        if with_cells:
            out["cell_list"] = [c.to_dict() for c in self.cells]
        return out


def _scale_sides(scales, n: int):
    L = [float(x) for x in scales]
    if not L:
        raise UsageError("scale list is empty")
    if L[0] < 1.0 - 1e-12:
        L = [1.0] + L
    for a, b in zip(L, L[1:]):
        if not b < 0.5 * a:
            raise ScaleError(f"scales must be lacunary, L_(j+1) < L_j / 2; got {b:g} after {a:g}")
    sides = []
    for x in L:
        s = x * n
        if abs(s - round(s)) > 1e-9 or round(s) < 1:
            raise UsageError(f"scale {x:g} is not a whole number of cells at n={n}")
        sides.append(int(round(s)))
    return L, sides


def _cell_energy(c: Cell) -> float:
    return 0.5 * (c.delta1**2 + c.delta2**2) * c.volume


def energy(B1: GridFunction, B2: GridFunction, partition: ScalePartition) -> float:
    """``1/2 sum (delta1^2 + delta2^2) |C|`` recomputed from the sets."""
    s1, s2 = FactorStats(B1), FactorStats(B2)
    total = 0.0
    for c in partition.cells:
        total += 0.5 * (s1.density(c.lo1, c.hi1) ** 2 + s2.density(c.lo2, c.hi2) ** 2) * c.volume
    return float(total)


def _classify(cell: Cell, st1: FactorStats, st2: FactorStats, ell: int, eta: float):
    side = cell.hi1[0] - cell.lo1[0]
    e1 = st1.cube_defect(cell.lo1, side, ell)
    e2 = st2.cube_defect(cell.lo2, side, ell)
    cell.defects = (e1, e2)
    cell.kind = "N" if max(e1, e2) > eta else "U"
    return cell


def _pieces(lo, hi, offset, s):
    """Per-axis breakpoints of the grid ``lo + offset + s Z`` inside ``[lo, hi]``."""
    out = []
    for a in range(len(lo)):
        bp = [lo[a]]
        x = lo[a] + offset[a]
        if x > lo[a]:
            bp.append(x)
        while x + s <= hi[a]:
            x += s
            bp.append(x)
        if bp[-1] != hi[a]:
            bp.append(hi[a])
        out.append(bp)
    boxes = []
    for seg in product(*[list(zip(b[:-1], b[1:])) for b in out]):
        lo_b = tuple(p[0] for p in seg)
        hi_b = tuple(p[1] for p in seg)
        boxes.append((lo_b, hi_b, all(p[1] - p[0] == s for p in seg)))
    return boxes


def initial_partition(B1: GridFunction, B2: GridFunction, scales, eta: float) -> ScalePartition:
    """One-cell partition with the root classified at ``L_1``."""
    if B1.n != B2.n:
        raise UsageError("B1 and B2 must share the resolution")
    if not 0 < eta <= 1:
        raise UsageError(f"eta must lie in (0, 1], got {eta}")
    L, sides = _scale_sides(scales, B1.n)
    if len(sides) < 2:
        raise UsageError("need at least one scale below 1")
    n = B1.n
    st1, st2 = FactorStats(B1), FactorStats(B2)
    root = Cell((0,) * B1.d, (n,) * B1.d, (0,) * B2.d, (n,) * B2.d, "U", 0,
                st1.density((0,) * B1.d, (n,) * B1.d), st2.density((0,) * B2.d, (n,) * B2.d), 1.0)
    _classify(root, st1, st2, sides[1], eta)
    part = ScalePartition(n, B1.d, B2.d, L, sides, eta, [root])
    part.energy_value = _cell_energy(root)
    part._stats = (st1, st2)
    return part


def refine_nonuniform(partition: ScalePartition, B1: GridFunction, B2: GridFunction,
                      eta: float, next_scale: float | None = None,
                      strict: bool = False) -> ScalePartition:
    """Split every ``N`` cube at the next scale along the best grid shift.

    The first non-uniform factor gets the shift maximizing the captured
    ``E_eta`` mass; the other factor's grid starts at the cube corner.
    New cubes are classified at the following scale.  Each split records
    the refinement identity residual, the energy gain and the rectangle
    mass; ``strict`` enforces ``L_(j+1) <= 2^-(j+6) eta L_j``.
    """
    j = partition.level
    L, sides = partition.scales, partition.sides
    if j + 1 >= len(sides):
        raise ScalesExhausted("no scale left to refine to", trace=partition.energy_trace)
    if next_scale is not None and abs(next_scale - L[j + 1]) > 1e-12:
        raise UsageError(f"next scale {next_scale:g} does not match L_(j+1) = {L[j + 1]:g}")
    ratio_ok = L[j + 1] <= 2.0 ** -(j + 6) * eta * L[j] + 1e-15
    if strict and not ratio_ok:
        raise ScaleError(f"scale ratio violation: L_(j+1) = {L[j + 1]:g} exceeds "
                         f"2^-(j+6) eta L_j = {2.0 ** -(j + 6) * eta * L[j]:g}")
    s = sides[j + 1]
    if s < MIN_RESOLUTION:
        raise ResolutionError(f"cubes of {s} cells per axis are below the floor of {MIN_RESOLUTION}")
    if j + 2 >= len(sides):
        raise ScalesExhausted("no scale left to classify the new cubes",
                              trace=partition.energy_trace)
    ell_next = sides[j + 2]
    st1, st2 = getattr(partition, "_stats", (FactorStats(B1), FactorStats(B2)))
    h_vol = 1.0 / partition.n ** (partition.d1 + partition.d2)
    new_cells, splits = [], []
    energy_before = partition.energy_value
    for cell in partition.cells:
        if cell.kind != "N":
            new_cells.append(cell)
            continue
        side = cell.hi1[0] - cell.lo1[0]
        o1, o2 = (0,) * partition.d1, (0,) * partition.d2
        capture = None
        if cell.defects[0] > eta:
            o1, capture = st1.best_shift(cell.lo1, side, s, cell.delta1, eta)
        else:
            o2, capture = st2.best_shift(cell.lo2, side, s, cell.delta2, eta)
        boxes1 = _pieces(cell.lo1, cell.hi1, o1, s)
        boxes2 = _pieces(cell.lo2, cell.hi2, o2, s)
        lhs = var = rect = 0.0
        children = []
        for lo1, hi1, cube1 in boxes1:
            d1v = st1.density(lo1, hi1)
            v1 = float(np.prod(np.subtract(hi1, lo1)))
            for lo2, hi2, cube2 in boxes2:
                d2v = st2.density(lo2, hi2)
                vol = v1 * float(np.prod(np.subtract(hi2, lo2))) * h_vol
                ch = Cell(lo1, hi1, lo2, hi2, "R", j + 1, d1v, d2v, vol)
                if cube1 and cube2:
                    _classify(ch, st1, st2, ell_next, eta)
                else:
                    rect += vol
                lhs += (d1v**2 + d2v**2) * vol
                var += ((d1v - cell.delta1) ** 2 + (d2v - cell.delta2) ** 2) * vol
                children.append(ch)
        rhs = (cell.delta1**2 + cell.delta2**2) * cell.volume + var
        gain = 0.5 * var
        splits.append({"cell_volume": cell.volume, "defects": list(cell.defects),
                       "shift1": list(o1), "shift2": list(o2), "capture": capture,
                       "capture_ok": bool(capture >= eta**2 / 4 - 1e-12),
                       "identity_residual": abs(lhs - rhs), "gain": gain,
                       "gain_bound": eta**4 / 128 * cell.volume,
                       "gain_ok": bool(gain >= eta**4 / 128 * cell.volume - 1e-12),
                       "rect_mass": rect, "rect_bound": 16 * s / sides[j] * cell.volume})
        new_cells.extend(children)
    out = ScalePartition(partition.n, partition.d1, partition.d2, L, sides, eta, new_cells,
                         j + 1, rounds=list(partition.rounds), status=partition.status)
    out._stats = (st1, st2)
    out.energy_value = float(sum(_cell_energy(c) for c in new_cells))
    out.rounds.append({"level": j, "energy_before": energy_before,
                       "energy_after": out.energy_value,
                       "N_mass_before": partition.mass("N"), "ratio_ok": bool(ratio_ok),
                       "splits": splits,
                       "max_identity_residual": max((x["identity_residual"] for x in splits),
                                                    default=0.0)})
    return out


def regularize(B1: GridFunction, B2: GridFunction, scales, eta: float,
               strict: bool = False) -> ScalePartition:
    """Refine until the non-uniform cubes have total measure at most ``eta / 2``.

    Raises
    ------
    ScaleError
        Scales not lacunary (``L_(j+1) < L_j / 2``).
    ScalesExhausted
        The scale list ran out first; the energy trace is attached.
    ResolutionError
        Cubes would drop below the resolution floor.
    """
    part = initial_partition(B1, B2, scales, eta)
    cap = math.ceil(256 * eta**-5)
    while True:
        if part.mass("N") <= eta / 2 + 1e-15:
            part.status = "terminated"
            break
        if len(part.rounds) >= cap:
            part.status = "round-cap"
            break
        part = refine_nonuniform(part, B1, B2, eta, strict=strict)
    part.round_cap = cap
    return part


# ---------------------------------------------------------------------------
# inverse theorem
# ---------------------------------------------------------------------------


@dataclass
class IncrementWitness:
    """Cubes ``Q1, Q2`` of side ``L`` and level sets with increased density of ``A``.

    ``scaled_value`` is ``L^-(d1+d2) int_{B1' x B2'} f nu1 nu2`` and
    ``delta`` the increment of the relative density over the baseline.
    """

    q1: tuple  # (lo cells, side cells)
    q2: tuple
    L: float
    B1_prime: GridFunction
    B2_prime: GridFunction
    u_mask: np.ndarray
    v_mask: np.ndarray
    delta: float
    scaled_value: float
    target: float
    eta: float
    alpha: float | None
    route: str
    split_integrals: dict = field(default_factory=dict)
    identity_residual: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def density(self) -> float | None:
        return None if self.alpha is None else self.alpha + self.delta

    @property
    def branch(self) -> str:
        return "witness"

    def to_dict(self) -> dict:
        return {"branch": "witness", "q1": {"lo": list(self.q1[0]), "side": self.q1[1]},
                "q2": {"lo": list(self.q2[0]), "side": self.q2[1]}, "L": self.L,
                "delta": self.delta, "density": self.density, "alpha": self.alpha,
                "scaled_value": self.scaled_value, "target": self.target, "eta": self.eta,
                "route": self.route, "split_integrals": self.split_integrals,
                "identity_residual": self.identity_residual,
                "mass1": self.B1_prime.integral(), "mass2": self.B2_prime.integral(),
                "info": self.info}


def _window_sums(values: np.ndarray, ell: int) -> np.ndarray:
    out = values
    for a in range(values.ndim):
        cs = np.cumsum(out, axis=a)
        cs = np.concatenate([np.zeros_like(np.take(cs, [0], axis=a)), cs], axis=a)
        m = out.shape[a]
        out = np.take(cs, np.arange(ell, m + 1), axis=a) - np.take(cs, np.arange(m - ell + 1), axis=a)
    return out


def _levels(g: np.ndarray, cap: int = 64) -> np.ndarray:
    u = np.unique(g[g > 0])
    if u.size > cap:
        u = np.unique(np.quantile(u, np.linspace(0, 1, cap)))
    return u


def _beta(nu: GridFunction) -> float:
    b = nu.meta.get("beta") if nu.meta else None
    return float(b) if b is not None else 1.0 / float(nu.values.max())


def inverse_search(f_A: GridFunction, nu1: GridFunction, nu2: GridFunction, L: float,
                   eta: float | None = None, c: float = INVERSE_C, alpha: float | None = None,
                   candidates: int = 8, balance_tol: float = 1e-9, allow_window: bool = True):
    """Search for cubes and level sets on which ``f_A`` has a positive mean.

    Windows ``t + [0, L]^(d1+d2)`` are scanned on a stride ``L/4`` lattice.
    A window whose normalized integral already reaches ``c eta^8`` is
    returned directly.  Otherwise the windows with the largest local box
    norm are examined: the slice point ``(x1, y1)`` maximizing the
    three-fold product, the sign parts of the slices, their best level
    sets ``U1, V1`` and the four sign-split integrals ``I_jj'``.

    Returns ``None`` when ``||f_A nu||_box(L) < eta`` or no candidate
    reaches ``c eta^8``.  ``allow_window=False`` skips the direct window
    route so that the level-set construction always runs.
    """
    d1, d2 = f_A.dims
    n, D = f_A.n, f_A.d
    if nu1.n != n or nu2.n != n or nu1.d != d1 or nu2.d != d2:
        raise UsageError("weights must match the factor grids")
    f = f_A.values
    W = f * np.multiply.outer(nu1.values, nu2.values)
    bal = float(W.mean())
    if abs(bal) > balance_tol:
        raise UsageError(f"input is not balanced: int f nu1 nu2 = {bal:.3g}")
    ell = int(round(L * n))
    if abs(L * n - ell) > 1e-9:
        raise UsageError(f"window side L={L:g} is not a whole number of cells")
    if ell < 1:
        raise ResolutionError(f"window side L={L:g} is below the cell size")
    sqrt_nu = np.multiply.outer(np.sqrt(nu1.values), np.sqrt(nu2.values))
    fnu = GridFunction(f * sqrt_nu, split=d1)
    norm = box_norm(fnu, L)
    eta = norm if eta is None else float(eta)
    if norm <= 0 or norm < eta * (1 - 1e-12):
        return None
    target = c * eta**8
    stride = max(1, ell // 4)
    I_all = _window_sums(W, ell) / ell**D
    I_sub = I_all[(slice(None, None, stride),) * D]
    info = {"box_norm": norm, "windows": int(I_sub.size), "stride_cells": stride,
            "max_window_integral": float(I_sub.max())}

    nu_prod = np.multiply.outer(nu1.values, nu2.values)

    def witness(p, u, v, Ival, route, split=None, resid=0.0):
        p = tuple(int(x) * stride for x in p)
        p1, p2 = p[:d1], p[d1:]
        m1 = np.zeros((n,) * d1, dtype=bool)
        m1[tuple(slice(a, a + ell) for a in p1)] = u
        m2 = np.zeros((n,) * d2, dtype=bool)
        m2[tuple(slice(a, a + ell) for a in p2)] = v
        mask = np.multiply.outer(m1, m2)
        den = float(np.sum(nu_prod * mask))
        delta = float(np.sum(W * mask)) / den if den > 0 else 0.0
        B1p = GridFunction(nu1.values * _beta(nu1) * m1, kind="indicator")
        B2p = GridFunction(nu2.values * _beta(nu2) * m2, kind="indicator")
        return IncrementWitness((p1, ell), (p2, ell), ell / n, B1p, B2p, m1, m2, delta,
                                float(Ival), target, eta, alpha, route, split or {}, resid,
                                dict(info))

    best_idx = np.unravel_index(int(np.argmax(I_sub)), I_sub.shape)
    if allow_window and I_sub[best_idx] >= target:
        ones1 = np.ones((ell,) * d1, dtype=bool)
        ones2 = np.ones((ell,) * d2, dtype=bool)
        return witness(best_idx, ones1, ones2, I_sub[best_idx], "window")

    # rank windows by local box norm
    idx_all = list(np.ndindex(I_sub.shape))
    quart = np.empty(len(idx_all))
    h = 1.0 / n
    for q, idx in enumerate(idx_all):
        p = np.array(idx) * stride
        quart[q] = box_window_quartic(fnu, (p[:d1] + ell / 2) * h, (p[d1:] + ell / 2) * h, L)
    order = np.argsort(-quart)[:candidates]
    best = None
    for q in order:
        idx = idx_all[q]
        p = np.array(idx) * stride
        sx = tuple(slice(a, a + ell) for a in p[:d1])
        sy = tuple(slice(a, a + ell) for a in p[d1:])
        Wb = W[sx + sy].reshape(ell**d1, ell**d2)
        Fy = f[sx].reshape(ell**d1, n**d2)          # f(x2, y1)
        Fx = f[(slice(None),) * d1 + sy].reshape(n**d1, ell**d2)  # f(x1, y2)
        S = (Fy.T @ Wb @ Fx.T) / ell**D                # S[y1, x1]
        y1, x1 = np.unravel_index(int(np.argmax(np.abs(S))), S.shape)
        g1, g2 = Fy[:, y1], Fx[x1, :]
        combos = []
        for s1, s2 in product((1, -1), repeat=2):
            a, b = np.maximum(s1 * g1, 0), np.maximum(s2 * g2, 0)
            combos.append((abs(a @ Wb @ b), a, b))
        _, a, b = max(combos, key=lambda t: t[0])
        best_lv, U1, V1 = -1.0, None, None
        for ua in _levels(a):
            u = a >= ua
            row = u.astype(float) @ Wb
            for vb in _levels(b):
                v = b >= vb
                val = abs(row @ v) / ell**D
                if val > best_lv:
                    best_lv, U1, V1 = val, u, v
        if U1 is None:
            continue
        Us, Vs = (U1, ~U1), (V1, ~V1)
        split = {}
        for j, u in enumerate(Us, 1):
            for jj, v in enumerate(Vs, 1):
                split[f"I{j}{jj}"] = float(u.astype(float) @ Wb @ v.astype(float)) / ell**D
        Iwin = float(Wb.sum()) / ell**D
        resid = abs(sum(split.values()) - Iwin)
        key = max(split, key=split.get)
        u, v = Us[int(key[1]) - 1], Vs[int(key[2]) - 1]
        cand = (split[key], idx, u.reshape((ell,) * d1), v.reshape((ell,) * d2), split, resid,
                {"slice_value": float(S[y1, x1]), "window_quartic": float(quart[q]),
                 "I_window": Iwin, "level_set_value": best_lv})
        if best is None or cand[0] > best[0]:
            best = cand
    if best is None or best[0] < target:
        return None
    Ival, idx, u, v, split, resid, extra = best
    info.update(extra)
    return witness(idx, u, v, Ival, "level-sets", split, resid)


# ---------------------------------------------------------------------------
# dichotomy
# ---------------------------------------------------------------------------


@dataclass
class CountCertificate:
    """Measured rectangle count of ``1_A nu`` against the claim ``alpha^4 / 2``."""

    value: float
    error: float
    claim: float
    alpha: float
    lam: float
    c: float
    info: dict = field(default_factory=dict)

    @property
    def meets_claim(self) -> bool:
        return self.value + self.error >= self.claim

    @property
    def branch(self) -> str:
        return "certificate"

    def to_dict(self) -> dict:
        return {"branch": "certificate", "value": self.value, "error": self.error,
                "claim": self.claim, "meets_claim": self.meets_claim, "alpha": self.alpha,
                "lambda": self.lam, "c": self.c, "info": self.info}


def _product_parts(A: GridFunction, B1: GridFunction, B2: GridFunction):
    if A.split is None:
        raise UsageError("A must live on a product grid")
    d1, d2 = A.dims
    if (d1, d2) != (B1.d, B2.d) or not A.n == B1.n == B2.n:
        raise UsageError("A, B1 and B2 grids do not match")
    Bp = np.multiply.outer(B1.values, B2.values)
    if np.any(A.values > Bp + 1e-12):
        raise UsageError("A must be contained in B1 x B2")
    b1, b2 = B1.integral(), B2.integral()
    if b1 <= 0 or b2 <= 0:
        raise UsageError("B1 and B2 must be nonempty")
    alpha = A.integral() / (b1 * b2)
    return d1, d2, Bp, b1, b2, alpha


def window_cells(L: float, n: int) -> int:
    """Whole-cell window side used for a scale ``L`` (at least one cell)."""
    return max(1, int(np.floor(L * n + 1e-9)))


def dichotomy_step(A: GridFunction, B1: GridFunction, B2: GridFunction, lam: float,
                   eps: float, c: float = 1.0, threshold: float | None = None,
                   c_prime: float = 2.0**-40, budget: int = 4096, seed: int = 0):
    """Either certify the rectangle count or find a density increment.

    With ``L = eps^4 lam`` the box norm ``||f_A nu||_box(L)`` decides the
    branch: at most ``threshold`` (default ``alpha^4 / 8``) gives a
    :class:`CountCertificate` with the measured count; otherwise the
    inverse search returns an :class:`IncrementWitness`.

    Raises
    ------
    HypothesisError
        ``B1`` or ``B2`` is not ``(eps, L)``-uniformly distributed, or the
        inverse search finds no increment.
    """
    d1, d2, Bp, b1, b2, alpha = _product_parts(A, B1, B2)
    if alpha <= 0:
        raise UsageError("A is empty")
    L = eps**4 * lam
    if L < A.h * (1 - 1e-12):
        raise ResolutionError(f"eps^4*lambda={L:g} is below the cell size {A.h:g}")
    defects = [uniformity_defect(B, L).eps_min for B in (B1, B2)]
    if max(defects) > eps:
        raise HypothesisError(f"B1/B2 are not ({eps:g}, {L:g})-uniformly distributed: "
                              f"defects {defects[0]:.3g}, {defects[1]:.3g}")
    nu, _, nu1, nu2 = make_relative_weights(B1, B2)
    Aind = GridFunction(A.values, split=d1, kind="indicator")
    f = balanced_part(Aind, GridFunction(Bp, split=d1, kind="indicator"))
    norm = box_norm(GridFunction(f.values * nu.values, split=d1), L)
    thr = alpha**4 / 8 if threshold is None else float(threshold)
    info = {"box_norm": norm, "threshold": thr, "L": L, "defects": defects, "beta1": b1,
            "beta2": b2}
    if norm <= thr:
        slot = GridFunction(A.values * nu.values, split=d1)
        res = count_rectangle(slot, slot, slot, slot, lam, c, budget=budget, seed=seed)
        return CountCertificate(res.value, res.error, 0.5 * alpha**4, alpha, lam, c, info)
    ell = window_cells(L, A.n)
    w = inverse_search(f, nu1, nu2, ell / A.n, eta=norm, alpha=alpha)
    if w is None:
        raise HypothesisError(f"inverse search found no increment at L={ell / A.n:g} "
                              f"(box norm {norm:.3g})")
    w.info.update(info)
    w.info["c_prime_target"] = c_prime * alpha**32
    w.info["meets_c_prime"] = bool(w.delta >= c_prime * alpha**32)
    return w


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def j_alpha(alpha: float, c_prime: float) -> float:
    """Iteration ceiling ``1 + ceil((1 - alpha) / (c' alpha^32))``."""
    step = c_prime * alpha**32
    if step <= 0:
        return math.inf
    val = (1 - alpha) / step
    return math.inf if not math.isfinite(val) else 1 + math.ceil(val)


@dataclass
class PipelineConfig:
    """Tunable constants of the pipeline (all echoed into the report)."""

    eps: float = 0.5
    threshold_factor: float = 1 / 8
    c_prime: float = 2.0**-40
    eta_reg: float = 0.3
    reg_scales: tuple | None = None
    max_iter: int = 16
    extract: bool = True
    budget: int = 100_000
    seed: int = 0
    count_budget: int = 4096

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["reg_scales"] = None if self.reg_scales is None else list(self.reg_scales)
        return d


@dataclass
class PipelineReport:
    """Iteration log, terminal outcome and optional explicit quadruple."""

    log: list
    outcome: dict | None
    status: str
    alpha_trace: list
    j_alpha: float
    config: dict
    quadruple: dict | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "outcome": self.outcome, "alpha_trace": self.alpha_trace,
                "j_alpha": self.j_alpha, "log": self.log, "config": self.config,
                "quadruple": self.quadruple}


def _default_reg_scales(n: int):
    out, L = [1.0], 0.25
    while L * n >= MIN_RESOLUTION / 4 and abs(L * n - round(L * n)) < 1e-9:
        out.append(L)
        L /= 4
    return out


def _restrict(A, B1, B2, lo1, lo2, side, m1=None, m2=None):
    d1, d2 = B1.d, B2.d
    if side < MIN_RESOLUTION:
        raise ResolutionError(f"rescaled window has {side} cells per axis, below the floor "
                              f"of {MIN_RESOLUTION}")
    s1 = tuple(slice(a, a + side) for a in lo1)
    s2 = tuple(slice(a, a + side) for a in lo2)
    b1 = B1.values[s1] * (1.0 if m1 is None else m1[s1])
    b2 = B2.values[s2] * (1.0 if m2 is None else m2[s2])
    a = A.values[s1 + s2] * np.multiply.outer(b1 > 0, b2 > 0)
    a = np.minimum(a, np.multiply.outer(b1, b2))
    return (GridFunction(a, split=d1, kind="indicator"), GridFunction(b1, kind="indicator"),
            GridFunction(b2, kind="indicator"))


def _relative_density(A, B1, B2) -> float:
    return A.integral() / (B1.integral() * B2.integral())


def run_pipeline(A: GridFunction, scales, c: float = 1.0, config: PipelineConfig | None = None,
                 B1: GridFunction | None = None, B2: GridFunction | None = None) -> PipelineReport:
    """Iterate regularization, dichotomy and rescaling until a certificate.

    At step ``j`` the scale ``lambda_j = scales[j-1]`` is used.  When
    ``B1`` or ``B2`` fails the uniformity hypothesis the pair is
    regularized and the densest non-sparse uniform cube is rescaled to
    the unit cube; a witness branch rescales its window and level sets.

    Raises
    ------
    ResolutionError
        A rescaled window falls below the resolution floor.
    ScalesExhausted
        No certificate before the scales ran out (the partial report is
        attached as ``trace``).
    """
    cfg = config or PipelineConfig()
    d1, d2 = A.dims
    if B1 is None:
        B1 = GridFunction(np.ones((A.n,) * d1), kind="indicator")
    if B2 is None:
        B2 = GridFunction(np.ones((A.n,) * d2), kind="indicator")
    _product_parts(A, B1, B2)
    alpha = _relative_density(A, B1, B2)
    if alpha <= 0:
        raise UsageError("A must have positive density")
    J = j_alpha(alpha, cfg.c_prime)
    log, trace = [], [alpha]
    report = PipelineReport(log, None, "running", trace, J, cfg.to_dict())
    tau = None
    for j, lam in enumerate(scales, 1):
        if j > min(J, cfg.max_iter):
            break
        L = cfg.eps**4 * lam
        n = A.n
        entry = {"step": j, "lambda": lam, "n": n, "alpha": alpha}
        defects = [uniformity_defect(B, L).eps_min for B in (B1, B2)] if L >= A.h else [0, 0]
        if max(defects) > cfg.eps:
            reg_scales = cfg.reg_scales or _default_reg_scales(n)
            part = regularize(B1, B2, reg_scales, cfg.eta_reg)
            beta = B1.integral() * B2.integral()
            t = tau if tau is not None else alpha / 2
            st1, st2 = part._stats
            best, best_rho = None, -1.0
            for cell in part.cells:
                if cell.kind != "U":
                    continue
                side = cell.hi1[0] - cell.lo1[0]
                if side < MIN_RESOLUTION:
                    continue
                massB = cell.delta1 * cell.delta2 * cell.volume
                if massB < beta * t * cell.volume / 3:
                    continue
                s1 = tuple(slice(a, b) for a, b in zip(cell.lo1, cell.hi1))
                s2 = tuple(slice(a, b) for a, b in zip(cell.lo2, cell.hi2))
                rho = float(A.values[s1 + s2].sum()) / (st1.box_sum(cell.lo1, cell.hi1) *
                                                       st2.box_sum(cell.lo2, cell.hi2))
                if rho > best_rho:
                    best, best_rho = cell, rho
            entry["regularize"] = {"rounds": len(part.rounds), "status": part.status,
                                   "energy": part.energy_value, "mass": {k: part.mass(k) for k in "UNR"}}
            if best is None:
                entry["branch"] = "no-dense-uniform-cube"
                log.append(entry)
                raise HypothesisError("regularization produced no dense uniform cube")
            A, B1, B2 = _restrict(A, B1, B2, best.lo1, best.lo2, best.hi1[0] - best.lo1[0])
            entry["regularize"].update({"cell": best.to_dict(), "density": best_rho,
                                        "target": alpha + t / 3,
                                        "meets_target": bool(best_rho >= alpha + t / 3 - 1e-12)})
            alpha = _relative_density(A, B1, B2)
            entry["alpha_after_regularize"] = alpha
        thr = cfg.threshold_factor * alpha**4
        out = dichotomy_step(A, B1, B2, lam, cfg.eps, c, threshold=thr, c_prime=cfg.c_prime,
                             budget=cfg.count_budget, seed=cfg.seed + j)
        entry["branch"] = out.branch
        entry["box_norm"] = out.info["box_norm"]
        entry["threshold"] = thr
        if isinstance(out, CountCertificate):
            entry["certificate"] = out.to_dict()
            log.append(entry)
            report.outcome = out.to_dict()
            report.status = "certificate"
            if cfg.extract and out.value > 0:
                try:
                    report.quadruple = extract_witness(A, lam, c, cfg.budget, cfg.seed,
                                                       count=out.value)
                except BudgetExhausted as exc:
                    report.quadruple = {"found": False, "message": str(exc)}
            return report
        w = out
        entry["witness"] = w.to_dict()
        new = w.density
        if not new > alpha:
            log.append(entry)
            raise HypothesisError("witness did not increase the density")
        tau = new - alpha
        A, B1, B2 = _restrict(A, B1, B2, w.q1[0], w.q2[0], w.q1[1],
                              w.B1_prime.values > 0, w.B2_prime.values > 0)
        alpha = _relative_density(A, B1, B2)
        entry["alpha_next"] = alpha
        trace.append(alpha)
        log.append(entry)
    report.status = "scales-exhausted"
    raise ScalesExhausted("no certificate before the scales ran out", trace=report.to_dict())


# ---------------------------------------------------------------------------
# explicit configurations
# ---------------------------------------------------------------------------


def _unit_vectors(rng, count, d):
    v = rng.normal(size=(count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def extract_witness(A: GridFunction, lam: float, c: float = 1.0, budget: int = 100_000,
                    seed: int = 0, count: float | None = None, chunk: int = 8192) -> dict:
    """Rejection-sample a quadruple ``(x, y), (x', y), (x, y'), (x', y')`` in ``A``.

    ``x`` and ``y`` are uniform, ``x' = x - lam u``, ``y' = y - c lam v``
    with uniform unit vectors; a draw is accepted when all four points lie
    in cells where ``A = 1``.  The acceptance probability per draw equals
    the rectangle count of ``1_A``.

    Raises
    ------
    BudgetExhausted
        No hit within ``budget`` draws.
    """
    d1, d2 = A.dims
    n = A.n
    rng = np.random.default_rng([seed, 5])
    full = A.values >= 1 - 1e-12
    drawn = 0
    while drawn < budget:
        m = min(chunk, budget - drawn)
        x = rng.random((m, d1))
        y = rng.random((m, d2))
        xp = x - lam * _unit_vectors(rng, m, d1)
        yp = y - c * lam * _unit_vectors(rng, m, d2)
        pts = [(x, y), (xp, y), (x, yp), (xp, yp)]
        ok = np.ones(m, dtype=bool)
        cells = []
        for px, py in pts:
            inside = np.all((px >= 0) & (px < 1), axis=1) & np.all((py >= 0) & (py < 1), axis=1)
            ix = np.clip(np.floor(px * n).astype(int), 0, n - 1)
            iy = np.clip(np.floor(py * n).astype(int), 0, n - 1)
            idx = np.concatenate([ix, iy], axis=1)
            ok &= inside & full[tuple(idx.T)]
            cells.append(idx)
        hits = np.flatnonzero(ok)
        if hits.size:
            k = int(hits[0])
            return {"found": True, "draws": drawn + k + 1,
                    "points": [np.concatenate([px[k], py[k]]).tolist() for px, py in pts],
                    "cells": [cl[k].tolist() for cl in cells], "count": count}
        drawn += m
    raise BudgetExhausted(f"no quadruple in {budget} draws (measured count {count})")
