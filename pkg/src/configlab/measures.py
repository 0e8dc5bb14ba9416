"""Sphere quadratures, intersection spheres, Haar rotations and sphere Fourier data."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gamma, j0, jv

from .errors import UsageError

ALGEBRAIC_TOL = 1e-12
GEOMETRIC_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SimplexSpec:
    """Simplex with vertices ``0, v_1, ..., v_k``.

    Parameters
    ----------
    vertices : array_like, shape (k, m)
        Rows are ``v_1..v_k``; ``m >= k`` (usually ``m == k``).
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] > v.shape[1]:
            raise UsageError(f"{v.shape[0]} vertices do not fit in R^{v.shape[1]}")
        object.__setattr__(self, "vertices", v)
        scale = max(1.0, float(np.max(np.abs(v))) ** (2 * self.k))
        if np.linalg.det(self.gram) <= 1e-12 * scale:
            raise UsageError("degenerate simplex: vertices are linearly dependent")

    @property
    def k(self) -> int:
        return self.vertices.shape[0]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.vertices @ self.vertices.T

    @cached_property
    def distances(self) -> np.ndarray:
        """Pairwise distances among ``0, v_1, ..., v_k`` as a (k+1, k+1) matrix."""
        pts = np.vstack([np.zeros(self.vertices.shape[1]), self.vertices])
        return np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)

    @cached_property
    def span_distances(self) -> np.ndarray:
        """``dist(v_j, span{v_i : i != j})`` for each j."""
        return 1.0 / np.sqrt(np.diag(np.linalg.inv(self.gram)))

    @property
    def thickness(self) -> float:
        """``c_Delta``: smallest distance from a vertex to the span of the others."""
        return float(self.span_distances.min())

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def embed(self, d: int) -> np.ndarray:
        """Vertices padded with zeros to ``R^d``; shape (k, d)."""
        m = self.vertices.shape[1]
        if d < m:
            raise UsageError(f"cannot embed a simplex in R^{m} into R^{d}")
        return np.hstack([self.vertices, np.zeros((self.k, d - m))])

    @classmethod
    def regular(cls, k: int, side: float = 1.0) -> "SimplexSpec":
        """Regular simplex with ``k`` nonzero vertices and given side length."""
        # standard simplex e_0..e_k in R^{k+1}, shifted so e_0 sits at the origin
        e = np.eye(k + 1)
        pts = (e[1:] - e[0]) * side / np.sqrt(2.0)
        q, _ = np.linalg.qr(pts.T)
        return cls(pts @ q)

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist()}


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Nodes ``(N, d)`` with nonnegative weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray
    exact: bool = True  # deterministic rule (False for Monte Carlo)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise UsageError("quadrature weights must be nonnegative")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))

    @property
    def size(self) -> int:
        return self.weights.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class SphereDescriptor:
    """Sphere of given radius centred at ``center`` inside ``center + span(frame)``."""

    center: np.ndarray
    radius: float
    frame: np.ndarray  # (d, m) orthonormal columns

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def sphere_dim(self) -> int:
        """Dimension ``m`` of the ambient subspace (the sphere is ``S^{m-1}``)."""
        return self.frame.shape[1]

    def quadrature(self, budget: int = 256, seed: int = 0) -> Quadrature:
        m = self.sphere_dim
        if self.radius == 0.0:
            return Quadrature(self.center[None, :], np.ones(1))
        unit = unit_sphere_quadrature(m, budget, seed)
        return Quadrature(self.center + self.radius * unit.nodes @ self.frame.T,
                          unit.weights, unit.exact)


def _fibonacci_octant(m: int) -> np.ndarray:
    i = np.arange(m) + 0.5
    z = i / m  # z in (0, 1): upper hemisphere, folded later
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def unit_sphere_quadrature(m: int, budget: int = 256, seed: int = 0) -> Quadrature:
    """Equal-weight rule on the unit sphere ``S^{m-1}`` in ``R^m``.

    ``m = 1`` gives the two points ``+-1``; ``m = 2`` equispaced angles;
    ``m = 3`` a Fibonacci lattice symmetrized under all sign flips;
    ``m >= 4`` antithetic pairs of normalized Gaussian vectors.
    """
    if m == 1:
        return Quadrature(np.array([[1.0], [-1.0]]), np.ones(2))
    if m == 2:
        th = 2 * np.pi * np.arange(budget) / budget
        return Quadrature(np.stack([np.cos(th), np.sin(th)], axis=1), np.ones(budget))
    if m == 3:
        base = _fibonacci_octant(max(2, budget // 8))
        flips = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)])
        # the base already covers all azimuths; sign flips make every odd moment vanish
        nodes = (base[None, :, :] * flips[:, None, :]).reshape(-1, 3)
        return Quadrature(nodes, np.ones(len(nodes)))
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((max(1, budget // 2), m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    nodes = np.vstack([g, -g])
    return Quadrature(nodes, np.ones(len(nodes)), exact=False)


def sphere_quadrature(d: int, radius: float, center=None, budget: int = 256,
                      seed: int = 0) -> Quadrature:
    """Normalized surface measure on the sphere of ``radius`` about ``center``."""
    if not 2 <= d <= 6:
        raise UsageError(f"sphere quadrature supports d in 2..6, got {d}")
    if radius <= 0:
        raise UsageError("sphere radius must be positive")
    if budget < 16:
        raise UsageError("quadrature budget must be at least 16")
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    unit = unit_sphere_quadrature(d, budget, seed)
    return Quadrature(center + radius * unit.nodes, unit.weights, unit.exact)


def intersection_sphere(d: int, anchors, simplex: SimplexSpec, j: int) -> SphereDescriptor:
    """Locus of the j-th vertex given anchors ``x_1..x_{j-1}``.

    Points ``y`` with ``|y| = |v_j|`` and ``|y - x_i| = |v_j - v_i|`` for
    ``i < j``.  ``j`` is 1-based.
    """
    k = simplex.k
    if not 1 <= j <= k:
        raise UsageError(f"target index must be in 1..{k}, got {j}")
    if d < j + 1:
        raise UsageError(f"intersection sphere needs d >= j + 1 = {j + 1}, got d={d}")
    X = np.asarray(anchors, dtype=float).reshape(-1, d)
    if X.shape[0] != j - 1:
        raise UsageError(f"expected {j - 1} anchors, got {X.shape[0]}")
    D = simplex.distances
    vj = D[0, j]
    if j == 1:
        return SphereDescriptor(np.zeros(d), float(vj), np.eye(d))
    b = 0.5 * (vj**2 + np.sum(X**2, axis=1) - D[1:j, j] ** 2)
    G = X @ X.T
    if np.linalg.matrix_rank(G, tol=ALGEBRAIC_TOL * max(1.0, np.abs(G).max())) < j - 1:
        raise UsageError("anchors are rank deficient (degenerate simplex)")
    coef = np.linalg.solve(G, b)
    center = X.T @ coef
    r2 = vj**2 - center @ center
    if r2 < -GEOMETRIC_TOL:
        raise UsageError(f"anchors inconsistent with the simplex (radius^2 = {r2:.3g})")
    # orthonormal complement of span(anchors)
    q, _ = np.linalg.qr(np.hstack([X.T, np.eye(d)]))
    frame = q[:, j - 1:d]
    return SphereDescriptor(center, float(np.sqrt(max(r2, 0.0))), frame)


def haar_rotations(d: int, count: int, seed: int) -> np.ndarray:
    """``count`` Haar-distributed matrices in ``SO(d)``; shape (count, d, d)."""
    if not 2 <= d <= 6:
        raise UsageError(f"rotations supported for d in 2..6, got {d}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, d, d))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    neg = np.linalg.det(q) < 0
    q[neg, :, 0] *= -1
    return q


_GL_X, _GL_W = np.polynomial.legendre.leggauss(400)


def sphere_fourier(d: int, xi) -> np.ndarray | float:
    """Fourier transform of the normalized surface measure on ``S^{d-1}``.

    Depends only on ``|xi|``; real-valued, equal to 1 at the origin.
    """
    if not 2 <= d <= 6:
        raise UsageError(f"sphere Fourier transform supports d in 2..6, got {d}")
    r = np.abs(np.asarray(xi, dtype=float))
    if d == 2:
        out = j0(2 * np.pi * r)
    elif d == 3:
        out = np.sinc(2 * r)  # sin(2 pi r) / (2 pi r)
    else:
        out = _latitude_integral(d, r)
    return float(out) if np.ndim(out) == 0 else out


def _latitude_integral(d: int, r: np.ndarray) -> np.ndarray:
    # int_0^pi cos(2 pi r cos t) sin^{d-2} t dt, normalized; split [0, pi] in panels
    panels = max(8, int(np.ceil(np.max(r, initial=0.0) * 4)) + 8)
    edges = np.linspace(0.0, np.pi, panels + 1)
    mid, half = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    x32, w32 = np.polynomial.legendre.leggauss(32)
    t = (mid[:, None] + half[:, None] * x32).ravel()
    w = (half[:, None] * w32).ravel() * np.sin(t) ** (d - 2)
    w /= w.sum()
    flat = np.atleast_1d(r).ravel()
    vals = np.cos(2 * np.pi * flat[:, None] * np.cos(t)[None, :]) @ w
    return vals.reshape(np.shape(r))


def sphere_fourier_bessel(d: int, xi) -> np.ndarray:
    """Closed form ``Gamma(d/2) (pi r)^{-(d-2)/2} J_{(d-2)/2}(2 pi r)``."""
    r = np.abs(np.asarray(xi, dtype=float))
    nu = (d - 2) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gamma(d / 2) * (np.pi * r) ** (-nu) * jv(nu, 2 * np.pi * r)
    return np.where(r == 0, 1.0, out)


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit ``max_{R<=|xi|<=2R} |sigma_hat| ~ C R^slope``."""

    d: int
    slope: float
    constant: float
    radii: np.ndarray
    maxima: np.ndarray


def fit_sphere_decay(d: int, r_min: float = 4.0, r_max: float = 64.0,
                     samples_per_shell: int = 4000) -> DecayFit:
    """Measure dyadic-shell maxima of ``|sigma_hat|`` and fit a log-log line."""
    radii = []
    R = r_min
    while R <= r_max * (1 + 1e-12):
        radii.append(R)
        R *= 2
    radii = np.array(radii)
    maxima = np.array([np.abs(sphere_fourier(d, np.linspace(R, 2 * R, samples_per_shell))).max()
                       for R in radii])
    slope, intercept = np.polyfit(np.log(radii), np.log(maxima), 1)
    # smallest C with maxima <= C R^{-(d-1)/2} on every shell
    C = float(np.max(maxima * radii ** ((d - 1) / 2)))
    return DecayFit(d, float(slope), C, radii, maxima)
