"""Distances between measures: Wasserstein-1, ball discrepancy, and the
radial test-function space used to compare them."""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

ASSIGNMENT_MAX = 4096


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Point measure; equal weights 1/n unless ``weights`` is given."""

    points: np.ndarray
    weights: np.ndarray | None = None
    space: str = "phase"

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        object.__setattr__(self, "points", p)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (p.shape[0],) or np.any(w < 0):
                raise MetricError("weights must be nonnegative, one per point")
            if abs(w.sum() - 1.0) > 1e-12:
                raise MetricError(f"weights sum to {w.sum()!r}, not 1")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def masses(self) -> np.ndarray:
        return self.weights if self.weights is not None else np.full(self.n, 1.0 / self.n)

    @property
    def uniform(self) -> bool:
        return self.weights is None

    @classmethod
    def phase(cls, ens) -> "EmpiricalMeasure":
        return cls(np.hstack([ens.positions, ens.velocities]), space="phase")

    @classmethod
    def spatial(cls, ens) -> "EmpiricalMeasure":
        return cls(ens.positions, space="position")


def _check_dims(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.dim != nu.dim:
        raise MetricError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


# ---------------------------------------------------------------- Wasserstein-1


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 between equal-count, equal-weight measures.

    Sorted coupling on the line, optimal assignment otherwise.
    """
    _check_dims(mu, nu)
    if mu.n != nu.n or not (mu.uniform and nu.uniform):
        raise MetricError("wasserstein1 needs equal counts and equal weights; use wasserstein1_weighted")
    if mu.dim == 1:
        return float(np.mean(np.abs(np.sort(mu.points[:, 0]) - np.sort(nu.points[:, 0]))))
    if mu.n > ASSIGNMENT_MAX:
        return wasserstein1_weighted(mu, nu)
    C = cdist(mu.points, nu.points)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].mean())


def wasserstein1_line(x, wx, y, wy) -> float:
    """W1 on R as the integral of |F - G| over the merged atom grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.concatenate([x, y])
    mass = np.concatenate([np.asarray(wx, dtype=float), -np.asarray(wy, dtype=float)])
    order = np.argsort(grid, kind="stable")
    grid, mass = grid[order], mass[order]
    diff = np.cumsum(mass)[:-1]
    return float(np.sum(np.abs(diff) * np.diff(grid)))


def _pot():
    # keep POT from importing every deep-learning backend it can find
    for key in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot

    return ot


def wasserstein1_weighted(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 for arbitrary weights and counts.

    CDF integral on the line, network-simplex transport LP otherwise.
    """
    _check_dims(mu, nu)
    a, b = mu.masses, nu.masses
    for w in (a, b):
        if abs(w.sum() - 1.0) > 1e-12:
            raise MetricError("weights must sum to 1")
    if mu.dim == 1:
        return wasserstein1_line(mu.points[:, 0], a, nu.points[:, 0], b)
    ot = _pot()
    C = cdist(mu.points, nu.points)
    # renormalize so both sides carry bitwise-equal total mass for the solver
    G, log = ot.emd(a / a.sum(), b / b.sum(), C, numItermax=100_000_000, log=True)
    if log.get("warning"):
        raise MetricError(f"transport solver did not converge: {log['warning']}")
    return float(np.sum(G * C))


def w1_to_uniform_line(points, lo: float = 0.0, hi: float = 1.0) -> float:
    """Exact W1 between an equal-weight point set and the uniform law on [lo, hi]."""
    x = np.sort(np.asarray(points, dtype=float).ravel())
    n = x.size
    L = hi - lo
    # integral over the line of |F_n(t) - U(t)|, piecewise in t
    knots = np.concatenate([[min(lo, x[0])], x, [max(hi, x[-1])]])
    levels = np.arange(n + 1) / n
    total = 0.0
    for k in range(n + 1):
        a, b = knots[k], knots[k + 1]
        if b > a:
            total += _abs_cdf_gap(levels[k], a, b, lo, L)
    return float(total)


def _abs_cdf_gap(c, a, b, lo, L):
    """integral_a^b |c - U(t)| dt with U the uniform CDF on [lo, lo + L]."""
    pts = sorted({a, b, min(max(lo, a), b), min(max(lo + L, a), b)})
    # U is linear between consecutive pts; add the crossing U(t) = c if interior
    tc = lo + c * L
    if a < tc < b:
        pts = sorted(set(pts) | {tc})
    s = 0.0
    for u, w in zip(pts[:-1], pts[1:]):
        gu = c - min(max((u - lo) / L, 0.0), 1.0)
        gw = c - min(max((w - lo) / L, 0.0), 1.0)
        s += 0.5 * (abs(gu) + abs(gw)) * (w - u)
    return s


# ------------------------------------------------------------------ discrepancy


class DiscrepancyBounds(NamedTuple):
    lower: float
    upper: float

    @property
    def exact(self) -> bool:
        return self.lower == self.upper


def _merged_line_masses(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    pts = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    mass = np.concatenate([mu.masses, -nu.masses])
    uniq, inv = np.unique(pts, return_inverse=True)
    net = np.zeros(uniq.size)
    np.add.at(net, inv, mass)
    return uniq, net


def _max_subarray(a: np.ndarray) -> float:
    # max over nonempty contiguous runs: max_j S_j - min_{i<j} S_i
    S = np.concatenate([[0.0], np.cumsum(a)])
    prev_min = np.minimum.accumulate(S[:-1])
    return float(np.max(S[1:] - prev_min))


def discrepancy_line(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact sup over closed intervals of |mu(I) - nu(I)| on the line."""
    _, net = _merged_line_masses(mu, nu)
    return max(0.0, _max_subarray(net), _max_subarray(-net))


def discrepancy_to_density_line(points, cdf, weights=None) -> float:
    """Exact sup over closed intervals of |mu(I) - rho(I)| for a continuous CDF."""
    x = np.asarray(points, dtype=float).ravel()
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, dtype=float)
    a, inv = np.unique(x, return_inverse=True)
    m = np.zeros(a.size)
    np.add.at(m, inv, w)
    C = np.cumsum(m)  # mass up to and including a_j
    Cm = C - m  # mass strictly below a_j
    F = np.asarray(cdf(a), dtype=float)
    # atom-heavy intervals [a_i, a_j]: (C_j - F_j) + (F_i - Cm_i), i <= j
    heavy_mu = np.max((C - F) + np.maximum.accumulate(F - Cm))
    # density-heavy open gaps (a_i, a_j) with sentinels at -inf (F=0) and +inf (F=1)
    Fg = np.concatenate([F, [1.0]])
    Cmg = np.concatenate([Cm, [1.0]])
    left = np.concatenate([[0.0], C - F])  # C_i - F_i for i = 0 (sentinel) .. m
    heavy_rho = np.max((Fg - Cmg) + np.maximum.accumulate(left)[: Fg.size])
    return float(max(0.0, heavy_mu, heavy_rho))


def _center_sup(centers, pts, mass, chunk=256):
    """sup_r |signed mass of B(c, r)| for each center, exact over all radii."""
    out = np.empty(len(centers))
    for s in range(0, len(centers), chunk):
        D = cdist(centers[s : s + chunk], pts)
        order = np.argsort(D, axis=1, kind="stable")
        Ds = np.take_along_axis(D, order, axis=1)
        cum = np.cumsum(mass[order], axis=1)
        last = np.diff(Ds, axis=1, append=np.inf) != 0  # end of each equal-distance run
        out[s : s + chunk] = np.max(np.where(last, np.abs(cum), 0.0), axis=1)
    return out


def _grid_upper(centers, pts_mu, m_mu, pts_nu, m_nu, slack):
    """Upper bound for balls centred within ``slack`` of some grid centre."""
    best = 0.0
    for c in centers:
        dmu = np.linalg.norm(pts_mu - c, axis=1)
        dnu = np.linalg.norm(pts_nu - c, axis=1)
        om, on = np.argsort(dmu), np.argsort(dnu)
        dmu, dnu = dmu[om], dnu[on]
        Fmu, Fnu = np.cumsum(m_mu[om]), np.cumsum(m_nu[on])
        for da, Fa, db, Fb in ((dmu, Fmu, dnu, Fnu), (dnu, Fnu, dmu, Fmu)):
            s = np.maximum(da, slack)
            big = Fa[np.searchsorted(da, s, side="right") - 1]
            k = np.searchsorted(db, s - 2.0 * slack, side="right")
            small = np.where(k > 0, Fb[np.maximum(k - 1, 0)], 0.0)
            best = max(best, float(np.max(big - small)))
    return best


def discrepancy(mu: EmpiricalMeasure, nu: EmpiricalMeasure, levels=(4, 8, 16), max_centers: int = 4096) -> DiscrepancyBounds:
    """Ball discrepancy sup_{x, r>0} |mu(B_r(x)) - nu(B_r(x))|.

    Exact on the line. In higher dimension the lower bound is the exact sup
    over balls centred at atoms and grid nodes; the upper bound covers balls
    centred in the atoms' bounding box padded by half its diameter, and is
    the smallest over the grid levels (nested, so refinement only tightens).
    """
    _check_dims(mu, nu)
    if mu.dim == 1:
        v = discrepancy_line(mu, nu)
        return DiscrepancyBounds(v, v)
    pts = np.vstack([mu.points, nu.points])
    mass = np.concatenate([mu.masses, -nu.masses])
    lower = float(np.max(_center_sup(pts, pts, mass)))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.5 * float(np.linalg.norm(hi - lo))
    lo, hi = lo - pad, hi + pad
    upper = 1.0
    for m in levels:
        if (m + 1) ** mu.dim > max_centers:
            break
        axes = [np.linspace(a, b, m + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, mu.dim)
        slack = 0.5 * float(np.linalg.norm((hi - lo) / m))
        lower = max(lower, float(np.max(_center_sup(grid, pts, mass))))
        upper = min(upper, _grid_upper(grid, mu.points, mu.masses, nu.points, nu.masses, slack))
    return DiscrepancyBounds(lower, max(upper, lower))


# -------------------------------------------------------- radial test functions


@dataclass(frozen=True)
class TestFunction:
    """Continuous piecewise-linear phi on [0, inf), constant after the last knot."""

    knots: np.ndarray
    values: np.ndarray

    __test__ = False  # not a pytest class

    def __post_init__(self):
        r = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 1:
            raise MetricError("knots and values must be 1-D arrays of equal length")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise MetricError("knots must start at 0 and strictly increase")
        object.__setattr__(self, "knots", r)
        object.__setattr__(self, "values", v)

    def __call__(self, r):
        return np.interp(r, self.knots, self.values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def derivative(self, r):
        """phi' (right derivative at knots); zero past the last knot."""
        r = np.asarray(r, dtype=float)
        if self.knots.size == 1:
            return np.zeros_like(r)
        seg = np.searchsorted(self.knots, r, side="right") - 1
        inside = (seg >= 0) & (seg < self.knots.size - 1)
        return np.where(inside, self.slopes[np.clip(seg, 0, self.knots.size - 2)], 0.0)

    @classmethod
    def plateau(cls, r: float, eps: float) -> "TestFunction":
        """1 on [0, r], linear down to 0 at r + eps."""
        if r == 0:
            return cls(np.array([0.0, eps]), np.array([1.0, 0.0]))
        return cls(np.array([0.0, r, r + eps]), np.array([1.0, 1.0, 0.0]))


def norm_X(phi: TestFunction) -> float:
    """Total variation: integral of |phi'| over [0, inf)."""
    return float(np.sum(np.abs(np.diff(phi.values))))


def random_test_function(rng: np.random.Generator, max_knots: int = 8, r_max: float = 5.0) -> TestFunction:
    n = int(rng.integers(2, max_knots + 1))
    r = np.concatenate([[0.0], np.sort(rng.uniform(0.0, r_max, n - 1))])
    r = np.unique(r)
    return TestFunction(r, rng.uniform(-1.0, 1.0, r.size))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


class Mollifier:
    """Smooth bump supported in (0, 1) with unit mass; default exp(-1/(s(1-s)))."""

    def __init__(self, profile=None, n_cells: int = 2048):
        self.profile = profile or _bump
        Z = integrate.quad(self.profile, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        self.Z = 1.0 / Z
        # cumulative moments A(u) = int_0^u eta, B(u) = int_0^u s eta(s) ds on a fine grid
        u = np.linspace(0.0, 1.0, n_cells + 1)
        a, b = u[:-1], u[1:]
        s = 0.5 * (b - a)[:, None] * _GL_X[None, :] + 0.5 * (a + b)[:, None]
        e = self(s)
        wA = np.sum(e * _GL_W, axis=1) * 0.5 * (b - a)
        wB = np.sum(e * s * _GL_W, axis=1) * 0.5 * (b - a)
        self._u = u
        self._A = np.concatenate([[0.0], np.cumsum(wA)])
        self._B = np.concatenate([[0.0], np.cumsum(wB)])

    def __call__(self, s):
        return self.Z * self.profile(s)

    @functools.cached_property
    def sup(self) -> float:
        if self.profile is _bump:
            return self.Z * math.exp(-4.0)
        grid = np.linspace(0.0, 1.0, 100_001)
        return float(np.max(self(grid)))

    def _moments(self, u):
        """(A(u), B(u)) via cubic Hermite interpolation of the tabulated moments."""
        u = np.clip(u, 0.0, 1.0)
        k = np.clip(np.searchsorted(self._u, u, side="right") - 1, 0, self._u.size - 2)
        h = self._u[k + 1] - self._u[k]
        t = (u - self._u[k]) / h
        h00 = 2 * t**3 - 3 * t**2 + 1
        h10 = t**3 - 2 * t**2 + t
        h01 = -2 * t**3 + 3 * t**2
        h11 = t**3 - t**2
        e0, e1 = self(self._u[k]), self(self._u[k + 1])
        A = h00 * self._A[k] + h10 * h * e0 + h01 * self._A[k + 1] + h11 * h * e1
        B = h00 * self._B[k] + h10 * h * e0 * self._u[k] + h01 * self._B[k + 1] + h11 * h * e1 * self._u[k + 1]
        return A, B


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (si * (1.0 - si)))
    return out if out.ndim else float(out)


class Regularization:
    """phi^+, phi^-, phi_eps and psi_eps for a piecewise-linear test function."""

    def __init__(self, phi: TestFunction, eps: float, eta: Mollifier | None = None):
        if not eps > 0:
            raise MetricError("eps must be positive")
        self.phi = phi
        self.eps = float(eps)
        self.eta = eta or default_mollifier()
        self._tilde = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(phi.values)))])
        self._phi0 = float(phi.values[0])
        # phi^+ and phi^- are piecewise linear on the knots of phi, extended by
        # constants below 0 and past the last knot
        self._plus = 0.5 * (self._tilde + phi.values)
        self._minus = 0.5 * (self._tilde - phi.values)

    def phi_tilde(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= 0, np.interp(r, self.phi.knots, self._tilde), 0.0)

    def phi_plus(self, r):
        return np.interp(r, self.phi.knots, self._plus, left=0.5 * self._phi0)

    def phi_minus(self, r):
        return np.interp(r, self.phi.knots, self._minus, left=-0.5 * self._phi0)

    def dphi_plus(self, r):
        s = self.phi.slopes if self.phi.knots.size > 1 else np.zeros(0)
        return _segment_values(self.phi.knots, 0.5 * (np.abs(s) + s), r)

    def dphi_minus(self, r):
        s = self.phi.slopes if self.phi.knots.size > 1 else np.zeros(0)
        return _segment_values(self.phi.knots, 0.5 * (np.abs(s) - s), r)

    @functools.cached_property
    def phi_eps(self) -> TestFunction:
        """phi^+(r + eps) - phi^-(r - eps), itself piecewise linear."""
        e = self.eps
        cand = np.concatenate([[0.0], self.phi.knots - e, self.phi.knots + e])
        knots = np.unique(cand[cand >= 0.0])
        vals = self.phi_plus(knots + e) - self.phi_minus(knots - e)
        return TestFunction(knots, vals)

    def _smoothed(self, r, fplus, fminus, slope_plus, slope_minus):
        """int_0^1 eta(u) [fplus(r + eps u) - fminus(r - eps u)] du for piecewise-linear f."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        e = self.eps
        kinks = np.concatenate([[0.0], self.phi.knots])
        total = np.zeros(r.shape)
        for sign, f, slope in ((1.0, fplus, slope_plus), (-1.0, fminus, slope_minus)):
            # breakpoints in u where r + sign*eps*u crosses a kink
            u = sign * (kinks[None, :] - r[:, None]) / e
            u = np.sort(np.clip(np.concatenate([u, np.zeros((r.size, 1)), np.ones((r.size, 1))], axis=1), 0.0, 1.0), axis=1)
            ua, ub = u[:, :-1], u[:, 1:]
            A_a, B_a = self.eta._moments(ua)
            A_b, B_b = self.eta._moments(ub)
            dA, dB = A_b - A_a, B_b - B_a
            um = 0.5 * (ua + ub)
            arg = r[:, None] + sign * e * um
            # f is linear in u on each piece: expand around the midpoint
            beta = sign * e * slope(arg)
            seg = f(arg) * dA + beta * (dB - um * dA)
            total += sign * np.sum(np.where(ub > ua, seg, 0.0), axis=1)
        return total

    def psi(self, r):
        """psi_eps(r) through exact moments of the mollifier."""
        return self._smoothed(r, self.phi_plus, self.phi_minus, self.dphi_plus, self.dphi_minus)

    def dpsi(self, r):
        """psi_eps'(r): the mollifier applied to (phi^+)'(r + .) - (phi^-)'(r - .)."""
        zero = lambda s: np.zeros_like(s)  # noqa: E731
        return self._smoothed(r, self.dphi_plus, self.dphi_minus, zero, zero)

    def psi_quad(self, r: float) -> float:
        """psi_eps(r) by adaptive quadrature, independent of the moment tables."""
        e = self.eps
        pts = [(k - r) / e for k in np.concatenate([[0.0], self.phi.knots])]
        pts += [(r - k) / e for k in np.concatenate([[0.0], self.phi.knots])]
        pts = sorted({p for p in pts if 0.0 < p < 1.0})

        def g(u):
            return self.eta(u) * (self.phi_plus(r + e * u) - self.phi_minus(r - e * u))

        return integrate.quad(g, 0.0, 1.0, points=pts or None, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def _segment_values(knots, seg_vals, r):
    r = np.asarray(r, dtype=float)
    if seg_vals.size == 0:
        return np.zeros_like(r)
    seg = np.searchsorted(knots, r, side="right") - 1
    inside = (seg >= 0) & (seg < knots.size - 1)
    return np.where(inside, seg_vals[np.clip(seg, 0, seg_vals.size - 1)], 0.0)


@functools.lru_cache(maxsize=1)
def default_mollifier() -> Mollifier:
    return Mollifier()


def regularize(phi: TestFunction, eps: float, eta: Mollifier | None = None):
    """Return (phi_plus, phi_minus, phi_eps, psi_eps) as callables on the real line."""
    reg = Regularization(phi, eps, eta)
    return reg.phi_plus, reg.phi_minus, reg.phi_eps, reg.psi
