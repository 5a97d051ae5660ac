"""Mean-field side: bounded initial densities, the interaction field W[rho, f],
large-N reference runs standing in for f_t, and the intermediate dynamics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import _kernels
from .dynamics import IntegratorConfig, Trajectory, integrate, n_steps_for
from .ensemble import Ensemble, _distances
from .kernel import KernelSpec, eval_K
from .metrics import EmpiricalMeasure, wasserstein1_line, wasserstein1_weighted


class SamplerError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


# ------------------------------------------------------------- 1-D factors


@dataclass(frozen=True)
class UniformFactor:
    lo: float
    hi: float

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, u):
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    @property
    def sup(self) -> float:
        return 1.0 / (self.hi - self.lo)

    def to_dict(self):
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TruncNormFactor:
    mean: float
    sigma: float
    lo: float
    hi: float

    @property
    def _law(self):
        return stats.truncnorm((self.lo - self.mean) / self.sigma, (self.hi - self.mean) / self.sigma,
                               loc=self.mean, scale=self.sigma)

    def pdf(self, t):
        return self._law.pdf(t)

    def cdf(self, t):
        return self._law.cdf(t)

    def ppf(self, u):
        return self._law.ppf(u)

    @property
    def sup(self) -> float:
        return float(self._law.pdf(min(max(self.mean, self.lo), self.hi)))

    def to_dict(self):
        return {"type": "truncnorm", "mean": self.mean, "sigma": self.sigma, "lo": self.lo, "hi": self.hi}


def _factor_from_dict(d):
    if d["type"] == "uniform":
        return UniformFactor(float(d["lo"]), float(d["hi"]))
    if d["type"] == "truncnorm":
        return TruncNormFactor(float(d["mean"]), float(d["sigma"]), float(d["lo"]), float(d["hi"]))
    raise ConfigurationError(f"unknown factor type {d['type']!r}")


# ---------------------------------------------------------------- densities


@dataclass(frozen=True)
class ProductDensity:
    """f0(x, v) as a product of 2d one-dimensional factors (x_1..x_d, v_1..v_d)."""

    dim: int
    factors: tuple

    def __post_init__(self):
        if len(self.factors) != 2 * self.dim:
            raise ConfigurationError(f"need {2 * self.dim} factors, got {len(self.factors)}")

    def pdf(self, z):
        z = np.atleast_2d(z)
        out = np.ones(z.shape[0])
        for k, f in enumerate(self.factors):
            out = out * f.pdf(z[:, k])
        return out

    @property
    def sup_norm(self) -> float:
        return float(np.prod([f.sup for f in self.factors]))

    @property
    def box(self):
        return np.array([f.lo for f in self.factors]), np.array([f.hi for f in self.factors])

    def ppf(self, u):
        return np.column_stack([f.ppf(u[:, k]) for k, f in enumerate(self.factors)])

    def spatial_cdf(self, t):
        if self.dim != 1:
            raise ConfigurationError("spatial CDF only exists on the line")
        return self.factors[0].cdf(t)

    def to_dict(self):
        return {"type": "product", "dim": self.dim, "factors": [f.to_dict() for f in self.factors]}


@dataclass(frozen=True)
class MixtureDensity:
    dim: int
    components: tuple
    weights: tuple

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12 or any(w < 0 for w in self.weights):
            raise ConfigurationError("mixture weights must be nonnegative and sum to 1")

    def pdf(self, z):
        return sum(w * c.pdf(z) for w, c in zip(self.weights, self.components))

    @property
    def sup_norm(self) -> float:
        boxes = [c.box for c in self.components]
        disjoint = all(
            np.any(boxes[a][1] < boxes[b][0]) or np.any(boxes[b][1] < boxes[a][0])
            for a in range(len(boxes)) for b in range(a + 1, len(boxes))
        )
        parts = [w * c.sup_norm for w, c in zip(self.weights, self.components)]
        return float(max(parts) if disjoint else sum(parts))

    @property
    def box(self):
        los = np.array([c.box[0] for c in self.components])
        his = np.array([c.box[1] for c in self.components])
        return los.min(axis=0), his.max(axis=0)

    def ppf(self, u):
        # the first coordinate picks the component, then is rescaled inside it
        edges = np.concatenate([[0.0], np.cumsum(self.weights)])
        comp = np.clip(np.searchsorted(edges, u[:, 0], side="right") - 1, 0, len(self.weights) - 1)
        out = np.empty_like(u)
        for k, c in enumerate(self.components):
            sel = comp == k
            if not np.any(sel):
                continue
            uk = u[sel].copy()
            uk[:, 0] = np.clip((uk[:, 0] - edges[k]) / self.weights[k], 0.0, 1.0)
            out[sel] = c.ppf(uk)
        return out

    def spatial_cdf(self, t):
        return sum(w * c.spatial_cdf(t) for w, c in zip(self.weights, self.components))

    def to_dict(self):
        return {"type": "mixture", "dim": self.dim, "weights": list(self.weights),
                "components": [c.to_dict() for c in self.components]}


def _support_radii(density):
    comps = density.components if isinstance(density, MixtureDensity) else (density,)
    d = density.dim
    rx = rv = 0.0
    for c in comps:
        lo, hi = c.box
        far = np.maximum(np.abs(lo), np.abs(hi))
        rx = max(rx, float(np.linalg.norm(far[:d])))
        rv = max(rv, float(np.linalg.norm(far[d:])))
    return rx, rv


class DensitySpec:
    """Bounded, compactly supported initial density with its sampler."""

    def __init__(self, law):
        self.law = law
        self.dim = law.dim
        self.R_x, self.R_v = _support_radii(law)
        self._ball_cache = None

    def __call__(self, x, v):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.dim == 1 and x.shape[0] == 1 and x.shape[1] > 1:
            x, v = x.T, v.T
        return self.law.pdf(np.hstack([x, v]))

    @property
    def sup_norm(self) -> float:
        return self.law.sup_norm

    @property
    def box(self):
        return self.law.box

    def to_dict(self) -> dict:
        return self.law.to_dict()

    @classmethod
    def from_dict(cls, d: dict) -> "DensitySpec":
        kind = d.get("type")
        if kind == "uniform_box":
            return uniform_box(int(d.get("dim", 1)), float(d.get("half_x", 1.0)), float(d.get("half_v", 1.0)))
        if kind == "truncated_gaussian":
            return truncated_gaussian(int(d.get("dim", 1)), float(d.get("sigma_x", 0.5)),
                                      float(d.get("sigma_v", 0.5)), float(d.get("half_x", 1.0)),
                                      float(d.get("half_v", 1.0)))
        if kind == "two_bump":
            return two_bump(int(d.get("dim", 1)), float(d.get("separation", 1.0)), float(d.get("sigma", 0.25)))
        return cls(_law_from_dict(d))

    def spatial_cdf(self, t):
        return self.law.spatial_cdf(t)

    def spatial_ball_mass(self, center, radius):
        """Spatial mass of the closed ball B(center, radius).

        Exact on the line; in higher dimension a fixed scrambled-Sobol
        estimate with 2^15 points.
        """
        center = np.asarray(center, dtype=float).reshape(-1)
        radius = np.asarray(radius, dtype=float)
        if self.dim == 1:
            return self.spatial_cdf(center[0] + radius) - self.spatial_cdf(center[0] - radius)
        if self._ball_cache is None:
            u = stats.qmc.Sobol(2 * self.dim, scramble=True, seed=12345).random_base2(15)
            self._ball_cache = self.law.ppf(u)[:, : self.dim]
        d = np.sort(_distances(self._ball_cache, center))
        return np.searchsorted(d, radius, side="right") / d.size

    def sample(self, N: int, strategy: str = "stratified", seed: int = 0) -> Ensemble:
        return sample(self, N, strategy, seed)


def _law_from_dict(d):
    if d["type"] == "product":
        return ProductDensity(int(d["dim"]), tuple(_factor_from_dict(f) for f in d["factors"]))
    if d["type"] == "mixture":
        return MixtureDensity(int(d["dim"]), tuple(_law_from_dict(c) for c in d["components"]),
                              tuple(float(w) for w in d["weights"]))
    raise ConfigurationError(f"unknown density type {d['type']!r}")


def uniform_box(dim: int = 1, half_x: float = 1.0, half_v: float = 1.0) -> DensitySpec:
    f = [UniformFactor(-half_x, half_x)] * dim + [UniformFactor(-half_v, half_v)] * dim
    return DensitySpec(ProductDensity(dim, tuple(f)))


def truncated_gaussian(dim: int = 1, sigma_x: float = 0.5, sigma_v: float = 0.5,
                       half_x: float = 1.0, half_v: float = 1.0) -> DensitySpec:
    f = [TruncNormFactor(0.0, sigma_x, -half_x, half_x)] * dim + [TruncNormFactor(0.0, sigma_v, -half_v, half_v)] * dim
    return DensitySpec(ProductDensity(dim, tuple(f)))


def two_bump(dim: int = 1, separation: float = 1.0, sigma: float = 0.25) -> DensitySpec:
    """Two truncated Gaussian flocks centred at +-separation/2, moving towards each other."""
    c = separation / 2
    h = 2.5 * sigma
    comps = []
    for s in (-1.0, 1.0):
        fx = [TruncNormFactor(s * c, sigma, s * c - h, s * c + h)] + [TruncNormFactor(0.0, sigma, -h, h)] * (dim - 1)
        fv = [TruncNormFactor(-s * 0.5, sigma, -s * 0.5 - h, -s * 0.5 + h)] + [TruncNormFactor(0.0, sigma, -h, h)] * (dim - 1)
        comps.append(ProductDensity(dim, tuple(fx + fv)))
    return DensitySpec(MixtureDensity(dim, tuple(comps), (0.5, 0.5)))


# ---------------------------------------------------------------- sampling


def _balanced_factors(N: int, k: int) -> list[int]:
    primes, n, p = [], N, 2
    while p * p <= n:
        while n % p == 0:
            primes.append(p)
            n //= p
        p += 1
    if n > 1:
        primes.append(n)
    axes = [1] * k
    for q in sorted(primes, reverse=True):
        axes[int(np.argmin(axes))] *= q
    return axes


def stratified_unit(N: int, D: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered point per cell of an N-cell grid on [0, 1]^D, in random order."""
    m = _balanced_factors(N, D)
    idx = np.stack(np.unravel_index(np.arange(N), m), axis=1)
    u = (idx + rng.random((N, D))) / np.array(m, dtype=float)
    return u[rng.permutation(N)]


def sample(f0: DensitySpec, N: int, strategy: str = "stratified", seed: int = 0) -> Ensemble:
    """N agents drawn from f0; identical output for identical (strategy, seed)."""
    if N < 1:
        raise SamplerError("N must be at least 1")
    rng = np.random.default_rng(seed)
    D = 2 * f0.dim
    if strategy == "iid":
        u = rng.random((N, D))
    elif strategy == "stratified":
        u = stratified_unit(N, D, rng)
    else:
        raise SamplerError(f"unknown sampling strategy {strategy!r}")
    z = f0.law.ppf(u)
    if not np.all(np.isfinite(z)):
        raise SamplerError("inverse transform produced non-finite samples; try strategy='iid'")
    return Ensemble(z[:, : f0.dim], z[:, f0.dim :])


# ------------------------------------------------------------ interaction field


def _ball_masses(spatial, x, radii):
    """M[rho](x, r) for every r in ``radii``."""
    if isinstance(spatial, DensitySpec):
        return np.clip(spatial.spatial_ball_mass(x, radii), 0.0, 1.0)
    d = _distances(spatial.points, x)
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(spatial.masses[order])
    k = np.searchsorted(d[order], radii, side="right")
    if spatial.uniform:
        return k / spatial.n
    return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)


def field_W(spatial, phase: EmpiricalMeasure, x, v, kernel: KernelSpec) -> np.ndarray:
    """W[rho, f](x, v) = (1/n) sum_k K(M[rho](x, |x - y_k|)) (w_k - v) for an empirical f.

    ``spatial`` is an empirical position measure or a DensitySpec.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    d = x.size
    if phase.dim != 2 * d or v.size != d:
        raise ValueError("phase measure, x and v dimensions disagree")
    y, w = phase.points[:, :d], phase.points[:, d:]
    r = _distances(y, x)
    weights = eval_K(kernel, _ball_masses(spatial, x, r))
    if phase.uniform:
        return _kernels.weighted_alignment(np.ascontiguousarray(weights), np.ascontiguousarray(w), v)
    return np.sum((phase.masses * weights)[:, None] * (w - v), axis=0)


# --------------------------------------------------------------- reference runs


@dataclass
class ReferenceSolution:
    trajectory: Trajectory
    N_ref: int
    provenance: dict = field(default_factory=dict)
    resolution: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.trajectory.h


def reference_solution(f0: DensitySpec, N_ref: int, kernel: KernelSpec, T: float,
                       cfg: IntegratorConfig | None = None, seed: int = 0,
                       strategy: str = "stratified", max_N_ref: int = 8192) -> ReferenceSolution:
    """Large-N stratified run used as a stand-in for the mean-field solution f_t."""
    if N_ref > max_N_ref:
        raise ConfigurationError(f"N_ref={N_ref} exceeds the budget of {max_N_ref}")
    cfg = cfg or IntegratorConfig()
    t0 = time.perf_counter()
    ens0 = sample(f0, N_ref, strategy, seed)
    traj = integrate(ens0, kernel, T, cfg)
    # resolution diagnostic against an independent sample twice as large
    check = sample(f0, 2 * N_ref, strategy, seed + 7919)
    res = {"w1_spatial": None, "w1_phase": None}
    if f0.dim == 1:
        res["w1_spatial"] = wasserstein1_line(ens0.positions[:, 0], np.full(N_ref, 1 / N_ref),
                                              check.positions[:, 0], np.full(2 * N_ref, 1 / (2 * N_ref)))
    if N_ref <= 1024:
        res["w1_phase"] = wasserstein1_weighted(EmpiricalMeasure.phase(ens0), EmpiricalMeasure.phase(check))
    prov = {"strategy": strategy, "seed": seed, "h": traj.h, "N_ref": N_ref, "T": T,
            "wall_time": time.perf_counter() - t0}
    return ReferenceSolution(traj, N_ref, prov, res)


# ------------------------------------------------------- intermediate dynamics


class DeltaSeries(NamedTuple):
    times: np.ndarray
    delta: np.ndarray


class IntermediateResult(NamedTuple):
    nu: Trajectory
    plain: Trajectory
    delta: DeltaSeries


def _reference_weights(Ys, X, kv_kernel: KernelSpec, n_ref: int):
    """K(M[S f](X_i, |X_i - X_j|)) with S f the sorted 1-D reference positions."""
    x = X[:, 0]
    r = np.abs(x[None, :] - x[:, None])
    lo = np.searchsorted(Ys, (x[:, None] - r).ravel(), side="left")
    hi = np.searchsorted(Ys, (x[:, None] + r).ravel(), side="right")
    m = ((hi - lo) / n_ref).reshape(r.shape)
    return eval_K(kv_kernel, m)


def _reference_weights_nd(Y, X, kernel: KernelSpec):
    N = X.shape[0]
    out = np.empty((N, N))
    for i in range(N):
        d = np.sort(_distances(Y, X[i]))
        r = _distances(X, X[i])
        out[i] = eval_K(kernel, np.searchsorted(d, r, side="right") / Y.shape[0])
    return out


def intermediate_dynamics(ref: ReferenceSolution, ens0: Ensemble, kernel: KernelSpec, T: float,
                          cfg: IntegratorConfig | None = None, min_ratio: int = 16) -> IntermediateResult:
    """Agents whose ranks come from the reference's spatial cloud but whose
    velocity average uses their own empirical measure, run alongside the
    plain N-agent system from the same initial data."""
    cfg = cfg or IntegratorConfig(h=ref.h)
    h = cfg.step_for(kernel)
    N, d = ens0.N, ens0.dim
    if N * min_ratio > ref.N_ref:
        raise ConfigurationError(f"N={N} needs N_ref >= {min_ratio * N}, have {ref.N_ref}")
    ratio = h / ref.h
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigurationError(f"step {h} is not a multiple of the reference step {ref.h}")
    ratio = int(round(ratio))
    n = n_steps_for(T, h)
    if n * ratio > len(ref.trajectory) - 1:
        raise ConfigurationError("reference trajectory is shorter than the requested horizon")
    if cfg.scheme != "rk4":
        raise ConfigurationError("intermediate dynamics uses RK4 only")

    plain = integrate(ens0, kernel, T, IntegratorConfig(h=h, scheme=cfg.scheme))
    X = np.empty((n + 1, N, d))
    V = np.empty((n + 1, N, d))
    X[0], V[0] = ens0.positions, ens0.velocities
    n_ref = ref.N_ref

    for k in range(n):
        Y = ref.trajectory.positions[k * ratio]
        if d == 1:
            Ys = np.sort(Y[:, 0])

            def accel(x, v):
                return _kernels.alignment_rows(_reference_weights(Ys, x, kernel, n_ref), v)
        else:
            def accel(x, v):
                return _kernels.alignment_rows(_reference_weights_nd(Y, x, kernel), v)

        x, v = X[k], V[k]
        k1x, k1v = v, accel(x, v)
        x2, v2 = x + 0.5 * h * k1x, v + 0.5 * h * k1v
        k2x, k2v = v2, accel(x2, v2)
        x3, v3 = x + 0.5 * h * k2x, v + 0.5 * h * k2v
        k3x, k3v = v3, accel(x3, v3)
        x4, v4 = x + h * k3x, v + h * k3v
        k4x, k4v = v4, accel(x4, v4)
        X[k + 1] = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        V[k + 1] = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)

    times = np.arange(n + 1) * h
    nu = Trajectory(times, X, V, np.zeros(n + 1, dtype=np.int8), [], h)
    gap = np.linalg.norm(X - plain.positions, axis=2) + np.linalg.norm(V - plain.velocities, axis=2)
    return IntermediateResult(nu, plain, DeltaSeries(times, gap.max(axis=1)))


def support_radius(f0: DensitySpec, t: float) -> tuple[float, float]:
    """Radii of the ball pair that must contain supp f_t."""
    return f0.R_x + t * f0.R_v, f0.R_v


def agent_block_log_det(ens0: Ensemble, agent: int, kernel: KernelSpec, t: float,
                        cfg: IntegratorConfig | None = None, fd_step: float = 1e-6) -> float:
    """log det of d(X_i(t), V_i(t)) / d(X_i(0), V_i(0)) by central differences,
    with every other agent re-flowed; tends to -d gamma t for large N."""
    N, d = ens0.N, ens0.dim
    z0 = ens0.state()
    cols = [agent * d + k for k in range(d)] + [N * d + agent * d + k for k in range(d)]
    J = np.empty((2 * d, 2 * d))
    for c, idx in enumerate(cols):
        out = []
        for s in (fd_step, -fd_step):
            z = z0.copy()
            z[idx] += s
            traj = integrate(Ensemble.from_state(z, N, d), kernel, t, cfg)
            out.append(np.concatenate([traj.positions[-1, agent], traj.velocities[-1, agent]]))
        J[:, c] = (out[0] - out[1]) / (2 * fd_step)
    sign, logdet = np.linalg.slogdet(J)
    return float(logdet) if sign > 0 else float("nan")
