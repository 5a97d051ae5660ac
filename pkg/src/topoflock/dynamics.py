"""N-agent topological Cucker-Smale dynamics."""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .ensemble import BACKWARD, FORWARD, ConfigKind, Ensemble
from .kernel import KernelSpec, gamma_N, rank_weights

log = logging.getLogger(__name__)

# per-step configuration codes stored in Trajectory.classes
REGULAR, ISO_RANK_REGULAR, SINGULAR = 0, 1, 2
_KIND_OF_CODE = {
    REGULAR: ConfigKind.REGULAR,
    ISO_RANK_REGULAR: ConfigKind.ISO_RANK_REGULAR,
    SINGULAR: ConfigKind.SINGULAR,
}


class IntegrationError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class SingularEncounterWarning(RuntimeWarning):
    """Exact rank ties not separated by radial velocity were broken by agent index."""


@functools.lru_cache(maxsize=64)
def _kvals(kernel: KernelSpec, N: int) -> np.ndarray:
    w = rank_weights(kernel, N)
    w.setflags(write=False)
    return w


@functools.lru_cache(maxsize=16)
def _hashes(N: int) -> np.ndarray:
    return _kernels.agent_hashes(N)


class FieldEval(NamedTuple):
    dv: np.ndarray
    wsum: np.ndarray
    fingerprint: np.ndarray
    n_tied: int
    n_unresolved: int


def velocity_field(x: np.ndarray, v: np.ndarray, kernel: KernelSpec, time_direction: int = FORWARD) -> FieldEval:
    N, d = x.shape
    kv = _kvals(kernel, N)
    direction = 1.0 if time_direction >= 0 else -1.0
    x = np.ascontiguousarray(x, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    if d == 1:
        out = _kernels.forces_1d(np.ascontiguousarray(x[:, 0]), v, kv, direction, _hashes(N))
    else:
        out = _kernels.forces_nd(x, v, kv, direction, _hashes(N))
    return FieldEval(*out)


def rhs(ens: Ensemble, kernel: KernelSpec, time_direction: int = FORWARD):
    """(dX, dV) with dX_i = V_i and dV_i = (1/N) sum_j K(n_j/N) (V_j - V_i)."""
    ev = velocity_field(ens.positions, ens.velocities, kernel, time_direction)
    return ens.velocities.copy(), ev.dv


def default_step(kernel: KernelSpec) -> float:
    return 1e-3 / max(1.0, kernel.k0)


@dataclass
class IntegratorConfig:
    h: float | None = None
    scheme: str = "rk4"
    direction: int = FORWARD
    track_crossings: bool = True

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError("step h must be positive")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.direction not in (FORWARD, BACKWARD):
            raise ValueError("direction must be +1 or -1")

    def step_for(self, kernel: KernelSpec) -> float:
        return self.h if self.h is not None else default_step(kernel)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (S, N, d)
    velocities: np.ndarray  # (S, N, d)
    classes: np.ndarray  # (S,) REGULAR / ISO_RANK_REGULAR / SINGULAR
    crossings: list = field(default_factory=list)  # (t, number of focal agents whose ranking changed)
    h: float = 0.0
    n_singular_stages: int = 0

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def __len__(self):
        return len(self.times)

    def ensemble(self, k: int) -> Ensemble:
        return Ensemble(self.positions[k], self.velocities[k])

    def config_class(self, k: int) -> ConfigKind:
        return _KIND_OF_CODE[int(self.classes[k])]

    def max_speed(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.velocities, axis=2), axis=1)

    def max_radius(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.positions, axis=2), axis=1)

    @property
    def crossing_count(self) -> int:
        return len(self.crossings)

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"time {t} is not on the trajectory grid")
        return k


def _classify_counts(n_tied: int, n_unres: int) -> int:
    if n_unres:
        return SINGULAR
    return ISO_RANK_REGULAR if n_tied else REGULAR


def n_steps_for(T: float, h: float) -> int:
    return int(math.floor(T / h + 1e-9))


def integrate(ens0: Ensemble, kernel: KernelSpec, T: float, cfg: IntegratorConfig | None = None) -> Trajectory:
    """Fixed-step integration; neighbor ranks are recomputed at every stage."""
    if not T > 0:
        raise ValueError("T must be positive")
    cfg = cfg or IntegratorConfig()
    h = cfg.step_for(kernel)
    n = n_steps_for(T, h)
    N, d = ens0.N, ens0.dim
    sgn = cfg.direction
    dt = sgn * h

    X = np.empty((n + 1, N, d))
    V = np.empty((n + 1, N, d))
    classes = np.zeros(n + 1, dtype=np.int8)
    X[0], V[0] = ens0.positions, ens0.velocities
    crossings = []
    n_singular = 0
    prev_fp = None

    def f(x, v):
        nonlocal n_singular
        ev = velocity_field(x, v, kernel, sgn)
        if ev.n_unresolved:
            n_singular += 1
        return ev

    for k in range(n + 1):
        x, v = X[k], V[k]
        e1 = f(x, v)
        classes[k] = _classify_counts(e1.n_tied, e1.n_unresolved)
        if cfg.track_crossings:
            if prev_fp is not None:
                changed = int(np.count_nonzero(e1.fingerprint != prev_fp))
                if changed:
                    crossings.append((k * dt, changed))
            prev_fp = e1.fingerprint
        if k == n:
            break
        # overflow is reported below as an IntegrationError
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.scheme == "euler":
                xn = x + dt * v
                vn = v + dt * e1.dv
            else:
                k1x, k1v = v, e1.dv
                x2, v2 = x + 0.5 * dt * k1x, v + 0.5 * dt * k1v
                k2x, k2v = v2, f(x2, v2).dv
                x3, v3 = x + 0.5 * dt * k2x, v + 0.5 * dt * k2v
                k3x, k3v = v3, f(x3, v3).dv
                x4, v4 = x + dt * k3x, v + dt * k3v
                k4x, k4v = v4, f(x4, v4).dv
                xn = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
                vn = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(vn))):
            times = np.arange(k + 1) * dt
            traj = Trajectory(times, X[: k + 1].copy(), V[: k + 1].copy(), classes[: k + 1].copy(), crossings, h)
            raise IntegrationError(f"non-finite state after step {k + 1} (t={(k + 1) * dt:g})", traj)
        X[k + 1], V[k + 1] = xn, vn

    if n_singular:
        msg = f"{n_singular} stage evaluations hit unresolved rank ties; broken by agent index"
        log.warning(msg)
        warnings.warn(msg, SingularEncounterWarning, stacklevel=2)
    times = np.arange(n + 1) * dt
    return Trajectory(times, X, V, classes, crossings, h, n_singular)


class Divergence(NamedTuple):
    value: float
    predicted: float
    degenerate: bool


def divergence(ens: Ensemble, kernel: KernelSpec) -> Divergence:
    """Phase-space divergence -(d/N) sum_i sum_{j != i} K(n_j/N) of the agent vector field.

    At regular configurations this equals -d N gamma_N; ``degenerate`` is set
    when some distances tie exactly.
    """
    ev = velocity_field(ens.positions, ens.velocities, kernel)
    N, d = ens.N, ens.dim
    value = -d * float(np.sum(ev.wsum)) / N
    predicted = -d * N * gamma_N(kernel, N) if N >= 2 else 0.0
    return Divergence(value, predicted, bool(ev.n_tied))


def flow_map(ens0: Ensemble, kernel: KernelSpec, t: float, cfg: IntegratorConfig | None = None):
    traj = integrate(ens0, kernel, t, cfg)
    return traj.ensemble(len(traj) - 1).state(), traj


def flow_jacobian(ens0: Ensemble, kernel: KernelSpec, t: float, cfg: IntegratorConfig | None = None,
                  fd_step: float = 1e-6, coords=None):
    """Central-difference Jacobian of the time-t flow map.

    ``coords`` restricts the perturbed input coordinates (default: all 2Nd);
    returns (J, crossed) where ``crossed`` reports rank changes along any
    of the perturbed runs.
    """
    N, d = ens0.N, ens0.dim
    z0 = ens0.state()
    coords = np.arange(z0.size) if coords is None else np.asarray(coords)
    _, base = flow_map(ens0, kernel, t, cfg)
    crossed = base.crossing_count > 0
    J = np.empty((z0.size, len(coords)))
    for c, idx in enumerate(coords):
        zp, zm = z0.copy(), z0.copy()
        zp[idx] += fd_step
        zm[idx] -= fd_step
        fp, tp = flow_map(Ensemble.from_state(zp, N, d), kernel, t, cfg)
        fm, tm = flow_map(Ensemble.from_state(zm, N, d), kernel, t, cfg)
        crossed = crossed or tp.crossing_count > 0 or tm.crossing_count > 0
        J[:, c] = (fp - fm) / (2.0 * fd_step)
    return J, crossed


class VolumeCheck(NamedTuple):
    measured: float
    predicted: float
    inconclusive: bool


def volume_contraction_check(ens0: Ensemble, kernel: KernelSpec, t: float,
                             cfg: IntegratorConfig | None = None, fd_step: float = 1e-6) -> VolumeCheck:
    """log det of the finite-difference flow Jacobian against -d N gamma_N t."""
    J, crossed = flow_jacobian(ens0, kernel, t, cfg, fd_step)
    sign, logdet = np.linalg.slogdet(J)
    predicted = -ens0.dim * ens0.N * gamma_N(kernel, ens0.N) * t
    return VolumeCheck(float(logdet) if sign > 0 else float("nan"), predicted, bool(crossed))
