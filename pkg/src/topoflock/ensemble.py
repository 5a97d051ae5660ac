"""Agent ensembles, neighbor ranks and iso-rank classification."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORWARD = 1
BACKWARD = -1


@dataclass(frozen=True)
class Ensemble:
    """Positions and velocities of N agents in R^d, stored as (N, d) arrays."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape or x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} must both be (N, d), N >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite coordinates")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def state(self) -> np.ndarray:
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    @classmethod
    def from_state(cls, z, N: int, d: int) -> "Ensemble":
        z = np.asarray(z, dtype=float)
        return cls(z[: N * d].reshape(N, d), z[N * d :].reshape(N, d))

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(), "velocities": self.velocities.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        return cls(np.asarray(d["positions"], dtype=float), np.asarray(d["velocities"], dtype=float))


def three_agents(eps: float, velocities=(-1.0, 0.0, 1.0)) -> Ensemble:
    """Agents at -1, eps, 1 on a line (the discontinuity example)."""
    return Ensemble(np.array([-1.0, eps, 1.0]), np.asarray(velocities, dtype=float))


def write_csv(ens: Ensemble, path) -> None:
    d = ens.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id"] + [f"x_{k + 1}" for k in range(d)] + [f"v_{k + 1}" for k in range(d)])
        for i in range(ens.N):
            w.writerow([i] + [repr(float(c)) for c in ens.positions[i]] + [repr(float(c)) for c in ens.velocities[i]])


def read_csv(path) -> Ensemble:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [k for k, h in enumerate(header) if h.startswith("x_")]
    vcols = [k for k, h in enumerate(header) if h.startswith("v_")]
    if not xcols or len(xcols) != len(vcols):
        raise ValueError(f"{path}: expected columns agent_id, x_1..x_d, v_1..v_d")
    body.sort(key=lambda r: int(r[0]))
    x = np.array([[float(r[k]) for k in xcols] for r in body])
    v = np.array([[float(r[k]) for k in vcols] for r in body])
    return Ensemble(x, v)


def count_M(positions, center, radius: float, weights=None) -> float:
    """Mass of the closed ball B(center, radius) under the (weighted) point cloud.

    Unweighted clouds get mass 1/N per point.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    dist = _distances(x, np.asarray(center, dtype=float).reshape(-1))
    inside = dist <= radius
    if weights is None:
        return float(np.count_nonzero(inside)) / x.shape[0]
    return float(np.sum(np.asarray(weights)[inside]))


def _distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # abs() in 1-D keeps distances bit-identical to the compiled rank kernels
    if x.shape[1] == 1:
        return np.abs(x[:, 0] - c[0])
    return np.sqrt(np.sum((x - c) ** 2, axis=1))


def radial_velocities(ens: Ensemble, i: int) -> np.ndarray:
    """Rate of change of |X_j - X_i| for every j; zero where the distance is zero."""
    dx = ens.positions - ens.positions[i]
    dv = ens.velocities - ens.velocities[i]
    dist = _distances(ens.positions, ens.positions[i])
    out = np.zeros(ens.N)
    nz = dist > 0
    if ens.dim == 1:
        out[nz] = dv[nz, 0] * np.sign(dx[nz, 0])
    else:
        out[nz] = np.sum(dx[nz] * dv[nz], axis=1) / dist[nz]
    return out


@dataclass(frozen=True)
class RankTable:
    focal: int
    order: np.ndarray  # agent indices, nearest first; order[0] == focal
    ranks: np.ndarray  # ranks[j] = 1-based position of j in ``order``
    tied: np.ndarray  # tied[j]: j shares its distance with another non-focal agent
    unresolved: np.ndarray  # unresolved[j]: tie not separated by radial velocity

    @property
    def rank_args(self) -> np.ndarray:
        return self.ranks / len(self.ranks)


def rank_table(ens: Ensemble, i: int, time_direction: int = FORWARD) -> RankTable:
    """Sort all agents by distance from agent ``i``.

    Equal distances are ordered by radial velocity (slower separation ranks
    nearer going forward in time, the reverse going backward), then by index.
    The focal agent always ranks first.
    """
    N = ens.N
    dist = _distances(ens.positions, ens.positions[i])
    rad = radial_velocities(ens, i) * (1.0 if time_direction >= 0 else -1.0)
    dist_key = dist.copy()
    dist_key[i] = -1.0
    order = np.lexsort((np.arange(N), rad, dist_key))
    ranks = np.empty(N, dtype=np.int64)
    ranks[order] = np.arange(1, N + 1)

    tied = np.zeros(N, dtype=bool)
    unresolved = np.zeros(N, dtype=bool)
    ds = dist_key[order]
    rs = rad[order]
    start = 1
    while start < N:
        stop = start + 1
        while stop < N and ds[stop] == ds[start]:
            stop += 1
        if stop - start > 1:
            members = order[start:stop]
            tied[members] = True
            if ds[start] == 0.0 or np.any(np.diff(rs[start:stop]) == 0.0):
                unresolved[members] = True
        start = stop
    if unresolved.any():
        log.debug("unresolved rank tie around agent %d broken by index", i)
    return RankTable(i, order, ranks, tied, unresolved)


class ConfigKind(enum.Enum):
    REGULAR = "Regular"
    ISO_RANK_REGULAR = "IsoRankRegular"
    SINGULAR = "Singular"


@dataclass
class ConfigClass:
    kind: ConfigKind
    triads: list = field(default_factory=list)  # (i, j, k): |x_i - x_k| == |x_j - x_k|
    singular_triads: list = field(default_factory=list)

    def __str__(self):
        return self.kind.value


def position_scale(ens: Ensemble) -> float:
    x = ens.positions
    return float(np.max(np.ptp(x, axis=0))) if ens.N > 1 else 0.0


def classify(ens: Ensemble, tol: float | None = None) -> ConfigClass:
    """Regular / IsoRankRegular / Singular, with offending triads.

    ``tol`` is the distance-equality tolerance; by default 1e-12 times the
    configuration's extent.
    """
    if tol is None:
        tol = 1e-12 * max(position_scale(ens), 1e-300)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    N = ens.N
    triads, bad = [], []
    for k in range(N):
        dist = _distances(ens.positions, ens.positions[k])
        rad = radial_velocities(ens, k)
        others = np.array([j for j in range(N) if j != k], dtype=np.int64)
        if len(others) < 2:
            continue
        srt = others[np.argsort(dist[others], kind="stable")]
        ds = dist[srt]
        start = 0
        while start < len(srt):
            stop = start + 1
            while stop < len(srt) and ds[stop] - ds[stop - 1] <= tol:
                stop += 1
            group = srt[start:stop]
            for a in range(len(group)):
                for b in range(a + 1, len(group)):
                    i, j = int(group[a]), int(group[b])
                    triads.append((i, j, k))
                    same_point = dist[i] <= tol or dist[j] <= tol or _distances(
                        ens.positions[[i]], ens.positions[j]
                    )[0] <= tol
                    vr_i, vr_j = rad[i], rad[j]
                    same_rate = abs(vr_i - vr_j) <= 1e-12 * max(1.0, abs(vr_i), abs(vr_j))
                    if same_point or same_rate:
                        bad.append((i, j, k))
            start = stop
    if not triads:
        kind = ConfigKind.REGULAR
    elif bad:
        kind = ConfigKind.SINGULAR
    else:
        kind = ConfigKind.ISO_RANK_REGULAR
    return ConfigClass(kind, triads, bad)
