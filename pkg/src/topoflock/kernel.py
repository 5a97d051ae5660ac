"""Communication kernels K: [0, 1] -> R+ acting on normalized proximity ranks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Piecewise-linear, nonnegative, nonincreasing kernel on [0, 1].

    ``breakpoints`` is a sequence of ``(m, K(m))`` pairs with strictly
    increasing ``m`` running from 0 to 1.
    """

    breakpoints: tuple[tuple[float, float], ...]
    _m: np.ndarray = field(init=False, repr=False, compare=False)
    _k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(m), float(k)) for m, k in self.breakpoints)
        if len(pts) < 2:
            raise KernelError("need at least two breakpoints")
        m = np.array([p[0] for p in pts])
        k = np.array([p[1] for p in pts])
        if m[0] != 0.0 or m[-1] != 1.0:
            raise KernelError("breakpoints must start at m=0 and end at m=1")
        if np.any(np.diff(m) <= 0):
            raise KernelError("breakpoint abscissae must be strictly increasing")
        if not np.all(np.isfinite(k)) or np.any(k < 0):
            raise KernelError("kernel values must be finite and nonnegative")
        if np.any(np.diff(k) > 0):
            raise KernelError("kernel must be nonincreasing")
        object.__setattr__(self, "breakpoints", pts)
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_k", k)

    @property
    def lipschitz_constant(self) -> float:
        return float(np.max(np.abs(np.diff(self._k) / np.diff(self._m))))

    @property
    def k0(self) -> float:
        return float(self._k[0])

    def __call__(self, m):
        return eval_K(self, m)

    def to_dict(self) -> dict:
        return {"type": "piecewise_linear", "breakpoints": [list(p) for p in self.breakpoints]}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        kind = d.get("type")
        if kind == "piecewise_linear":
            return cls(tuple(tuple(p) for p in d["breakpoints"]))
        if kind == "constant":
            return constant(d["value"])
        raise KernelError(f"unknown kernel type {kind!r}")


def constant(c: float) -> KernelSpec:
    return KernelSpec(((0.0, c), (1.0, c)))


def linear(k0: float, k1: float = 0.0) -> KernelSpec:
    return KernelSpec(((0.0, k0), (1.0, k1)))


def golden() -> KernelSpec:
    """K(m) = 9(1 - m), so that K(2/3) = 3 and K(1) = 0."""
    return linear(9.0, 0.0)


def eval_K(spec: KernelSpec, m):
    """Evaluate K at rank argument(s) ``m``; scalars in, scalar out."""
    arr = np.asarray(m, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise KernelError("rank argument outside [0, 1]")
    out = np.interp(arr, spec._m, spec._k)
    return float(out) if out.ndim == 0 else out


def gamma(spec: KernelSpec) -> float:
    """Exact integral of K over [0, 1] (trapezoids are exact for linear pieces)."""
    return float(np.sum(0.5 * (spec._k[1:] + spec._k[:-1]) * np.diff(spec._m)))


def gamma_N(spec: KernelSpec, N: int) -> float:
    """(1/N) * sum_{n=2}^{N} K(n/N)."""
    if int(N) != N or N < 2:
        raise KernelError("gamma_N needs an integer N >= 2")
    N = int(N)
    return float(np.sum(rank_weights(spec, N)[2:]) / N)


def rank_weights(spec: KernelSpec, N: int) -> np.ndarray:
    """Table w[n] = K(n/N) for n = 0..N; index 0 is unused padding."""
    return eval_K(spec, np.arange(N + 1) / N)


def random_kernel(rng: np.random.Generator, k0_max: float = 10.0, max_pieces: int = 4) -> KernelSpec:
    n = int(rng.integers(1, max_pieces + 1))
    inner = np.sort(rng.uniform(0.0, 1.0, n - 1))
    m = np.concatenate([[0.0], inner, [1.0]])
    k = np.sort(rng.uniform(0.0, k0_max, n + 1))[::-1]
    return KernelSpec(tuple(zip(m.tolist(), k.tolist())))
