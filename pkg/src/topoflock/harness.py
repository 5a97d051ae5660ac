"""Experiment orchestration: golden suites, invariant and metric property
runs, the mean-field convergence study and the D-vs-W1 probe."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import kernel as km
from . import metrics as mt
from .dynamics import IntegratorConfig, divergence, integrate, n_steps_for, volume_contraction_check
from .ensemble import Ensemble, classify, ConfigKind, count_M, three_agents
from .meanfield import (
    ConfigurationError,
    DensitySpec,
    intermediate_dynamics,
    reference_solution,
    sample,
    stratified_unit,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("golden", "discontinuity", "invariants", "metric_props", "converge", "dw1_probe", "simulate")


class ConfigError(ValueError):
    pass


# -------------------------------------------------------------------- config


_FIELDS = ("experiment", "kernel", "density", "ensemble", "N_list", "N_ref", "T", "h", "seeds", "out_dir", "params")


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: km.KernelSpec = field(default_factory=km.golden)
    density: dict | None = None
    ensemble: dict | None = None
    N_list: tuple = ()
    N_ref: int | None = None
    T: float = 1.0
    h: float | None = None
    seeds: tuple = (0,)
    out_dir: str | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        tag = raw.get("experiment")
        if tag not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {tag!r}")
        try:
            kernel = km.KernelSpec.from_dict(raw["kernel"]) if "kernel" in raw else km.golden()
            density = DensitySpec.from_dict(raw["density"]).to_dict() if raw.get("density") else None
            ensemble = Ensemble.from_dict(raw["ensemble"]).to_dict() if raw.get("ensemble") else None
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid kernel/density/ensemble: {exc}") from exc
        try:
            N_list = tuple(int(n) for n in raw.get("N_list", ()))
            N_ref = int(raw["N_ref"]) if raw.get("N_ref") is not None else None
            T = float(raw.get("T", 1.0))
            h = float(raw["h"]) if raw.get("h") is not None else None
            seeds = tuple(int(s) for s in raw.get("seeds", (0,)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid numeric field: {exc}") from exc
        params = raw.get("params", {}) or {}
        if not isinstance(params, dict):
            raise ConfigError("params must be an object")
        if not T > 0 or (h is not None and not h > 0):
            raise ConfigError("T and h must be positive")
        if any(n < 1 for n in N_list) or (N_ref is not None and N_ref < 1):
            raise ConfigError("agent counts must be positive")
        out = raw.get("out_dir")
        return cls(tag, kernel, density, ensemble, N_list, N_ref, T, h, seeds,
                   str(out) if out is not None else None, json.loads(json.dumps(params)))

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "kernel": self.kernel.to_dict(),
            "density": self.density,
            "ensemble": self.ensemble,
            "N_list": list(self.N_list),
            "N_ref": self.N_ref,
            "T": self.T,
            "h": self.h,
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "params": self.params,
        }

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.parse(raw)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def density_spec(self) -> DensitySpec:
        if self.density is None:
            raise ConfigError(f"experiment {self.experiment!r} needs a density")
        return DensitySpec.from_dict(self.density)

    def param(self, key, default):
        return self.params.get(key, default)


# -------------------------------------------------------------------- reports


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    target: str = ""


@dataclass
class Report:
    experiment: str
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    invalidated: bool = False

    @property
    def passed(self) -> bool:
        return not self.invalidated and all(c.passed for c in self.checks)

    def add(self, name, passed, value=None, target=""):
        self.checks.append(Check(name, bool(passed), None if value is None else float(value), target))

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            v = "" if c.value is None else f" value={c.value:.6g}"
            out.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}{v} {c.target}".rstrip())
        if self.invalidated:
            out.append("[INVALID] window contained a rank crossing")
        return out

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "invalidated": self.invalidated,
            "checks": [c.__dict__ for c in self.checks],
            "data": _jsonable(self.data),
            "provenance": self.provenance,
        }


@dataclass
class RunSummary:
    seed: int
    N: int
    w1_initial: float
    sup_w1: float
    ratio: float


@dataclass
class ConvergenceReport(Report):
    runs: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    median_sup: dict = field(default_factory=dict)
    median_ratio: dict = field(default_factory=dict)
    fitted_C: float = float("nan")
    trend_slope: float = float("nan")

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update({
            "runs": [r.__dict__ for r in self.runs],
            "median_sup_w1": {str(k): v for k, v in self.median_sup.items()},
            "median_ratio": {str(k): v for k, v in self.median_ratio.items()},
            "fitted_C": self.fitted_C,
            "trend_slope": self.trend_slope,
        })
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def provenance(cfg: ExperimentConfig | None, started: float) -> dict:
    return {
        "config_sha256": cfg.digest() if cfg is not None else None,
        "version": f"topoflock {__version__}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": time.perf_counter() - started,
    }


# -------------------------------------------------------------------- writers


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if (isinstance(c, float) and math.isnan(c)) else c for c in r])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def write_dat(path, header, rows) -> None:
    """Whitespace-separated columns with a '#' header, as gnuplot expects."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(f"{c:.10g}" if isinstance(c, float) else str(c) for c in r) + "\n")


def write_trajectory_csv(path, traj, every: int = 1) -> None:
    d = traj.dim
    header = ["t", "agent_id"] + [f"x_{k + 1}" for k in range(d)] + [f"v_{k + 1}" for k in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(0, len(traj), every):
            t = repr(float(traj.times[k]))
            for i in range(traj.N):
                w.writerow([t, i] + [repr(float(c)) for c in traj.positions[k, i]]
                           + [repr(float(c)) for c in traj.velocities[k, i]])


# ------------------------------------------------------------ three agents


def three_agent_closed_form(sign: int, t):
    """Velocities (V1, V2, V3) of the three-agent example under K(2/3)=3, K(1)=0.

    ``sign`` is the sign of the middle agent's offset; valid while ranks persist.
    """
    t = np.asarray(t, dtype=float)
    a, b = np.exp(-t), np.exp(-2 * t)
    v = np.stack([(1 - 4 * a + b) / 2, (1 - b) / 2, (1 + b) / 2], axis=-1)
    if sign > 0:
        return v
    # mirror image: x -> -x, v -> -v, agents 1 and 3 swapped
    return -v[..., ::-1]


def _golden_branch(eps, kernel, T, h):
    traj = integrate(three_agents(eps), kernel, T, IntegratorConfig(h=h))
    exact = three_agent_closed_form(1 if eps > 0 else -1, traj.times)
    err = float(np.max(np.abs(traj.velocities[:, :, 0] - exact)))
    return traj, err


def run_golden(cfg: ExperimentConfig | None = None) -> Report:
    started = time.perf_counter()
    kernel = cfg.kernel if cfg else km.golden()
    T = cfg.T if cfg and cfg.experiment == "golden" else 0.2
    h = (cfg.h if cfg and cfg.h else None) or 1e-3
    rep = Report("golden")
    for eps in (0.5, -0.5):
        traj, err = _golden_branch(eps, kernel, T, h)
        if traj.crossing_count:
            rep.invalidated = True
        rep.add(f"eps={eps:+g} crossing-free on [0,{T:g}]", traj.crossing_count == 0, traj.crossing_count)
        rep.add(f"eps={eps:+g} max velocity error", err < 1e-6, err, "< 1e-6")
        rep.data[f"eps={eps:+g}"] = {
            "t": traj.times, "V": traj.velocities[:, :, 0],
            "exact": three_agent_closed_form(1 if eps > 0 else -1, traj.times),
        }
    wall = time.perf_counter() - started
    rep.data["wall_time_s"] = wall
    rep.provenance = provenance(cfg, started)
    return rep


def run_discontinuity(eps_small: float = 1e-6, T: float = 1.0, h: float = 1e-3,
                      kernel: km.KernelSpec | None = None, cfg: ExperimentConfig | None = None) -> Report:
    if not 0 < eps_small < 0.1:
        raise ConfigError("eps_small must lie in (0, 0.1)")
    started = time.perf_counter()
    kernel = kernel or km.golden()
    rep = Report("discontinuity")
    v2 = {}
    for s in (1, -1):
        traj, err = _golden_branch(s * eps_small, kernel, T, h)
        v2[s] = float(traj.velocities[-1, 1, 0])
        rep.add(f"branch {'+' if s > 0 else '-'} matches closed form", err < 1e-5, err, "< 1e-5")
        rep.data[f"branch{s:+d}"] = {"t": traj.times, "V2": traj.velocities[:, 1, 0],
                                      "crossings": traj.crossing_count}
    sep = abs(v2[1] - v2[-1])
    rep.add("separation |V2+(T) - V2-(T)|", 0.85 <= sep <= 0.88, sep, "in [0.85, 0.88]")
    rep.data.update({"separation": sep, "target": 1 - math.exp(-2 * T), "eps_small": eps_small})
    rep.provenance = provenance(cfg, started)
    return rep


# ---------------------------------------------------------------- invariants


def random_ensemble(rng: np.random.Generator, N: int, d: int) -> Ensemble:
    rx, rv = rng.uniform(0.5, 3.0, size=2)
    return Ensemble(rng.uniform(-rx, rx, (N, d)), rng.uniform(-rv, rv, (N, d)))


def check_speed_support(rep: Report, n_ensembles=200, T=5.0, h=0.01, max_N=64, dims=(1, 2, 3), seed=0, slack=1e-9):
    """Max speed never grows and |X_i(t)| stays within R_x + t R_v."""
    rng = np.random.default_rng(seed)
    worst_v = worst_x = -np.inf
    for _ in range(n_ensembles):
        N = int(rng.integers(2, max_N + 1))
        d = int(rng.choice(dims))
        kernel = km.random_kernel(rng)
        ens = random_ensemble(rng, N, d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = integrate(ens, kernel, T, IntegratorConfig(h=h, track_crossings=False))
        rv = float(np.max(np.linalg.norm(ens.velocities, axis=1)))
        rx = float(np.max(np.linalg.norm(ens.positions, axis=1)))
        worst_v = max(worst_v, float(np.max(traj.max_speed() - rv)))
        worst_x = max(worst_x, float(np.max(traj.max_radius() - (rx + np.abs(traj.times) * rv))))
    rep.add(f"max speed non-increasing ({n_ensembles} ensembles)", worst_v <= slack, worst_v, f"<= {slack:g}")
    rep.add(f"support within R_x + t R_v ({n_ensembles} ensembles)", worst_x <= slack, worst_x, f"<= {slack:g}")


def check_divergence_identity(rep: Report, n_ensembles=100, max_N=64, dims=(1, 2, 3), seed=1, rtol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    while checked < n_ensembles:
        N = int(rng.integers(2, max_N + 1))
        d = int(rng.choice(dims))
        ens = random_ensemble(rng, N, d)
        if classify(ens, tol=0.0).kind is not ConfigKind.REGULAR:
            continue
        div = divergence(ens, km.random_kernel(rng))
        if div.predicted != 0.0:
            worst = max(worst, abs(div.value - div.predicted) / abs(div.predicted))
        checked += 1
    rep.add(f"divergence = -d N gamma_N ({n_ensembles} regular ensembles)", worst <= rtol, worst, f"rel <= {rtol:g}")


def check_volume_rate(rep: Report, t=0.05, h=1e-3, rtol=1e-4):
    vc = volume_contraction_check(three_agents(0.5), km.golden(), t, IntegratorConfig(h=h))
    rel = abs(vc.measured - vc.predicted) / abs(vc.predicted)
    rep.add("flow log-det matches -d N gamma_N t", rel <= rtol and not vc.inconclusive, vc.measured,
            f"target {vc.predicted:.6g}, rel <= {rtol:g}")
    rep.data["log_det"] = {"measured": vc.measured, "predicted": vc.predicted, "inconclusive": vc.inconclusive}


def run_invariants(cfg: ExperimentConfig | None = None) -> Report:
    started = time.perf_counter()
    p = cfg.params if cfg else {}
    rep = Report("invariants")
    seed = cfg.seeds[0] if cfg else 0
    check_speed_support(rep, p.get("n_ensembles", 200), cfg.T if cfg and cfg.T != 1.0 else 5.0,
                        (cfg.h if cfg and cfg.h else 0.01), p.get("max_N", 64), tuple(p.get("dims", (1, 2, 3))), seed)
    check_divergence_identity(rep, p.get("n_divergence", 100), seed=seed + 1)
    check_volume_rate(rep)
    rep.provenance = provenance(cfg, started)
    return rep


# ---------------------------------------------------------------- metric props


def _random_cloud(rng, n, d=1, scale=1.0):
    return mt.EmpiricalMeasure(rng.uniform(0.0, scale, (n, d)))


def check_metric_axioms(rep: Report, n_triples=500, seed=2, tol=1e-10):
    rng = np.random.default_rng(seed)
    worst = {"w1": 0.0, "disc": 0.0}
    for _ in range(n_triples):
        n = int(rng.integers(1, 16))
        d = int(rng.integers(1, 4))
        a, b, c = (_random_cloud(rng, n, d) for _ in range(3))
        ab, ba = mt.wasserstein1(a, b), mt.wasserstein1(b, a)
        bc, ac = mt.wasserstein1(b, c), mt.wasserstein1(a, c)
        perm = mt.EmpiricalMeasure(a.points[rng.permutation(n)])
        bad = max(abs(ab - ba), ac - ab - bc, abs(mt.wasserstein1(a, perm)), 0.0)
        worst["w1"] = max(worst["w1"], bad)
        # discrepancy on the line; counts may differ
        x, y, z = (_random_cloud(rng, int(rng.integers(1, 16))) for _ in range(3))
        xy, yx = mt.discrepancy_line(x, y), mt.discrepancy_line(y, x)
        yz, xz = mt.discrepancy_line(y, z), mt.discrepancy_line(x, z)
        permx = mt.EmpiricalMeasure(x.points[rng.permutation(x.n)])
        bad = max(abs(xy - yx), xz - xy - yz, abs(mt.discrepancy_line(x, permx)), 0.0)
        if not np.array_equal(np.sort(x.points[:, 0]), np.sort(y.points[:, 0])) and xy <= 0:
            bad = max(bad, 1.0)
        worst["disc"] = max(worst["disc"], bad)
    rep.add(f"W1 metric axioms ({n_triples} triples)", worst["w1"] <= tol, worst["w1"], f"<= {tol:g}")
    rep.add(f"discrepancy metric axioms ({n_triples} triples)", worst["disc"] <= tol, worst["disc"], f"<= {tol:g}")


def check_ball_mass_lipschitz(rep: Report, n_draws=500, seed=3, slack=1e-12):
    """|M[rho1](x, r) - M[rho2](x, r)| <= D(rho1, rho2) on the line."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_draws):
        r1 = _random_cloud(rng, int(rng.integers(1, 40)))
        r2 = _random_cloud(rng, int(rng.integers(1, 40)))
        D = mt.discrepancy_line(r1, r2)
        x = rng.uniform(-0.2, 1.2)
        # radii both random and exactly at atom distances
        pool = np.abs(np.concatenate([r1.points[:, 0], r2.points[:, 0]]) - x)
        for r in (rng.uniform(0, 1.2), float(rng.choice(pool))):
            gap = abs(count_M(r1.points, [x], r) - count_M(r2.points, [x], r))
            worst = max(worst, gap - D)
    rep.add(f"ball mass is 1-Lipschitz in D ({n_draws} draws)", worst <= slack, worst, f"<= {slack:g}")


def check_plateau_duality(rep: Report, n_pairs=100, seed=4, eps_list=(1e-1, 1e-2, 1e-3, 1e-5)):
    """On [0, inf): the sup over plateau test functions recovers sup |G1 - G2| as eps -> 0."""
    rng = np.random.default_rng(seed)
    worst_over = -np.inf
    worst_under = -np.inf
    final_gap = 0.0
    for _ in range(n_pairs):
        a = rng.uniform(0, 2, int(rng.integers(1, 20)))
        b = rng.uniform(0, 2, int(rng.integers(1, 20)))
        atoms = np.unique(np.concatenate([a, b]))
        G = lambda pts, r: np.mean(pts[None, :] <= r[:, None], axis=1)
        sup_cdf = float(np.max(np.abs(G(a, atoms) - G(b, atoms))))
        for eps in eps_list:
            best = 0.0
            omega = 0.0
            for r in atoms:
                phi = mt.TestFunction.plateau(float(r), eps)
                best = max(best, abs(float(np.mean(phi(a)) - np.mean(phi(b)))))
                omega = max(omega, float(np.mean((a > r) & (a <= r + eps)) + np.mean((b > r) & (b <= r + eps))))
            worst_over = max(worst_over, best - sup_cdf)
            worst_under = max(worst_under, sup_cdf - best - omega)
            if eps == eps_list[-1]:
                final_gap = max(final_gap, sup_cdf - best)
    ok = worst_over <= 1e-12 and worst_under <= 1e-12
    rep.add("plateau sup within eps-controlled band of sup|G1-G2|", ok, max(worst_over, worst_under), "<= 1e-12")
    rep.data["plateau_gap_smallest_eps"] = final_gap


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _integrate_pieces(f, breaks, sub: int = 16):
    """Composite Gauss-Legendre over [breaks[k], breaks[k+1]]; ``f`` is vectorized
    and smooth inside each piece."""
    lo = np.repeat(breaks[:-1], sub) + np.tile(np.arange(sub), len(breaks) - 1) * np.repeat(np.diff(breaks) / sub, sub)
    width = np.repeat(np.diff(breaks) / sub, sub)
    r = lo[:, None] + 0.5 * width[:, None] * (_GL_NODES[None, :] + 1.0)
    vals = np.asarray(f(r.ravel()), dtype=float).reshape(r.shape)
    return float(np.sum(0.5 * width[:, None] * _GL_WEIGHTS[None, :] * vals))


def check_regularization_bounds(rep: Report, n_functions=100, seed=5, rel_slack=1e-6, c_psi=2.0):
    rng = np.random.default_rng(seed)
    eta = mt.default_mollifier()
    worst = dict.fromkeys(("plus_slope_mass", "phi_eps_above", "phi_eps_gap", "psi_lipschitz",
                           "psi_l1_gap", "psi_above"), -np.inf)
    for _ in range(n_functions):
        phi = mt.random_test_function(rng)
        eps = float(10 ** rng.uniform(-3, -0.5))
        reg = mt.Regularization(phi, eps, eta)
        nx = mt.norm_X(phi)
        k = np.asarray(phi.knots)
        top = float(k[-1]) + 2 * eps
        brk = np.unique(np.concatenate([[0.0], k, k + eps, k - eps, [top]]))
        brk = brk[(brk >= 0) & (brk <= top)]
        scale = max(nx, 1e-300)
        for f in (reg.dphi_plus, reg.dphi_minus):
            tot = _integrate_pieces(f, brk)
            worst["plus_slope_mass"] = max(worst["plus_slope_mass"], (tot - nx) / scale)
        grid = np.linspace(0.0, top, 10_001)
        pe = reg.phi_eps
        worst["phi_eps_above"] = max(worst["phi_eps_above"], float(np.max(phi(grid) - pe(grid))) / scale)
        gap = _integrate_pieces(lambda r: pe(r) - phi(r), brk)
        worst["phi_eps_gap"] = max(worst["phi_eps_gap"], (gap - 2 * eps * nx) / (2 * eps * scale))
        dpsi = float(np.max(np.abs(reg.dpsi(grid))))
        lip_bound = 2.0 / eps * eta.sup * nx
        worst["psi_lipschitz"] = max(worst["psi_lipschitz"], (dpsi - lip_bound) / max(lip_bound, 1e-300))
        l1 = _integrate_pieces(lambda r: np.abs(reg.psi(r) - phi(r)), brk)
        worst["psi_l1_gap"] = max(worst["psi_l1_gap"], (l1 - c_psi * eps * nx) / (c_psi * eps * scale))
        worst["psi_above"] = max(worst["psi_above"], float(np.max(phi(grid) - reg.psi(grid))) / scale)
    for name, label in (("plus_slope_mass", "int (phi+-)' <= ||phi||_X"),
                        ("phi_eps_above", "phi <= phi_eps pointwise"),
                        ("phi_eps_gap", "int (phi_eps - phi) <= 2 eps ||phi||_X"),
                        ("psi_lipschitz", "||psi_eps'||_inf <= (2/eps)||eta||_inf ||phi||_X"),
                        ("psi_l1_gap", f"int |psi_eps - phi| <= {c_psi:g} eps ||phi||_X"),
                        ("psi_above", "psi_eps >= phi on a 1e4-point grid")):
        rep.add(f"{label} ({n_functions} functions)", worst[name] <= rel_slack, worst[name], f"rel <= {rel_slack:g}")


def run_metric_props(cfg: ExperimentConfig | None = None) -> Report:
    started = time.perf_counter()
    p = cfg.params if cfg else {}
    seed = cfg.seeds[0] if cfg else 0
    rep = Report("metric_props")
    check_metric_axioms(rep, p.get("n_triples", 500), seed + 2)
    check_ball_mass_lipschitz(rep, p.get("n_draws", 500), seed + 3)
    check_plateau_duality(rep, p.get("n_pairs", 100), seed + 4)
    check_regularization_bounds(rep, p.get("n_functions", 100), seed + 5)
    rep.provenance = provenance(cfg, started)
    return rep


# ---------------------------------------------------------------- D vs W1


def run_dw1_probe(cfg: ExperimentConfig | None = None) -> Report:
    """D(mu^N, rho) against sqrt(W1(mu^N, rho)) for stratified samples of a
    uniform density on the line; both distances computed exactly."""
    started = time.perf_counter()
    Ns = tuple(cfg.N_list) if cfg and cfg.N_list else (10, 100, 1000, 10000)
    seeds = tuple(cfg.seeds) if cfg and len(cfg.seeds) > 1 else tuple(range(20))
    lo, hi = (cfg.param("interval", (0.0, 1.0)) if cfg else (0.0, 1.0))
    lo, hi = float(lo), float(hi)
    cdf = lambda t: np.clip((np.asarray(t) - lo) / (hi - lo), 0.0, 1.0)
    rep = Report("dw1_probe")
    rows = []
    per_N = {}
    for N in Ns:
        cs = []
        for s in seeds:
            u = stratified_unit(N, 1, np.random.default_rng(s))[:, 0]
            pts = lo + (hi - lo) * u
            w1 = mt.w1_to_uniform_line(pts, lo, hi)
            D = mt.discrepancy_to_density_line(pts, cdf)
            c = D / math.sqrt(w1) if w1 > 0 else 0.0
            rows.append((N, s, w1, D, c))
            cs.append(c)
        per_N[N] = float(np.median(cs))
    c_fit = max(r[4] for r in rows if r[0] == Ns[0])
    holds = all(r[3] <= c_fit * math.sqrt(r[2]) + 1e-12 for r in rows if r[0] != Ns[0])
    medians = [per_N[N] for N in Ns]
    nonincreasing = all(b <= a for a, b in zip(medians, medians[1:]))
    reverse = max(r[2] - (hi - lo) * r[3] for r in rows)
    rep.add("D <= C_fit sqrt(W1) at all larger N", holds, c_fit)
    rep.add("fitted C non-increasing in N", nonincreasing, medians[-1],
            "medians " + ", ".join(f"{m:.4g}" for m in medians))
    rep.add("W1 <= diam * D (shrinking D forces shrinking W1)", reverse <= 1e-12, reverse)
    rep.data.update({"rows": rows, "median_C": per_N, "C_fit": c_fit, "N_list": Ns, "seeds": seeds})
    rep.provenance = provenance(cfg, started)
    return rep


# --------------------------------------------------------- convergence study


def _checkpoint_indices(T, h, fractions):
    n = n_steps_for(T, h)
    return sorted({min(n, int(round(f * T / h))) for f in fractions})


def estimate_cost(N_list, N_ref, n_seeds, T, h, n_checkpoints) -> float:
    """Operation-count model: stages x N^2 log N per integration plus n m max(n, m) per transport solve."""
    steps = n_steps_for(T, h)
    dyn = lambda n: steps * 4 * n * n * math.log2(max(n, 2))
    total = dyn(N_ref)
    for N in N_list:
        total += n_seeds * (dyn(N) + n_checkpoints * N * N_ref * max(N, N_ref))
    return float(total)


def _distances_at(ref_x, ref_v, x, v, with_disc):
    ref_phase = mt.EmpiricalMeasure(np.hstack([ref_x, ref_v]))
    phase = mt.EmpiricalMeasure(np.hstack([x, v]))
    w1 = mt.wasserstein1_weighted(ref_phase, phase)
    d = x.shape[1]
    if d == 1:
        n, m = ref_x.shape[0], x.shape[0]
        w1s = mt.wasserstein1_line(ref_x[:, 0], np.full(n, 1 / n), x[:, 0], np.full(m, 1 / m))
        disc = mt.discrepancy_line(mt.EmpiricalMeasure(ref_x), mt.EmpiricalMeasure(x))
    else:
        w1s = mt.wasserstein1_weighted(mt.EmpiricalMeasure(ref_x), mt.EmpiricalMeasure(x))
        disc = mt.discrepancy(mt.EmpiricalMeasure(ref_x), mt.EmpiricalMeasure(x)).lower if with_disc else float("nan")
    return w1, w1s, disc


def _candidate_job(args):
    (seed, N, density, kernel, T, h, strategy, ck, ref_x, ref_v, with_disc, delta_ctx) = args
    f0 = DensitySpec.from_dict(density)
    ens = sample(f0, N, strategy, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = integrate(ens, kernel, T, IntegratorConfig(h=h, track_crossings=False))
    deltas = None
    if delta_ctx is not None:
        ref, min_ratio = delta_ctx
        try:
            res = intermediate_dynamics(ref, ens, kernel, T, IntegratorConfig(h=h), min_ratio=min_ratio)
            deltas = res.delta.delta
        except ConfigurationError:
            deltas = None
    rows = []
    for c, k in enumerate(ck):
        w1, w1s, disc = _distances_at(ref_x[c], ref_v[c], traj.positions[k], traj.velocities[k], with_disc)
        delta = float(deltas[k]) if deltas is not None else float("nan")
        rows.append((seed, N, float(traj.times[k]), w1, w1s, disc, delta))
    return rows


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    started = time.perf_counter()
    f0 = cfg.density_spec()
    if not cfg.N_list or cfg.N_ref is None:
        raise ConfigError("converge needs N_list and N_ref")
    if cfg.h is None:
        raise ConfigError("converge needs an explicit step h")
    min_ratio = int(cfg.param("min_ref_ratio", 16))
    if cfg.N_ref < min_ratio * max(cfg.N_list):
        raise ConfigError(f"N_ref={cfg.N_ref} must be at least {min_ratio} x max(N_list)={max(cfg.N_list)}")
    fractions = tuple(cfg.param("checkpoints", (0.0, 0.25, 0.5, 0.75, 1.0)))
    ck = _checkpoint_indices(cfg.T, cfg.h, fractions)
    cap = float(cfg.param("budget_cap", 2e13))
    cost = estimate_cost(cfg.N_list, cfg.N_ref, len(cfg.seeds), cfg.T, cfg.h, len(ck))
    if cost > cap:
        raise ConfigError(f"estimated cost {cost:.3g} ops exceeds budget_cap {cap:.3g}; "
                          "shrink N_ref or the N list, use fewer seeds/checkpoints, or raise budget_cap")

    ref_strategy = cfg.param("ref_strategy", "stratified")
    ref_seed = int(cfg.param("ref_seed", 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = reference_solution(f0, cfg.N_ref, cfg.kernel, cfg.T, IntegratorConfig(h=cfg.h, track_crossings=False),
                                 seed=ref_seed, strategy=ref_strategy, max_N_ref=int(cfg.param("max_N_ref", 8192)))
    ref_x = [ref.trajectory.positions[k] for k in ck]
    ref_v = [ref.trajectory.velocities[k] for k in ck]
    delta_ctx = (ref, int(cfg.param("delta_ref_ratio", 16))) if cfg.param("delta", False) else None
    strategy = cfg.param("strategy", "iid")
    with_disc = bool(cfg.param("discrepancy_nd", False))
    jobs = [(s, N, cfg.density, cfg.kernel, cfg.T, cfg.h, strategy, ck, ref_x, ref_v, with_disc, delta_ctx)
            for N in cfg.N_list for s in cfg.seeds]
    workers = int(cfg.param("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_candidate_job, jobs))
    else:
        results = [_candidate_job(j) for j in jobs]
    rows = sorted((r for rs in results for r in rs), key=lambda r: (r[1], r[0], r[2]))

    rep = ConvergenceReport("converge", rows=rows)
    for N in cfg.N_list:
        for s in cfg.seeds:
            mine = [r for r in rows if r[0] == s and r[1] == N]
            w0 = mine[0][3]
            sup = max(r[3] for r in mine)
            denom = max(w0, math.sqrt(w0))
            rep.runs.append(RunSummary(s, N, w0, sup, sup / denom if denom > 0 else 0.0))
    for N in cfg.N_list:
        rep.median_sup[N] = float(np.median([r.sup_w1 for r in rep.runs if r.N == N]))
        rep.median_ratio[N] = float(np.median([r.ratio for r in rep.runs if r.N == N]))
    meds = [rep.median_sup[N] for N in cfg.N_list]
    ratios = [rep.median_ratio[N] for N in cfg.N_list]
    rep.fitted_C = max(r.ratio for r in rep.runs)
    if len(cfg.N_list) > 1 and all(m > 0 for m in meds):
        rep.trend_slope = float(np.polyfit(np.log(cfg.N_list), np.log(meds), 1)[0])
    decreasing = all(b < a for a, b in zip(meds, meds[1:]))
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else (1.0 if max(ratios) == 0 else math.inf)
    rep.add("median sup_t W1 strictly decreasing in N", decreasing, rep.trend_slope,
            "medians " + ", ".join(f"{m:.4g}" for m in meds))
    rep.add("ratio sup W1 / max(W1_0, sqrt W1_0) stable within x2", spread <= 2.0, spread, "<= 2")
    rep.data.update({"checkpoint_times": [float(k * cfg.h) for k in ck], "reference": ref.provenance,
                     "reference_resolution": ref.resolution, "estimated_cost": cost})
    rep.provenance = provenance(cfg, started)
    return rep


# ---------------------------------------------------- intermediate dynamics


def delta_trend(f0: DensitySpec, kernel: km.KernelSpec, N_list=(64, 128, 256), N_ref=4096, T=1.0,
                h=0.01, seeds=range(10), ref_seed=0) -> Report:
    """delta(T) between intermediate and plain dynamics, candidates drawn as
    subsamples of the reference's initial ensemble."""
    started = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = reference_solution(f0, N_ref, kernel, T, IntegratorConfig(h=h, track_crossings=False), seed=ref_seed)
    x0, v0 = ref.trajectory.positions[0], ref.trajectory.velocities[0]
    rep = Report("delta_trend")
    med = {}
    for N in N_list:
        finals = []
        for s in seeds:
            idx = np.random.default_rng(s).choice(N_ref, N, replace=False)
            res = intermediate_dynamics(ref, Ensemble(x0[idx], v0[idx]), kernel, T, IntegratorConfig(h=h))
            finals.append(float(res.delta.delta[-1]))
        med[N] = float(np.median(finals))
    vals = [med[N] for N in N_list]
    rep.add("median delta(T) decreasing in N", all(b < a for a, b in zip(vals, vals[1:])), vals[-1],
            "medians " + ", ".join(f"{m:.4g}" for m in vals))
    rep.data["median_delta"] = med
    rep.provenance = provenance(None, started)
    return rep


def run_simulate(cfg: ExperimentConfig):
    """Integrate one ensemble; returns (report, trajectory)."""
    started = time.perf_counter()
    if cfg.ensemble is not None:
        ens = Ensemble.from_dict(cfg.ensemble)
    elif "csv" in cfg.params:
        from .ensemble import read_csv
        try:
            ens = read_csv(cfg.params["csv"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read ensemble CSV: {exc}") from exc
    elif cfg.density is not None:
        if not cfg.N_list:
            raise ConfigError("sampling an ensemble needs N_list=[N]")
        ens = sample(cfg.density_spec(), cfg.N_list[0], cfg.param("strategy", "stratified"), cfg.seeds[0])
    else:
        raise ConfigError("simulate needs an ensemble, params.csv, or a density")
    icfg = IntegratorConfig(h=cfg.h, scheme=cfg.param("scheme", "rk4"), direction=int(cfg.param("direction", 1)))
    traj = integrate(ens, cfg.kernel, cfg.T, icfg)
    rep = Report("simulate")
    speeds = traj.max_speed()
    rv = speeds[0]
    rx = float(traj.max_radius()[0])
    rep.add("max speed non-increasing", np.max(speeds - rv) <= 1e-9, float(np.max(speeds - rv)), "<= 1e-9")
    rep.add("support within R_x + t R_v", np.max(traj.max_radius() - rx - np.abs(traj.times) * rv) <= 1e-9)
    div = divergence(ens, cfg.kernel)
    rep.data.update({"times": traj.times, "max_speed": speeds, "crossing_count": traj.crossing_count,
                     "singular_stages": traj.n_singular_stages,
                     "divergence": {"value": div.value, "predicted": div.predicted, "degenerate": div.degenerate}})
    rep.provenance = provenance(cfg, started)
    return rep, traj
