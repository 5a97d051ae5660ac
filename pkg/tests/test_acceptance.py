"""End-to-end acceptance criteria, one test each, with runtime budgets.

Each test reports a single PASS/FAIL line in the terminal summary. Budgets
are wall-clock seconds measured after the compiled kernels have been warmed.
"""

import time
import warnings

import numpy as np
import pytest

from topoflock import harness as H
from topoflock import kernel as km
from topoflock.dynamics import IntegratorConfig, integrate
from topoflock.ensemble import three_agents
from topoflock.meanfield import intermediate_dynamics, reference_solution, sample, uniform_box

RESULTS = {}


@pytest.fixture(scope="module", autouse=True)
def warm_and_report(pytestconfig):
    integrate(three_agents(0.5), km.golden(), 0.01, IntegratorConfig(h=1e-3))
    rng = np.random.default_rng(0)
    for d in (2, 3):
        integrate(H.random_ensemble(rng, 8, d), km.golden(), 0.01, IntegratorConfig(h=1e-3))
    yield
    tr = pytestconfig.pluginmanager.getplugin("terminalreporter")
    lines = [RESULTS[k] for k in sorted(RESULTS)]
    if tr is not None:
        tr.write_sep("-", "acceptance criteria")
        for line in lines:
            tr.write_line(line)
    else:
        print("\n".join(lines))


def verdict(n, title, ok, elapsed, budget, detail=""):
    timely = elapsed < budget
    passed = bool(ok) and timely
    RESULTS[n] = (f"[{'PASS' if passed else 'FAIL'}] {n}. {title}: {detail} "
                  f"({elapsed:.1f} s, budget {budget:g} s)")
    assert ok, RESULTS[n]
    assert timely, RESULTS[n]


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_1_golden_three_agents():
    rep, dt = timed(H.run_golden)
    errs = [c.value for c in rep.checks if "error" in c.name]
    ok = rep.passed and not rep.invalidated and max(errs) < 1e-6
    verdict(1, "golden three-agent trajectories", ok, dt, 1.0, f"max error {max(errs):.2e}")


def test_2_discontinuity():
    rep, dt = timed(H.run_discontinuity, 1e-6, 1.0, 1e-3)
    sep = rep.data["separation"]
    verdict(2, "discontinuity demo", rep.passed and 0.85 <= sep <= 0.88, dt, 1.0, f"separation {sep:.6f}")


def test_3_speed_and_support_bounds():
    rep = H.Report("invariants")
    _, dt = timed(H.check_speed_support, rep, n_ensembles=200, T=5.0, h=0.01, max_N=64, dims=(1, 2, 3))
    worst = max(c.value for c in rep.checks)
    verdict(3, "speed and support bounds, 200 ensembles", rep.passed, dt, 120.0, f"worst excess {worst:.2e}")


def test_4_divergence_identity():
    rep = H.Report("divergence")
    t0 = time.perf_counter()
    H.check_divergence_identity(rep, n_ensembles=100, rtol=1e-12)
    H.check_volume_rate(rep, t=0.05, h=1e-3, rtol=1e-4)
    dt = time.perf_counter() - t0
    ld = rep.data["log_det"]
    verdict(4, "divergence identity and flow log-det", rep.passed, dt, 30.0,
            f"div rel err {rep.checks[0].value:.1e}, log-det {ld['measured']:.8f} vs {ld['predicted']:g}")


def test_5_metric_properties():
    rep, dt = timed(H.run_metric_props)
    failed = [c.name for c in rep.checks if not c.passed]
    verdict(5, "metric property suite", rep.passed, dt, 60.0,
            f"{len(rep.checks)} checks" + (f", failed: {failed}" if failed else ""))


def test_6_discrepancy_vs_w1_probe():
    cfg = H.ExperimentConfig.parse({"experiment": "dw1_probe", "N_list": [10, 100, 1000, 10000],
                                    "seeds": list(range(20))})
    rep, dt = timed(H.run_dw1_probe, cfg)
    meds = [rep.data["median_C"][N] for N in cfg.N_list]
    verdict(6, "fitted C in D <= C sqrt(W1) non-increasing", rep.passed, dt, 120.0,
            "median C " + ", ".join(f"{m:.4g}" for m in meds))


def test_7_mean_field_convergence():
    cfg = H.ExperimentConfig.parse({
        "experiment": "converge",
        "kernel": km.golden().to_dict(),
        "density": {"type": "uniform_box", "dim": 1},
        "N_list": [128, 256, 512, 1024],
        "N_ref": 8192,
        "T": 1.0,
        "h": 0.02,
        "seeds": [1, 2, 3, 4, 5],
        "params": {"min_ref_ratio": 8, "ref_strategy": "stratified", "strategy": "iid"},
    })
    rep, dt = timed(H.run_convergence, cfg)
    meds = [rep.median_sup[N] for N in cfg.N_list]
    ratios = [rep.median_ratio[N] for N in cfg.N_list]
    decreasing = all(b < a for a, b in zip(meds, meds[1:]))
    spread = max(ratios) / min(ratios)
    verdict(7, "mean-field convergence", decreasing and spread <= 2.0 and rep.passed, dt, 600.0,
            "median sup W1 " + ", ".join(f"{m:.4f}" for m in meds) + f", ratio spread {spread:.3f}")


def test_8_intermediate_dynamics():
    t0 = time.perf_counter()
    f0 = uniform_box(1)
    cfg = IntegratorConfig(h=0.02, track_crossings=False)
    flat = km.constant(4.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = reference_solution(f0, 1024, flat, 1.0, cfg, seed=0)
    worst = 0.0
    for s in range(3):
        res = intermediate_dynamics(ref, sample(f0, 64, "iid", s), flat, 1.0, IntegratorConfig(h=0.02))
        worst = max(worst, float(np.max(res.delta.delta)))
    trend = H.delta_trend(f0, km.golden(), N_list=(64, 128, 256), N_ref=4096, T=1.0, h=0.02, seeds=range(10))
    dt = time.perf_counter() - t0
    meds = [trend.data["median_delta"][N] for N in (64, 128, 256)]
    verdict(8, "intermediate dynamics", worst <= 1e-8 and trend.passed, dt, 180.0,
            f"constant-K delta {worst:.1e}, K9 median delta(T) " + ", ".join(f"{m:.4f}" for m in meds))
