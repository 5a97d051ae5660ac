import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from topoflock import kernel as km
from topoflock import meanfield as mf
from topoflock import metrics as mt
from topoflock.dynamics import IntegratorConfig, divergence, rhs
from topoflock.ensemble import Ensemble

K9 = km.golden()
CATALOG = [mf.uniform_box(1), mf.uniform_box(2, 2.0, 0.5), mf.truncated_gaussian(1), mf.truncated_gaussian(2),
           mf.two_bump(1), mf.two_bump(1, separation=4.0)]


@pytest.mark.parametrize("f0", CATALOG)
@pytest.mark.parametrize("strategy", ["iid", "stratified"])
def test_samples_inside_support(f0, strategy):
    e = mf.sample(f0, 500, strategy, seed=3)
    lo, hi = f0.box
    z = np.hstack([e.positions, e.velocities])
    assert np.all(z >= lo) and np.all(z <= hi)
    assert np.all(np.linalg.norm(e.positions, axis=1) <= f0.R_x + 1e-12)
    assert np.all(np.linalg.norm(e.velocities, axis=1) <= f0.R_v + 1e-12)


@pytest.mark.parametrize("f0", [f for f in CATALOG if f.dim == 1])
def test_density_bounded_and_normalized(f0):
    lo, hi = f0.box
    xs = np.linspace(lo[0] - 0.5, hi[0] + 0.5, 801)
    vs = np.linspace(lo[1] - 0.5, hi[1] + 0.5, 801)
    X, V = np.meshgrid(xs, vs, indexing="ij")
    p = f0(X.reshape(-1, 1), V.reshape(-1, 1)).reshape(X.shape)
    assert np.all(p >= 0) and np.max(p) <= f0.sup_norm * (1 + 1e-12)
    outside = (X < lo[0]) | (X > hi[0]) | (V < lo[1]) | (V > hi[1])
    assert np.all(p[outside] == 0)
    mass = np.trapezoid(np.trapezoid(p, vs, axis=1), xs)
    assert mass == pytest.approx(1.0, abs=5e-3)


def test_sup_norm_values():
    assert mf.uniform_box(1).sup_norm == 0.25
    assert mf.uniform_box(2).sup_norm == 1 / 16
    far = mf.two_bump(1, separation=4.0)
    near = mf.two_bump(1, separation=1.0)
    single = far.law.components[0].sup_norm
    assert far.sup_norm == pytest.approx(0.5 * single)
    assert near.sup_norm == pytest.approx(single)


def test_sampling_deterministic():
    f0 = mf.truncated_gaussian(2)
    for strategy in ("iid", "stratified"):
        a, b = mf.sample(f0, 300, strategy, 9), mf.sample(f0, 300, strategy, 9)
        assert np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)
        c = mf.sample(f0, 300, strategy, 10)
        assert not np.array_equal(a.positions, c.positions)


def test_sampler_errors():
    with pytest.raises(mf.SamplerError):
        mf.sample(mf.uniform_box(1), 0)
    with pytest.raises(mf.SamplerError):
        mf.sample(mf.uniform_box(1), 10, "sobol")


@given(st.integers(1, 5000), st.integers(1, 4))
def test_stratified_one_point_per_cell(N, D):
    u = mf.stratified_unit(N, D, np.random.default_rng(N))
    m = mf._balanced_factors(N, D)
    assert int(np.prod(m)) == N and max(m) <= N
    cells = np.floor(u * np.array(m)).astype(int)
    assert len({tuple(c) for c in cells}) == N


def test_stratified_beats_iid():
    f0 = mf.uniform_box(1)
    N = 1024
    wins = 0
    for s in range(20):
        ref = mt.EmpiricalMeasure.phase(mf.sample(f0, 4 * N, "stratified", 1000 + s))
        w = [mt.wasserstein1_weighted(ref, mt.EmpiricalMeasure.phase(mf.sample(f0, N, k, s)))
             for k in ("stratified", "iid")]
        wins += w[0] < w[1]
    assert wins >= 16


def test_density_dict_round_trip():
    for f0 in CATALOG:
        g = mf.DensitySpec.from_dict(f0.to_dict())
        assert g.to_dict() == f0.to_dict()
        assert g.sup_norm == f0.sup_norm
    with pytest.raises(mf.ConfigurationError):
        mf.DensitySpec.from_dict({"type": "cauchy"})


def test_spatial_ball_mass():
    f0 = mf.uniform_box(1)
    assert f0.spatial_ball_mass([0.0], 0.5) == pytest.approx(0.5)
    assert f0.spatial_ball_mass([0.9], 0.5) == pytest.approx(0.3)
    f2 = mf.uniform_box(2)
    r = np.array([0.3, 0.8])
    assert np.allclose(f2.spatial_ball_mass([0.0, 0.0], r), np.pi * r**2 / 4, atol=5e-3)


# ---- interaction field


def test_field_single_atom():
    phase = mt.EmpiricalMeasure([[1.0, 2.0]])
    spatial = mt.EmpiricalMeasure([[0.0], [1.0], [3.0]])
    W = mf.field_W(spatial, phase, [0.5], [0.5], K9)
    # ball of radius 0.5 around 0.5 holds 2 of the 3 spatial atoms
    assert W == pytest.approx(K9(2 / 3) * 1.5)


@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(1, 3))
def test_field_matches_rhs(seed, N, d):
    rng = np.random.default_rng(seed)
    e = Ensemble(rng.normal(size=(N, d)), rng.normal(size=(N, d)))
    K = km.random_kernel(rng)
    _, dv = rhs(e, K)
    sp, ph = mt.EmpiricalMeasure.spatial(e), mt.EmpiricalMeasure.phase(e)
    W = np.array([mf.field_W(sp, ph, e.positions[i], e.velocities[i], K) for i in range(N)])
    assert np.max(np.abs(W - dv)) <= 1e-14 * max(1.0, np.max(np.abs(dv)))


def test_field_constant_kernel_zero_at_mean():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 1))
    w = rng.normal(size=(10, 1))
    phase = mt.EmpiricalMeasure(np.vstack([np.hstack([x, w]), np.hstack([x, -w])]))
    W = mf.field_W(mt.EmpiricalMeasure(x), phase, [0.3], [0.0], km.constant(2.0))
    assert abs(W[0]) < 1e-15


def test_field_with_density_spatial():
    f0 = mf.uniform_box(1)
    phase = mt.EmpiricalMeasure([[0.5, 1.0], [-0.5, -1.0]])
    W = mf.field_W(f0, phase, [0.0], [0.0], K9)
    # each atom sits at distance 0.5: ball mass 1/2 under the uniform law
    assert W == pytest.approx(0.5 * (K9(0.5) * 1.0 + K9(0.5) * -1.0))


def test_field_dimension_check():
    with pytest.raises(ValueError):
        mf.field_W(mt.EmpiricalMeasure([[0.0]]), mt.EmpiricalMeasure([[0.0, 0.0, 0.0]]), [0.0], [0.0], K9)


# ---- reference runs and intermediate dynamics


@pytest.fixture(scope="module")
def small_ref():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return mf.reference_solution(mf.uniform_box(1), 1024, K9, 1.0, IntegratorConfig(h=0.02))


def test_reference_invariants(small_ref):
    f0 = mf.uniform_box(1)
    tr = small_ref.trajectory
    assert np.all(tr.max_speed() <= f0.R_v + 1e-9)
    assert np.all(tr.max_radius() <= f0.R_x + tr.times * f0.R_v + 1e-9)
    assert small_ref.N_ref == 1024 and small_ref.provenance["strategy"] == "stratified"
    assert small_ref.resolution["w1_phase"] > 0 and small_ref.resolution["w1_spatial"] > 0


def test_reference_concentrated_density():
    tiny = mf.DensitySpec.from_dict({"type": "uniform_box", "dim": 1, "half_x": 1e-6, "half_v": 1e-6})
    ref = mf.reference_solution(tiny, 256, K9, 0.5, IntegratorConfig(h=0.05))
    assert np.ptp(ref.trajectory.positions[-1]) < 1e-5
    assert np.max(np.abs(ref.trajectory.velocities)) <= 1e-6


def test_reference_budget():
    with pytest.raises(mf.ConfigurationError):
        mf.reference_solution(mf.uniform_box(1), 10_000, K9, 1.0)


def test_intermediate_constant_kernel(small_ref):
    e = mf.sample(mf.uniform_box(1), 64, "iid", 5)
    res = mf.intermediate_dynamics(small_ref, e, km.constant(1.5), 1.0, IntegratorConfig(h=0.02))
    assert res.delta.delta[0] == 0.0
    assert np.max(res.delta.delta) <= 1e-8


def test_intermediate_golden_kernel(small_ref):
    x0, v0 = small_ref.trajectory.positions[0], small_ref.trajectory.velocities[0]
    idx = np.random.default_rng(0).choice(1024, 32, replace=False)
    res = mf.intermediate_dynamics(small_ref, Ensemble(x0[idx], v0[idx]), K9, 1.0, IntegratorConfig(h=0.04))
    assert res.delta.delta[0] == 0.0
    assert 0 < res.delta.delta[-1] < 1.0
    assert len(res.nu) == len(res.plain) == 26


def test_intermediate_preconditions(small_ref):
    e = mf.sample(mf.uniform_box(1), 128, "iid", 5)
    with pytest.raises(mf.ConfigurationError):
        mf.intermediate_dynamics(small_ref, e, K9, 1.0, IntegratorConfig(h=0.02))
    e = mf.sample(mf.uniform_box(1), 16, "iid", 5)
    with pytest.raises(mf.ConfigurationError):
        mf.intermediate_dynamics(small_ref, e, K9, 1.0, IntegratorConfig(h=0.03))
    with pytest.raises(mf.ConfigurationError):
        mf.intermediate_dynamics(small_ref, e, K9, 2.0, IntegratorConfig(h=0.02))


def test_intermediate_in_two_dimensions():
    f0 = mf.uniform_box(2)
    ref = mf.reference_solution(f0, 256, km.constant(1.0), 0.2, IntegratorConfig(h=0.05))
    res = mf.intermediate_dynamics(ref, mf.sample(f0, 16, "iid", 1), km.constant(1.0), 0.2, IntegratorConfig(h=0.05))
    assert np.max(res.delta.delta) <= 1e-8


# ---- volume rates


@pytest.mark.parametrize("N_ref", [256, 1024, 8192])
def test_gamma_N_close_to_gamma(N_ref):
    assert abs(km.gamma_N(K9, N_ref) - km.gamma(K9)) <= 2 * K9.k0 / N_ref


def test_full_system_rate_matches_gamma_N():
    e = mf.sample(mf.uniform_box(1), 1024, "stratified", 0)
    rate = divergence(e, K9).value
    assert abs(rate - (-1 * 1024 * km.gamma_N(K9, 1024))) <= 1e-3


def test_agent_block_rate():
    e = mf.sample(mf.uniform_box(1), 64, "stratified", 0)
    rates = [mf.agent_block_log_det(e, i, K9, 0.05, IntegratorConfig(h=1e-3)) / 0.05 for i in (0, 1, 2)]
    assert np.median(rates) == pytest.approx(-km.gamma_N(K9, 64), rel=0.03)


def test_support_radius():
    f0 = mf.uniform_box(2)
    assert mf.support_radius(f0, 0.5) == (pytest.approx(np.sqrt(2) * 1.5), pytest.approx(np.sqrt(2)))
