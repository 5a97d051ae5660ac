import numpy as np
import pytest
from hypothesis import given, strategies as st

from topoflock import kernel as km


def trapezoid_oracle(spec, n=200_001):
    """Composite trapezoid rule on a fine uniform grid."""
    m = np.linspace(0.0, 1.0, n)
    return float(np.trapezoid(np.interp(m, spec._m, spec._k), m))


def test_golden_values():
    K = km.golden()
    assert K(2 / 3) == pytest.approx(3.0, abs=1e-14)
    assert K(1.0) == 0.0
    assert K.k0 == 9.0
    assert K.lipschitz_constant == 9.0


def test_constant_kernel():
    K = km.constant(2.5)
    assert all(km.eval_K(K, m) == 2.5 for m in (0.0, 0.3, 1.0))
    assert km.gamma(K) == 2.5


@pytest.mark.parametrize("m", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_domain_error(m):
    with pytest.raises(km.KernelError):
        km.eval_K(km.golden(), m)


def test_gamma_golden_against_quadrature():
    assert km.gamma(km.golden()) == 4.5
    assert abs(trapezoid_oracle(km.golden()) - 4.5) < 1e-10


def test_gamma_multi_piece_is_sum_of_trapezoids():
    K = km.KernelSpec(((0.0, 4.0), (0.25, 3.0), (0.5, 3.0), (1.0, 0.5)))
    areas = 0.25 * 3.5 + 0.25 * 3.0 + 0.5 * 1.75
    assert km.gamma(K) == pytest.approx(areas, abs=1e-15)
    assert abs(trapezoid_oracle(K) - areas) < 1e-9


def test_gamma_N_examples():
    assert km.gamma_N(km.golden(), 3) == pytest.approx(1.0, abs=1e-15)
    for N in (2, 7, 100):
        assert km.gamma_N(km.constant(1.0), N) == pytest.approx((N - 1) / N, rel=1e-14)
    gaps = [abs(km.gamma_N(km.golden(), N) - 4.5) for N in (10, 100, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.parametrize("N", [0, 1, 2.5])
def test_gamma_N_domain(N):
    with pytest.raises(km.KernelError):
        km.gamma_N(km.golden(), N)


@pytest.mark.parametrize("bp", [
    ((0.0, 1.0),),
    ((0.1, 1.0), (1.0, 0.0)),
    ((0.0, 1.0), (0.9, 0.5)),
    ((0.0, 1.0), (0.5, 2.0), (1.0, 0.0)),
    ((0.0, 1.0), (1.0, -0.5)),
    ((0.0, 1.0), (0.5, 0.8), (0.5, 0.7), (1.0, 0.0)),
])
def test_invalid_kernels_rejected(bp):
    with pytest.raises(km.KernelError):
        km.KernelSpec(bp)


def test_dict_round_trip():
    K = km.KernelSpec(((0.0, 4.0), (0.3, 1.0), (1.0, 0.0)))
    assert km.KernelSpec.from_dict(K.to_dict()) == K
    assert km.KernelSpec.from_dict({"type": "constant", "value": 3}) == km.constant(3.0)
    with pytest.raises(km.KernelError):
        km.KernelSpec.from_dict({"type": "gaussian"})
    assert hash(K) == hash(km.KernelSpec.from_dict(K.to_dict()))


kernels = st.integers(0, 2**32 - 1).map(lambda s: km.random_kernel(np.random.default_rng(s)))


@given(kernels, st.integers(2, 500))
def test_riemann_sandwich(K, N):
    left = km.gamma_N(K, N)
    full = float(np.sum(km.rank_weights(K, N)[1:])) / N
    assert left <= full + 1e-12
    assert full <= km.gamma(K) + K.k0 / N + 1e-12


@given(kernels, st.integers(0, 2**32 - 1))
def test_monotone_and_lipschitz(K, seed):
    rng = np.random.default_rng(seed)
    a, b = np.sort(rng.uniform(0, 1, (2, 1000)), axis=0)
    Ka, Kb = km.eval_K(K, a), km.eval_K(K, b)
    assert np.all(Ka >= Kb)
    assert np.all(Ka >= 0)
    assert np.all(np.abs(Ka - Kb) <= K.lipschitz_constant * (b - a) + 1e-12)
