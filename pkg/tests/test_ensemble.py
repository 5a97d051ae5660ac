import numpy as np
import pytest
from hypothesis import given, strategies as st

from topoflock.ensemble import (
    BACKWARD,
    FORWARD,
    ConfigKind,
    Ensemble,
    classify,
    count_M,
    rank_table,
    read_csv,
    three_agents,
    write_csv,
)


def test_ensemble_validation():
    e = Ensemble([0.0, 1.0], [2.0, 3.0])
    assert e.N == 2 and e.dim == 1 and e.positions.shape == (2, 1)
    with pytest.raises(ValueError):
        Ensemble([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        Ensemble([0.0, np.inf], [1.0, 1.0])
    with pytest.raises(ValueError):
        e.positions[0, 0] = 5.0


def test_state_round_trip():
    rng = np.random.default_rng(0)
    e = Ensemble(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    f = Ensemble.from_state(e.state(), 5, 3)
    assert np.array_equal(e.positions, f.positions) and np.array_equal(e.velocities, f.velocities)
    g = Ensemble.from_dict(e.to_dict())
    assert np.array_equal(g.velocities, e.velocities)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    e = Ensemble(rng.normal(size=(7, 2)), rng.normal(size=(7, 2)))
    write_csv(e, tmp_path / "e.csv")
    header = (tmp_path / "e.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "agent_id,x_1,x_2,v_1,v_2"
    f = read_csv(tmp_path / "e.csv")
    assert np.array_equal(e.positions, f.positions) and np.array_equal(e.velocities, f.velocities)


def test_count_M_examples():
    x = three_agents(0.5).positions
    assert count_M(x, [-1.0], 1.5) == pytest.approx(2 / 3)
    assert count_M(x, [-1.0], 0.0) == pytest.approx(1 / 3)
    assert count_M(x, [0.0], 10.0) == 1.0
    with pytest.raises(ValueError):
        count_M(x, [0.0], -1.0)


def test_count_M_is_closed_ball():
    assert count_M(np.array([0.0, 1.0]), [0.0], 1.0) == 1.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 3))
def test_count_M_step_cdf(seed, N, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(N, d))
    c = x[rng.integers(N)]
    radii = np.sort(np.linalg.norm(x - c, axis=1))
    vals = [count_M(x, c, r) for r in radii]
    assert all(np.isclose(v * N, round(v * N)) for v in vals)
    assert np.all(np.diff(vals) >= 0)
    assert vals[-1] == 1.0
    # right-continuity: value at r equals the limit from above
    for r, v in zip(radii, vals):
        assert count_M(x, c, r * (1 + 1e-12) + 1e-300) == v


def test_rank_table_three_agents():
    rt = rank_table(three_agents(0.5), 1)
    assert list(rt.order) == [1, 2, 0]
    assert np.allclose(rt.rank_args, [1.0, 1 / 3, 2 / 3])
    assert not rt.tied.any()


def test_iso_rank_tie_broken_by_radial_velocity():
    e = three_agents(0.0, velocities=(-1.0, 0.0, 2.0))
    fwd = rank_table(e, 1, FORWARD)
    assert list(fwd.order) == [1, 0, 2]
    assert fwd.tied[0] and fwd.tied[2] and not fwd.unresolved.any()
    bwd = rank_table(e, 1, BACKWARD)
    assert list(bwd.order) == [1, 2, 0]


def test_residual_tie_broken_by_index():
    rt = rank_table(three_agents(0.0), 1)
    assert list(rt.order) == [1, 0, 2]
    assert rt.unresolved[0] and rt.unresolved[2]


def test_two_agents():
    e = Ensemble([0.0, 3.0], [0.0, 1.0])
    for i in range(2):
        rt = rank_table(e, i)
        assert rt.rank_args[1 - i] == 1.0


@given(st.integers(0, 2**32 - 1), st.integers(2, 25), st.integers(1, 3))
def test_regular_rank_permutation(seed, N, d):
    rng = np.random.default_rng(seed)
    e = Ensemble(rng.normal(size=(N, d)), rng.normal(size=(N, d)))
    assert classify(e).kind is ConfigKind.REGULAR
    for i in range(N):
        f, b = rank_table(e, i, FORWARD), rank_table(e, i, BACKWARD)
        others = np.delete(f.ranks, i)
        assert sorted(others) == list(range(2, N + 1))
        assert f.ranks[i] == 1
        assert np.array_equal(f.order, b.order)


def test_classify_examples():
    assert classify(three_agents(0.5)).kind is ConfigKind.REGULAR
    sing = classify(three_agents(0.0))
    assert sing.kind is ConfigKind.SINGULAR and (0, 2, 1) in sing.singular_triads
    iso = classify(three_agents(0.0, velocities=(-1.0, 0.0, 2.0)))
    assert iso.kind is ConfigKind.ISO_RANK_REGULAR and (0, 2, 1) in iso.triads
    assert str(iso) == "IsoRankRegular"


def test_classify_coincident_points_singular():
    e = Ensemble([0.0, 0.0, 1.0], [0.0, 1.0, 2.0])
    assert classify(e).kind is ConfigKind.SINGULAR


def test_classify_tolerance():
    e = three_agents(1e-14, velocities=(-1.0, 0.0, 1.0))
    assert classify(e, tol=0.0).kind is ConfigKind.REGULAR
    assert classify(e, tol=1e-12).kind is ConfigKind.SINGULAR
    with pytest.raises(ValueError):
        classify(e, tol=-1.0)
