import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import step_path
from nplab.trajectory_core import (
    PartitionSequence,
    dyadic_grid,
    jumps,
    left_limit,
    make_trajectory,
    quadratic_variation,
    read_csv,
    write_csv,
)
from nplab.trajectory_models import gen_brownian_z, gen_poisson_exp, PoissonExpParams


def test_constant_path():
    x = make_trajectory([0, 0.5, 1], [100, 100, 100])
    assert not x.has_jumps()
    assert left_limit(x, 0.5) == 100 and left_limit(x, 1.0) == 100
    assert jumps(x) == []
    assert quadratic_variation(x, 1).total == 0


def test_nonpositive_values_rejected():
    with pytest.raises(ValueError):
        make_trajectory([0, 0.5, 1], [100, 0, 100])


@pytest.mark.parametrize(
    "grid, values, marks",
    [
        ([0, 0.3, 1], [1, 1, 1], ()),
        ([0, 0.5, 1], [1, np.nan, 1], ()),
        ([0, 0.5, 1], [1, 1, 1], [(1, 1.0)]),
        ([0, 0.5, 1], [1, 2, 2], [(0, 1.0)]),
        ([0, 0.5, 1], [1, 2, 2], [(1, 1.0), (1, 1.0)]),
        ([0, 0.25, 0.5, 1], [1, 1, 1, 1], ()),
    ],
)
def test_invalid_inputs(grid, values, marks):
    with pytest.raises(ValueError):
        make_trajectory(grid, values, marks)


def test_single_jump(single_jump):
    assert jumps(single_jump) == [(0.5, 10.0, 100.0)]
    assert left_limit(single_jump, 0.5) == 100
    assert left_limit(single_jump, 1.0) == 110


def test_poisson_exp_jump_listing():
    x = gen_poisson_exp(PoissonExpParams(100, 0.1, -0.2), [0.25, 0.5, 0.75], 4)
    assert [j[0] for j in jumps(x)] == [0.25, 0.5, 0.75]


def test_pure_jump_qv(two_jumps):
    qv = quadratic_variation(two_jumps, 2)
    assert qv.total == 125
    assert qv.jump_part == 125
    assert np.all(qv.density == 0)


def test_qv_jump_inside_coarse_step(two_jumps):
    # level 0 has a single step holding both jumps
    qv = quadratic_variation(two_jumps, 0)
    assert qv.total == 125 and qv.continuous[-1] == 0


def test_brownian_qv_single_seed():
    z = gen_brownian_z(16, 0)
    t = dyadic_grid(16)
    x = make_trajectory(t, z, positive=False)
    assert 0.95 <= quadratic_variation(x, 16).total <= 1.05


def test_partition_sequence_nested():
    P = PartitionSequence(1.0, 6)
    for level in range(6):
        assert set(P.points(level)) <= set(P.points(level + 1))
    assert P.mesh(3) == 0.125
    with pytest.raises(ValueError):
        P.points(7)


def test_csv_round_trip(tmp_path, two_jumps):
    write_csv(two_jumps, tmp_path / "x.csv")
    y = read_csv(tmp_path / "x.csv")
    assert np.array_equal(y.values, two_jumps.values)
    assert np.array_equal(y.jump_index, two_jumps.jump_index)
    assert np.array_equal(y.jump_left, two_jumps.jump_left)
    assert np.array_equal(y.times, two_jumps.times)


paths = st.integers(2, 7).flatmap(
    lambda L: st.tuples(
        st.just(L),
        st.lists(st.floats(-0.2, 0.2), min_size=2**L, max_size=2**L),
        st.sets(st.integers(1, 2**L), max_size=4),
        st.lists(st.floats(0.05, 0.3), min_size=4, max_size=4),
    )
)


def _build(data):
    L, steps, jump_at, sizes = data
    logv = np.concatenate(([np.log(100.0)], np.log(100.0) + np.cumsum(steps)))
    v = np.exp(logv)
    marks = []
    for k, a in zip(sorted(jump_at), sizes):
        v[k:] *= 1 + a
        marks.append((k, v[k] / (1 + a)))
    return make_trajectory(dyadic_grid(L), v, marks)


@given(paths)
def test_qv_monotone_and_jump_additive(data):
    x = _build(data)
    for level in range(x.level + 1):
        qv = quadratic_variation(x, level)
        assert np.all(np.diff(qv.cumulative) >= 0)
        assert np.all(np.diff(qv.continuous) >= 0)
        assert qv.jump_part == pytest.approx(float(np.sum(x.jump_sizes() ** 2)), rel=1e-9)


@given(paths)
def test_qv_nested_levels_share_nodes(data):
    x = _build(data)
    fine = quadratic_variation(x, x.level)
    coarse = quadratic_variation(x, x.level - 1)
    assert set(coarse.times) <= set(fine.times)


@given(st.integers(1, 6), st.floats(0.01, 0.99))
def test_left_limit_without_mark_is_previous_node(level, t):
    x = step_path(level=6)
    k = max(1, int(round(t * 64)))
    expected = x.jump_left[0] if k == x.jump_index[0] else x.values[k - 1]
    assert left_limit(x, x.times[k]) == expected
