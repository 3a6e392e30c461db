import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import step_path
from splice import random_path, splice
from nplab.stopping_times import (
    StoppingSequence,
    check_np_property,
    constant_time,
    grid_sequence,
    hitting_time_closed,
    jump_count_sequence,
    jump_count_time,
    jump_magnitude_time,
    level_crossing,
    level_ladder,
    min_of,
    parse_stopping_sequence,
    parse_stopping_time,
    sum_capped,
    sup_of,
)
from nplab.trajectory_core import make_trajectory


def flat(level=2):
    return make_trajectory(np.linspace(0, 1, 2**level + 1), np.full(2**level + 1, 100.0))


@pytest.mark.parametrize("c", [0.0, 0.25, 1.0])
def test_constant_time(c):
    assert constant_time(c)(flat()) == c
    assert constant_time(c)(step_path(4)) == c


def test_constant_time_snaps_up():
    assert constant_time(0.3)(flat(2)) == 0.5
    with pytest.raises(ValueError):
        constant_time(1.5)


def test_hitting_times(single_jump):
    assert hitting_time_closed([(100, None)])(single_jump) == 0
    assert hitting_time_closed([(120, None)])(single_jump) == 1.0
    assert hitting_time_closed([(105, None)])(single_jump) == 0.5
    assert hitting_time_closed([(None, 95), (108, 112)])(single_jump) == 0.5
    for a, t in [(100, 0.0), (120, 1.0), (105, 0.5)]:
        assert level_crossing(a)(single_jump) == t
    with pytest.raises(ValueError):
        hitting_time_closed([(2, 1)])


def test_jump_times(single_jump):
    assert jump_magnitude_time(5)(flat()) == 1.0
    assert jump_magnitude_time(5)(single_jump) == 0.5
    assert jump_magnitude_time(15)(single_jump) == 1.0
    assert jump_count_time(1)(flat()) == 1.0
    assert jump_count_time(1)(single_jump) == 0.5
    assert jump_count_time(2)(single_jump) == 1.0
    with pytest.raises(ValueError):
        jump_magnitude_time(0)
    with pytest.raises(ValueError):
        jump_count_time(0)


def test_combinators():
    x = flat(4)
    assert min_of([constant_time(0.3), constant_time(0.7)])(x) == pytest.approx(0.3125)
    assert sum_capped(constant_time(0.625), constant_time(0.625))(x) == 1.0
    assert sup_of([constant_time(c) for c in (0.25, 0.75, 0.5)])(x) == 0.75


def test_ladder(single_jump):
    S = level_ladder([120, 140], 100)
    assert S.count(single_jump) == 1
    assert S.evaluate(single_jump)[1] == 1.0
    S = level_ladder([105, 200], 100)
    assert S.evaluate(single_jump).tolist()[:3] == [0.0, 0.5, 1.0]
    assert S.count(single_jump) == 2
    with pytest.raises(ValueError):
        level_ladder([99, 120], 100)
    with pytest.raises(ValueError):
        level_ladder([120, 110], 100)


def test_grid_sequence_count():
    for x in (flat(4), step_path(4)):
        assert grid_sequence(4).count(x) == 4


def test_jump_count_sequence(two_jumps):
    S = jump_count_sequence(3)
    assert S.evaluate(two_jumps).tolist() == [0.0, 0.25, 0.75, 1.0, 1.0]
    assert S.count(two_jumps) == 3


def test_sequence_checks():
    S = StoppingSequence((constant_time(0.5), constant_time(1.0)))
    with pytest.raises(ValueError):
        S.indices(flat())
    S = StoppingSequence((constant_time(0.0), constant_time(0.5)))
    with pytest.raises(ValueError):
        S.indices(flat())


def test_parser(single_jump):
    tau = parse_stopping_time("min(level(105), const(0.75))")
    assert tau(single_jump) == 0.5
    assert parse_stopping_time("sum(const(0.5), jumpcount(1))")(single_jump) == 1.0
    assert parse_stopping_time("hit([108, 112], [None, 50])")(single_jump) == 0.5
    assert parse_stopping_time("sup(jump(5), const(0.25))")(single_jump) == 0.5
    S = parse_stopping_sequence("ladder(105,120,140)", x0=100)
    assert S.count(single_jump) == 2
    assert parse_stopping_sequence("jumpcount(2)").evaluate(single_jump).tolist() == [0.0, 1.0, 1.0]
    assert len(parse_stopping_sequence("grid(4)")) == 5
    assert parse_stopping_time("const(1.5)", horizon=2.0).label == "const(1.5)"
    for bad in ["foo(1)", "level", "ladder(105)", "1 + 2"]:
        with pytest.raises(ValueError):
            parse_stopping_sequence(bad)


def test_np_property_examples(single_jump):
    x = step_path(6)
    assert check_np_property(level_crossing(105), x, x) == "pass"
    rng = np.random.default_rng(0)
    y = splice(x, 32, rng)
    assert check_np_property(constant_time(0.5), x, y) == "pass"
    assert check_np_property(level_crossing(105), x, y) == "pass"
    assert check_np_property(constant_time(1.0), x, y) in ("pass", "not-applicable")


CATALOGUE = [
    constant_time(0.5),
    level_crossing(103),
    hitting_time_closed([(None, 97), (104, 106)]),
    jump_magnitude_time(5),
    jump_count_time(2),
    sum_capped(level_crossing(102), constant_time(0.25)),
    min_of([level_crossing(104), jump_count_time(1)]),
    sup_of([level_crossing(101), jump_magnitude_time(3), constant_time(0.125)]),
]


@given(st.integers(0, 2**32 - 1), st.sampled_from(range(len(CATALOGUE))), st.integers(0, 8))
def test_np_property_fuzz(seed, which, extra):
    rng = np.random.default_rng(seed)
    tau = CATALOGUE[which]
    x = random_path(rng)
    k = min(tau.index(x) + extra, x.n_steps)
    y = splice(x, k, rng)
    assert check_np_property(tau, x, y) == "pass"


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(100.5, 130), min_size=1, max_size=5, unique=True))
def test_ladder_monotone(seed, levels):
    x = random_path(np.random.default_rng(seed))
    S = level_ladder(sorted(levels), x.x0)
    t = S.evaluate(x)
    assert np.all(np.diff(t) >= 0)
    assert t[-1] == x.horizon
    M = S.count(x)
    assert np.all(t[:M] < x.horizon)
