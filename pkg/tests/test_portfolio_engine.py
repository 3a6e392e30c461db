import numpy as np
import pytest
from hypothesis import given, strategies as st

from splice import random_path
from nplab.arbitrage_lab import NeighborhoodRecipe
from nplab.metrics import WarpFunction, qv_distance, skorokhod_distance, uniform_distance, warp_cost
from nplab.pathwise_integration import ito_follmer_decomposition, square_field
from nplab.portfolio_engine import (
    AtStop,
    Constant,
    MaxOf,
    MinOf,
    RebalancedPortfolio,
    SimplePortfolio,
    buy_and_hold,
    check_admissible,
    check_self_financing,
    half_time_portfolio,
    portfolio_value,
    v_continuity_probe,
    value_rebalanced,
    value_simple,
)
from nplab.stopping_times import grid_sequence, level_ladder, parse_stopping_sequence
from nplab.trajectory_core import make_trajectory
from nplab.trajectory_models import (
    FactorSet,
    HestonTypeParams,
    JumpDiffusionClassParams,
    PoissonExpParams,
    gen_brownian_z,
    gen_jump_diffusion_member,
    gen_poisson_exp,
    sample_heston_type,
)

HESTON = HestonTypeParams(100.0, 0.0, 0.5, 2.0, 0.04, 0.3, 0.01, 0.04)


def member(level=10, seed=0, jumps=()):
    p = JumpDiffusionClassParams(100.0, 0.2, FactorSet(low=-0.3, high=0.3))
    return gen_jump_diffusion_member(p, gen_brownian_z(level, seed), list(jumps))


def sampler(seed):
    return member(8, seed, [(0.5, 0.1)])


def test_zero_holdings():
    x = member()
    vp = value_simple(SimplePortfolio(grid_sequence(3), (0, 0, 0), 7.0), x)
    assert np.all(vp.value == 7.0)


def test_buy_and_hold():
    x = member(jumps=[(0.3, -0.2)])
    assert value_simple(buy_and_hold(), x).terminal == pytest.approx(x.values[-1] - x.values[0], rel=1e-14)


def test_half_time_portfolio():
    x = gen_poisson_exp(PoissonExpParams(100, 0.1, -0.2), [0.5], 10)
    v = value_simple(half_time_portfolio(), x).terminal
    assert v == pytest.approx(x.value_at(0.5) - 100, rel=1e-14)
    assert v == pytest.approx(84.10168771008192 - 100, rel=1e-12)


def test_holdings_forms():
    x = member(jumps=[(0.5, 0.2)])
    S = grid_sequence(2)
    at = AtStop(lambda y: 100.0 / y, "inverse")
    P = SimplePortfolio(S, (MinOf((Constant(1.0), at)), MaxOf((Constant(0.5), at))))
    _, phis = P.positions(x)
    assert phis[0] == 1.0
    assert phis[1] == max(0.5, 100.0 / x.value_at(0.5))
    with pytest.raises(ValueError):
        SimplePortfolio(S, (1.0,))
    with pytest.raises(TypeError):
        SimplePortfolio(S, ("a", 1.0))


def test_accounting_identity_on_jump_path():
    x = member(jumps=[(0.25, 0.2), (0.625, -0.1)])
    P = SimplePortfolio(level_ladder([105, 115], 100), (1.0, AtStop(lambda y: 2 - y / 100), -0.5))
    vp = value_simple(P, x)
    assert vp.accounting_gap() <= 1e-12 * np.max(np.abs(vp.value)) + 1e-12


def test_rebalanced_constant():
    x = member(jumps=[(0.5, 0.1)])
    c = lambda t, y: np.full_like(y, 2.5)  # noqa: E731
    P = RebalancedPortfolio(grid_sequence(1), (c,), 3.0)
    vp = value_rebalanced(P, x, 6)
    assert vp.terminal == pytest.approx(3.0 + 2.5 * (x.values[-1] - x.values[0]), rel=1e-14)


def test_rebalanced_price_delta_matches_decomposition():
    x = member(16, seed=2)
    P = RebalancedPortfolio(grid_sequence(1), (lambda t, y: y,), 0.0, (square_field(),))
    vp = value_rebalanced(P, x, 14)
    rep = ito_follmer_decomposition(square_field(), x, 0.0, 1.0, 14)
    assert abs(vp.terminal - rep.u) <= 1e-2 * rep.scale
    sf = check_self_financing(P, x, 14)
    assert sf.max_residual == 0
    assert sf.decomposition_relative <= 1e-2


def test_rebalanced_switches_at_crossing():
    x = member(10, seed=5)
    K = 100 + 0.5 * (x.values.max() - 100)
    S = level_ladder([K], 100)
    P = RebalancedPortfolio(S, (lambda t, y: np.ones_like(y), lambda t, y: -np.ones_like(y)), 0.0)
    vp = value_rebalanced(P, x, 10)
    k = S.indices(x)[1]
    j = int(np.flatnonzero(vp.times == x.times[k])[0])
    assert np.all(vp.holdings[1: j + 1] == 1) and np.all(vp.holdings[j + 1:] == -1)


def test_self_financing_simple():
    x = member(jumps=[(0.5, 0.2)])
    P = SimplePortfolio(parse_stopping_sequence("ladder(103,110)", x0=100), (1.0, 2.0, -1.0))
    assert check_self_financing(P, x).max_residual <= 1e-12


def test_admissibility():
    zero = SimplePortfolio(grid_sequence(1), (0.0,))
    assert check_admissible(zero, sampler, 20, 0.0).passed
    assert check_admissible(buy_and_hold(), sampler, 20, 100.0).passed
    short = buy_and_hold(-1.0)
    verdict = check_admissible(short, sampler, 20, 0.0)
    first = next(s for s in range(20) if np.any(value_simple(short, sampler(s)).value < 0))
    assert not verdict.passed and verdict.seed == first
    with pytest.raises(ValueError):
        check_admissible(zero, sampler, 5, -1.0)


def test_probe_constant_portfolio():
    x = member(8, 1)
    P = buy_and_hold(3.0)

    def seq(n):
        return make_trajectory(x.times, x.values * (1 + 0.01 * 2.0**-n * x.times))

    rep = v_continuity_probe(P, x, seq, uniform_distance, 10)
    assert rep.passed
    terminal_gaps = [abs(seq(n).values[-1] - x.values[-1]) for n in range(10)]
    assert np.allclose(rep.gaps, 3.0 * np.array(terminal_gaps), rtol=1e-9)


def _jump_warp_distance(a, b):
    """Skorokhod upper bound from the warp sending the jump of ``a`` onto that of ``b``."""
    sa, sb = a.times[a.jump_index[0]], b.times[b.jump_index[0]]
    return max(warp_cost(a, b, WarpFunction(np.array([0, sa, 1.0]), np.array([0, sb, 1.0]))))


def _half_time_pair():
    x = gen_poisson_exp(PoissonExpParams(100, 0.1, -0.2), [0.5], 10)
    k = x.jump_index[0]

    def shared(n):
        # same x(1/2), perturbed left limit at 1/2
        f = np.where(np.arange(x.values.size) < k, 1 + 0.01 * 2.0**-n * x.times / 0.5, 1.0)
        return make_trajectory(x.times, x.values * f, [(k, x.jump_left[0] * (1 + 0.01 * 2.0**-n))])

    def sliding(n):
        return gen_poisson_exp(PoissonExpParams(100, 0.1, -0.2), [0.5 + 2.0 ** -(n + 3)], 10)

    return x, shared, sliding


def test_probe_half_time_local_continuity():
    x, shared, sliding = _half_time_pair()
    P = half_time_portfolio()
    ok = v_continuity_probe(P, x, shared, skorokhod_distance, 8, metric_name="skorokhod")
    assert ok.passed and max(ok.gaps) == 0
    bad = v_continuity_probe(P, x, sliding, _jump_warp_distance, 8, metric_name="skorokhod")
    assert not bad.passed
    assert bad.distances[-1] < bad.distances[0] / 100 and bad.gaps[-1] > 10


def test_probe_ladder_under_qv_recipe():
    x = sample_heston_type(HESTON, 12, 5)
    top = x.values.max()
    S = level_ladder([100 + 0.5 * (top - 100), top + 0.5], 100)
    P = SimplePortfolio(S, (1.0, AtStop(lambda y: 100 / y), 0.0))
    recipe = NeighborhoodRecipe(x, ("U1", "P2"), kind="qv")
    rep = v_continuity_probe(P, x, recipe.term, qv_distance, 10, member=recipe.check)
    assert rep.passed


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-50, 50))
def test_accounting_identity_property(seed, hs, v0):
    x = random_path(np.random.default_rng(seed))
    P = SimplePortfolio(level_ladder([102, 108], x.x0), tuple(hs), v0)
    vp = portfolio_value(P, x)
    scale = max(1.0, np.max(np.abs(vp.value)), np.max(np.abs(vp.bank)))
    assert vp.accounting_gap() <= 1e-12 * scale
    assert check_self_financing(P, x).max_residual <= 1e-12 * scale
