import numpy as np
import pytest
from hypothesis import given, strategies as st

from nplab import arbitrage_lab as lab
from nplab.metrics import uniform_distance
from nplab.portfolio_engine import AtStop, SimplePortfolio, buy_and_hold
from nplab.stopping_times import grid_sequence, level_ladder
from nplab.trajectory_models import (
    FactorSet,
    HestonTypeParams,
    JumpDiffusionClassParams,
    JumpDiffusionProcessParams,
    JumpLaw,
    ModifiedHestonParams,
    YSpec,
    compensated_drift,
    gen_brownian_z,
    gen_jump_diffusion_member,
    sample_heston_type,
    sample_jump_diffusion_process,
    sample_modified_heston,
)

LAW = JumpLaw(values=(-0.1, 0.1), probs=(0.5, 0.5))
PROC = JumpDiffusionProcessParams(100.0, compensated_drift(2.0, LAW), 0.2, 2.0, LAW)
HESTON = HestonTypeParams(100.0, 0.0, 0.5, 2.0, 0.04, 0.3, 0.01, 0.04)


def proc(level=5):
    return lambda s: sample_jump_diffusion_process(PROC, level, s)


def member(level=12, seed=0, jumps=((0.3, 0.1), (0.7, 0.2)), C=FactorSet(low=0.05, high=0.3)):
    return gen_jump_diffusion_member(JumpDiffusionClassParams(100.0, 0.2, C), gen_brownian_z(level, seed), list(jumps))


def test_seeds_and_intervals():
    a = lab.derive_seeds(5, 100)
    assert a == lab.derive_seeds(5, 100) and len(set(a)) == 100
    assert a[:10] == lab.derive_seeds(5, 10)
    lo, hi = lab.clopper_pearson(0, 10)
    assert lo == 0 and hi == pytest.approx(1 - 0.025**0.1, rel=1e-10)
    lo, hi = lab.clopper_pearson(10, 10)
    assert hi == 1 and lo == pytest.approx(0.025**0.1, rel=1e-10)


def test_small_ball_covering_radius():
    sampler = proc()
    target = sampler(123)
    rep = lab.small_ball_estimate(sampler, target, uniform_distance, [1e6], 200)
    assert rep[0].frequency == 1.0


def test_small_ball_calibration_and_negative_control():
    sampler = proc()
    target = gen_jump_diffusion_member(
        JumpDiffusionClassParams(100.0, 0.2, FactorSet(points=(-0.1, 0.1))), np.zeros(33), [(0.5, 0.1)]
    )
    eps = [2.0, 5.0, 10.0, 20.0, 40.0]
    reps = lab.small_ball_estimate(sampler, target, uniform_distance, eps, 10_000, root_seed=1)
    freqs = [r.frequency for r in reps]
    assert freqs == sorted(freqs)
    assert any(0 < f < 0.5 for f in freqs)
    bad = gen_jump_diffusion_member(
        JumpDiffusionClassParams(100.0, 0.2, FactorSet(points=(0.5,))), np.zeros(33), [(0.5, 0.5)]
    )
    reps = lab.small_ball_estimate(sampler, bad, uniform_distance, [5.0], 10_000, root_seed=1)
    assert reps[0].hits == 0


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0.1, 60), min_size=2, max_size=6))
def test_small_ball_monotone(seed, eps):
    sampler = proc(4)
    reps = lab.small_ball_estimate(sampler, sampler(seed), uniform_distance, sorted(eps), 30, seed)
    assert all(a.hits <= b.hits for a, b in zip(reps, reps[1:]))
    assert all(r.ci_low <= r.frequency <= r.ci_high for r in reps)


def test_small_ball_jobs_do_not_change_results():
    sampler = proc(4)
    a = lab.small_ball_estimate(sampler, sampler(0), uniform_distance, [10, 20], 50, 3)
    b = lab.small_ball_estimate(sampler, sampler(0), uniform_distance, [10, 20], 50, 3, jobs=3)
    assert a == b


def test_arb_search_zero_portfolio():
    P = SimplePortfolio(level_ladder([105], 100), (0.0, 0.0))
    v = lab.np_arbitrage_search(P, proc(), 50)
    assert v.outcome == "no-violation-found" and v.min_value == v.max_value == 0
    assert v.n_scanned == 50 * (1 + len(lab.DEFAULT_MUTATORS))


def test_arb_search_finds_loss_and_replays():
    records = []
    v = lab.np_arbitrage_search(buy_and_hold(), proc(), 30, root_seed=4, records=records)
    assert v.outcome == "negative-value-witness"
    w = v.negative_witness
    assert lab.replay_witness(buy_and_hold(), proc(), w) == w.value
    assert len(records) == v.n_scanned
    with pytest.raises(ValueError):
        lab.np_arbitrage_search(buy_and_hold(v0=1.0), proc(), 3)


def test_arb_search_positive_control_without_mutators():
    up = JumpDiffusionProcessParams(100.0, 0.05, 0.0, 2.0, JumpLaw(values=(0.1,), probs=(1.0,)))
    sampler = lambda s: sample_jump_diffusion_process(up, 5, s)  # noqa: E731
    v = lab.np_arbitrage_search(buy_and_hold(), sampler, 20, mutators={})
    assert v.outcome == "profit-witness"
    v = lab.np_arbitrage_search(buy_and_hold(), sampler, 20)
    assert v.outcome == "arbitrage-candidate"
    assert lab.replay_witness(buy_and_hold(), sampler, v.profit_witness) == v.profit_witness.value


def test_mutators_stay_in_class():
    x = proc(6)(9)
    rng = np.random.default_rng(0)
    for name, mut in lab.DEFAULT_MUTATORS.items():
        y = mut(x, rng)
        assert all(x.meta["C"].contains(a) for _, a in y.meta["jumps"]), name
        assert y.values[0] == x.values[0]


TAG_SETS = [("U1",), ("U1", "U2"), ("U1", "U3", "U4", "U5"), ("U6", "U7", "U8"), ("U1", "U3", "U7"), ("U2", "U6")]


@given(st.integers(0, 1000), st.sampled_from(TAG_SETS))
def test_member_recipes_are_sound(seed, tags):
    x = member(10, seed)
    r = lab.NeighborhoodRecipe(x, tags, shift_nodes=32)
    last = np.inf
    for n in range(6):
        y, w = r.term_with_warp(n)
        assert r.check(y, w)
        d = r.distance_bound(y, w)
        assert 0 < d < last * 1.5 + 1e-12
        last = d


@given(st.integers(0, 1000), st.sampled_from([("U1",), ("U1", "P2"), ("U1", "P3"), ("P2",)]))
def test_qv_recipes_are_sound(seed, tags):
    x = sample_heston_type(HESTON, 8, seed)
    r = lab.NeighborhoodRecipe(x, tags, kind="qv")
    for n in range(6):
        assert r.check(r.term(n))


def test_recipe_validation():
    x = member(10)
    with pytest.raises(ValueError):
        lab.NeighborhoodRecipe(x, ("U3", "U6"))
    with pytest.raises(ValueError):
        lab.NeighborhoodRecipe(x, ("P2",))
    with pytest.raises(ValueError):
        lab.NeighborhoodRecipe(x, ("P2",), kind="qv")
    with pytest.raises(ValueError):
        lab.NeighborhoodRecipe(member(10, C=FactorSet(low=0.05, high=0.1), jumps=((0.3, 0.1),)), ("U4",)).term(0)


def test_slc_grid_sequence_passes():
    x = member()
    rep = lab.jointly_slc_test(grid_sequence(4), x, lab.NeighborhoodRecipe(x, ("U1", "U2")), 10)
    assert rep.passed and rep.count_star == 4


def test_slc_ladder_qv_recipe_passes_and_boundary_fails():
    x = sample_heston_type(HESTON, 12, 5)
    top = x.values.max()
    ladder = level_ladder([100 + 0.5 * (top - 100), top + 0.5], 100)
    assert lab.jointly_slc_test(ladder, x, lab.NeighborhoodRecipe(x, ("U1", "P2"), kind="qv"), 10).passed
    edge = level_ladder([top], 100)
    rep = lab.jointly_slc_test(edge, x, lab.NeighborhoodRecipe(x, ("U1", "P3"), kind="qv"), 10)
    assert not rep.item_iii
    with pytest.raises(ValueError):
        lab.jointly_slc_test(edge, x, lab.NeighborhoodRecipe(sample_heston_type(HESTON, 12, 6), ("P2",), kind="qv"))


def test_jump_correspondence():
    flat = sample_heston_type(HESTON, 8, 0)
    jc = lab.jump_correspondence_check([flat] * 3, flat, grid_sequence(4))
    assert jc.counts_star == [0, 0, 0, 0] and jc.lock_index == 0

    x = member()
    r = lab.NeighborhoodRecipe(x, ("U1",))
    seq = [r.term(n) for n in range(10)]
    jc = lab.jump_correspondence_check(seq, x, grid_sequence(4))
    assert jc.counts_star == [0, 1, 1, 0]
    assert jc.locked and jc.lock_index > 0
    assert jc.counts[0] != jc.counts_star

    # a jump that crosses the ladder level stops the sequence at the jump itself
    x = member(seed=0, jumps=((0.5, 0.3),))
    j = x.jump_index[0]
    below = max(np.max(x.values[:j]), x.jump_left[0], 100.0)
    assert x.values[j] > 1.05 * below
    S = level_ladder([0.5 * (below + x.values[j])], 100)
    assert S.indices(x)[1] == j
    seq = [lab.NeighborhoodRecipe(x, ("U1", "U2")).term(n) for n in range(10)]
    jc = lab.jump_correspondence_check(seq, x, S)
    assert jc.counts_star == [1, 0] and jc.locked


def test_transfer_zero_portfolio():
    P = SimplePortfolio(grid_sequence(1), (0.0,))
    rep = lab.transfer_experiment(P, proc(), 200)
    assert rep.mean == 0 and rep.se == 0 and not rep.arbitrage_pattern


def test_transfer_ladder_and_guards():
    P = SimplePortfolio(level_ladder([105, 120], 100), (1.0, AtStop(lambda y: min(1.0, 100 / y)), 0.5))
    values = []
    rep = lab.transfer_experiment(P, proc(), 500, root_seed=2, values=values)
    assert rep.within_3se and len(values) == 500
    assert lab.transfer_experiment(P, proc(), 500, root_seed=2, jobs=2) == rep
    drift = JumpDiffusionProcessParams(100.0, 1.0, 0.2, 2.0, LAW)
    with pytest.raises(ValueError):
        lab.transfer_experiment(P, lambda s: sample_jump_diffusion_process(drift, 5, s), 500)


def test_transfer_modified_heston_pattern_absent():
    p = ModifiedHestonParams(HESTON, YSpec("fbm", 0.6))
    P = SimplePortfolio(level_ladder([105, 120], 100), (1.0, 1.0, 0.0))
    rep = lab.transfer_experiment(P, lambda s: sample_modified_heston(p, 8, s), 200, martingale=False)
    assert rep.within_3se is None and not rep.arbitrage_pattern
