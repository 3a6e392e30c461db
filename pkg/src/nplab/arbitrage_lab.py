"""Empirical no-arbitrage harnesses: small-ball estimates, arbitrage search,
neighbourhood samplers and joint strong local continuity tests, jump
correspondence and transfer experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import beta

from .metrics import WarpFunction, qv_distance, uniform_distance, warp_cost
from .portfolio_engine import portfolio_value
from .stopping_times import StoppingSequence
from .trajectory_core import Trajectory, make_trajectory
from .trajectory_models import _member, member_parts, rebuild_process_path

Sampler = Callable[[int], Trajectory]
Metric = Callable[[Trajectory, Trajectory], float]


def derive_seeds(root_seed: int, n: int) -> list[int]:
    """Per-sample integer seeds split deterministically from a root seed."""
    return [int(s) for s in np.random.SeedSequence(root_seed).generate_state(n, dtype=np.uint64) >> np.uint64(1)]


def _map(fn: Callable, items: list, jobs: int = 1) -> list:
    """Ordered map, threaded when ``jobs > 1``; results do not depend on ``jobs``."""
    if jobs <= 1:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def clopper_pearson(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if hits == 0 else float(beta.ppf(a / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(beta.ppf(1 - a / 2, hits + 1, n - hits))
    return lo, hi


@dataclass(frozen=True)
class SmallBallReport:
    eps: float
    hits: int
    n: int
    frequency: float
    ci_low: float
    ci_high: float


def small_ball_estimate(
    sampler: Sampler,
    target: Trajectory,
    metric: Metric,
    eps: float | Sequence[float],
    n: int,
    root_seed: int = 0,
    jobs: int = 1,
) -> list[SmallBallReport]:
    """Frequency of ``d(Z, target) < eps`` with 95% Clopper-Pearson intervals.

    All radii share one sample, so frequencies are non-decreasing in ``eps``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    radii = np.atleast_1d(np.asarray(eps, dtype=float))
    d = np.array(_map(lambda s: metric(sampler(s), target), derive_seeds(root_seed, n), jobs))
    out = []
    for e in radii:
        hits = int(np.sum(d < e))
        lo, hi = clopper_pearson(hits, n)
        out.append(SmallBallReport(float(e), hits, n, hits / n, lo, hi))
    return out


# Adversarial mutators for jump-diffusion process paths.  Each keeps the path
# inside its class: factors are drawn from the recorded support.


def _support_draw(x: Trajectory, rng: np.random.Generator) -> float:
    C = x.meta["C"]
    if C.points:
        return float(rng.choice(np.asarray(C.points)))
    return float(rng.uniform(C.low, C.high))


def _free_time(x: Trajectory, rng: np.random.Generator, taken: set[float]) -> float | None:
    free = [t for t in x.times[1:] if t not in taken]
    return float(rng.choice(free)) if free else None


def mutate_insert_jump(x: Trajectory, rng: np.random.Generator) -> Trajectory:
    jumps = list(x.meta["jumps"])
    t = _free_time(x, rng, {s for s, _ in jumps})
    if t is None:
        return x
    return rebuild_process_path(x, jumps=jumps + [(t, _support_draw(x, rng))])


def mutate_delete_jump(x: Trajectory, rng: np.random.Generator) -> Trajectory:
    jumps = list(x.meta["jumps"])
    if not jumps:
        return x
    jumps.pop(int(rng.integers(len(jumps))))
    return rebuild_process_path(x, jumps=jumps)


def mutate_shift_jump(x: Trajectory, rng: np.random.Generator) -> Trajectory:
    jumps = list(x.meta["jumps"])
    if not jumps:
        return x
    i = int(rng.integers(len(jumps)))
    t = _free_time(x, rng, {s for s, _ in jumps})
    if t is None:
        return x
    jumps[i] = (t, jumps[i][1])
    return rebuild_process_path(x, jumps=jumps)


def mutate_flip_driver(x: Trajectory, rng: np.random.Generator) -> Trajectory:
    return rebuild_process_path(x, noise=-np.asarray(x.meta["noise"]))


DEFAULT_MUTATORS: dict[str, Callable[[Trajectory, np.random.Generator], Trajectory]] = {
    "insert-jump": mutate_insert_jump,
    "delete-jump": mutate_delete_jump,
    "shift-jump": mutate_shift_jump,
    "flip-driver": mutate_flip_driver,
}


@dataclass(frozen=True)
class Witness:
    """Replayable sample: base seed, optional mutator and its seed, value found."""

    seed: int
    mutator: str | None
    mutator_seed: int | None
    value: float
    time: float | None = None


@dataclass(frozen=True)
class ArbitrageVerdict:
    """Corpus-relative classification of a zero-cost portfolio.

    ``outcome`` is ``no-violation-found`` (terminal value never differs from
    zero), ``negative-value-witness`` (some terminal value is negative),
    ``profit-witness`` (non-negative everywhere with a strict profit, base
    corpus only) or ``arbitrage-candidate`` (the same pattern survives the
    adversarial mutator pass).
    """

    outcome: str
    n_scanned: int
    min_value: float
    max_value: float
    negative_witness: Witness | None
    profit_witness: Witness | None
    root_seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _mutant(x: Trajectory, name: str, mseed: int, mutators) -> Trajectory:
    return mutators[name](x, np.random.default_rng(mseed))


def replay_witness(P, sampler: Sampler, w: Witness, mutators=None, level: int | None = None) -> float:
    """Recompute a witness' terminal value from its seeds."""
    x = sampler(w.seed)
    if w.mutator is not None:
        x = _mutant(x, w.mutator, w.mutator_seed, mutators or DEFAULT_MUTATORS)
    return portfolio_value(P, x, level).terminal


def np_arbitrage_search(
    P,
    sampler: Sampler,
    n: int,
    mutators: dict | None = None,
    root_seed: int = 0,
    level: int | None = None,
    tol: float = 1e-12,
    records: list | None = None,
) -> ArbitrageVerdict:
    """Scan ``n`` sampled paths plus one mutant per mutator and path.

    Records the extreme terminal values and the first witnesses of a loss
    and of a profit.  Values within ``tol * x0`` of zero count as zero.
    When ``records`` is a list, ``(seed, mutator, value)`` rows are appended.
    """
    if P.v0 != 0:
        raise ValueError("arbitrage search needs zero initial value")
    mutators = DEFAULT_MUTATORS if mutators is None else mutators
    lo, hi = np.inf, -np.inf
    neg = pos = None
    scanned = 0
    for s in derive_seeds(root_seed, n):
        x = sampler(s)
        cands = [(None, None, x)]
        for k, name in enumerate(sorted(mutators)):
            mseed = (s * 7919 + k + 1) % (2**63)
            cands.append((name, mseed, _mutant(x, name, mseed, mutators)))
        for name, mseed, y in cands:
            vp = portfolio_value(P, y, level)
            v = vp.terminal
            scanned += 1
            if records is not None:
                records.append((s, name or "", v))
            thr = tol * y.x0
            lo, hi = min(lo, v), max(hi, v)
            if v < -thr and neg is None:
                dip = np.flatnonzero(vp.value < -thr)
                neg = Witness(s, name, mseed, v, float(vp.times[dip[0]]))
            if v > thr and pos is None:
                pos = Witness(s, name, mseed, v)
    if neg is not None:
        outcome = "negative-value-witness"
    elif pos is not None:
        outcome = "arbitrage-candidate" if mutators else "profit-witness"
    else:
        outcome = "no-violation-found"
    return ArbitrageVerdict(outcome, scanned, float(lo), float(hi), neg, pos, root_seed)


# Neighbourhood recipes.

_MEMBER_TAGS = {"U1", "U2", "U3", "U4", "U5", "U6", "U7", "U8"}
_QV_TAGS = {"U1", "P2", "P3"}


def _ramp(t: np.ndarray, eps: float) -> np.ndarray:
    return np.minimum(t / eps, 1.0)


@dataclass(frozen=True, eq=False)
class NeighborhoodRecipe:
    """Constructive sampler of a sequence converging to ``center`` inside a U-set.

    For class members (``kind="member"``) the tags are

    ``U1`` metric ball of radius ``radius``; ``U2`` jump times earlier;
    ``U3``/``U6`` driver above/below on ``[eps, T]``; ``U4``/``U7`` jump
    factors larger/smaller; ``U5``/``U8`` jump times moved against/with the
    sign of the jump factor.

    For continuous paths under the QV metric (``kind="qv"``) the tags are
    ``U1`` and ``P2``/``P3`` (path above/below the centre on ``[eps, T]``).

    Term ``n`` has size ``delta * 2**-n`` and time shifts of
    ``shift_nodes >> n`` grid nodes (at least one).
    """

    center: Trajectory
    tags: tuple[str, ...]
    kind: str = "member"
    eps: float = 1 / 64
    radius: float = np.inf
    delta: float = 0.05
    factor_step: float = 0.05
    shift_nodes: int = 256

    def __post_init__(self) -> None:
        allowed = _MEMBER_TAGS if self.kind == "member" else _QV_TAGS
        bad = set(self.tags) - allowed
        if bad or not self.tags:
            raise ValueError(f"unsupported tags {sorted(bad)} for {self.kind} recipe")
        if self.kind == "member":
            member_parts(self.center)
            opposite = [("U3", "U6"), ("U4", "U7"), ("U5", "U8"), ("U2", "U8")]
        else:
            if self.center.has_jumps():
                raise ValueError("QV recipes need a continuous centre")
            opposite = [("P2", "P3")]
        for a, b in opposite:
            if a in self.tags and b in self.tags:
                raise ValueError(f"{a} and {b} cannot be combined")

    def _sign(self, n: int) -> float:
        return 1.0 if n % 2 == 0 else -1.0

    def term(self, n: int) -> Trajectory:
        return self.term_with_warp(n)[0]

    def term_with_warp(self, n: int) -> tuple[Trajectory, WarpFunction]:
        x = self.center
        d = self.delta * 2.0**-n
        ramp = _ramp(x.times, self.eps)
        if self.kind == "qv":
            tags = set(self.tags)
            sgn = 1.0 if "P2" in tags else -1.0 if "P3" in tags else self._sign(n)
            y = x.values * np.exp(sgn * d * ramp)
            meta = dict(x.meta) | {"recipe_term": n}
            return make_trajectory(x.times, y, (), meta), WarpFunction.identity(x.horizon)

        x0, sigma, z, jumps = member_parts(x)
        tags = set(self.tags)
        if "U3" in tags:
            dz = d * ramp
        elif "U6" in tags:
            dz = -d * ramp
        else:
            dz = self._sign(n) * d * np.sin(np.pi * x.times / x.horizon)
        C = x.meta["C"]
        shift = max(1, self.shift_nodes >> n)
        new = []
        for t, a in jumps:
            a_new = a
            if "U4" in tags:
                a_new = a + self.factor_step * 2.0**-n
            elif "U7" in tags:
                a_new = a - self.factor_step * 2.0**-n
            if not C.contains(a_new):
                raise ValueError(f"factor {a_new} leaves the jump set")
            k = int(round(t / x.mesh))
            if "U2" in tags:
                k_new = k - shift
            elif "U5" in tags:
                k_new = k - shift if a > 0 else k + shift
            elif "U8" in tags:
                k_new = k + shift if a > 0 else k - shift
            else:
                k_new = k + int(self._sign(n)) * shift
            new.append((k, k_new, a_new))
        idx = np.array([k for _, k, _ in new], dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > x.n_steps or np.any(np.diff(idx) <= 0)):
            raise ValueError("jump time shift leaves the grid or reorders jumps; lower shift_nodes")
        factors = np.array([a for _, _, a in new], dtype=float)
        z_new = np.asarray(z) + dz
        meta = dict(x.meta) | {
            "z": z_new,
            "jumps": tuple(zip(x.times[idx].tolist(), factors.tolist())),
            "recipe_term": n,
        }
        y = _member(x0, sigma * z_new, idx, factors, x.level, x.horizon, meta)
        knots_in = [0.0] + [x.times[k] for k, _, _ in new if 0 < k < x.n_steps] + [x.horizon]
        knots_out = [0.0] + [x.times[kn] for k, kn, _ in new if 0 < k < x.n_steps] + [x.horizon]
        return y, WarpFunction(np.array(knots_in), np.array(knots_out))

    def distance_bound(self, y: Trajectory, warp: WarpFunction) -> float:
        if self.kind == "qv":
            return qv_distance(y, self.center)
        return max(warp_cost(self.center, y, warp))

    def check(self, y: Trajectory, warp: WarpFunction | None = None) -> bool:
        """Whether ``y`` satisfies every declared constraint."""
        x = self.center
        tags = set(self.tags)
        after = x.times >= self.eps
        if self.kind == "qv":
            ok = not y.has_jumps()
            if "P2" in tags:
                ok &= bool(np.all(y.values[after] > x.values[after]))
            if "P3" in tags:
                ok &= bool(np.all(y.values[after] < x.values[after]))
            if "U1" in tags:
                ok &= 0 < qv_distance(y, x) < self.radius
            return bool(ok)
        _, _, zx, jx = member_parts(x)
        _, _, zy, jy = member_parts(y)
        if len(jx) != len(jy):
            return False
        sx = np.array([t for t, _ in jx])
        sy = np.array([t for t, _ in jy])
        ax = np.array([a for _, a in jx])
        ay = np.array([a for _, a in jy])
        ok = bool(all(y.meta["C"].contains(a) for a in ay))
        dz = np.asarray(zy) - np.asarray(zx)
        checks = {
            "U2": lambda: np.all(sy < sx),
            "U3": lambda: np.all(dz[after] > 0),
            "U4": lambda: np.all(ay > ax),
            "U5": lambda: np.all((sy - sx) * ax < 0),
            "U6": lambda: np.all(dz[after] < 0),
            "U7": lambda: np.all(ay < ax),
            "U8": lambda: np.all((sy - sx) * ax > 0),
        }
        for tag in tags - {"U1"}:
            ok &= bool(checks[tag]())
        if "U1" in tags:
            if warp is None:
                raise ValueError("ball membership needs the witness warp")
            ok &= 0 < self.distance_bound(y, warp) < self.radius
        return bool(ok)


@dataclass(frozen=True)
class SLCReport:
    """Per-term stopping data and verdicts for the three continuity items."""

    taus_star: list
    values_star: list
    count_star: int
    taus: list
    values: list
    counts: list
    distances: list
    tau_gap: float
    value_gap: float
    value_tol: float
    mesh: float
    item_i: bool
    item_ii: bool
    item_iii: bool

    @property
    def passed(self) -> bool:
        return self.item_i and self.item_ii and self.item_iii

    def to_dict(self) -> dict:
        return asdict(self) | {"passed": self.passed}


def _continuous_oscillation(x: Trajectory) -> float:
    pre = x.pre_values()
    return float(np.max(np.abs(pre[1:] - x.values[:-1])))


def jointly_slc_test(S: StoppingSequence, x_star: Trajectory, recipe: NeighborhoodRecipe, m: int = 10) -> SLCReport:
    """Joint strong local continuity along ``m`` recipe terms.

    Item i compares stopping times (tolerance one grid mesh), item ii the
    stopped values (tolerance: one-mesh oscillation of ``x_star`` plus the
    final term's aligned sup distance), item iii the counts ``M``; all at the
    final term and over ``i <= M(x_star)``.
    """
    if recipe.center is not x_star:
        raise ValueError("recipe must be centred at x_star")
    idx_star = S.indices(x_star)
    m_star = S.count(x_star)
    taus, vals, counts, dists = [], [], [], []
    last_pert = 0.0
    for n in range(m):
        y, warp = recipe.term_with_warp(n)
        if not recipe.check(y, warp):
            raise ValueError(f"recipe term {n} violates its neighbourhood constraints")
        idx = S.indices(y)
        taus.append(y.times[idx].tolist())
        vals.append(y.values[idx].tolist())
        counts.append(S.count(y))
        if recipe.kind == "qv":
            last_pert = uniform_distance(y, x_star)
            dists.append(qv_distance(y, x_star))
        else:
            dev, gap = warp_cost(x_star, y, warp)
            last_pert = gap
            dists.append(max(dev, gap))
    r = m_star + 1
    t_star = x_star.times[idx_star]
    v_star = x_star.values[idx_star]
    tau_gap = float(np.max(np.abs(np.array(taus[-1][:r]) - t_star[:r])))
    value_gap = float(np.max(np.abs(np.array(vals[-1][:r]) - v_star[:r])))
    value_tol = _continuous_oscillation(x_star) + last_pert
    return SLCReport(
        t_star.tolist(),
        v_star.tolist(),
        m_star,
        taus,
        vals,
        counts,
        dists,
        tau_gap,
        value_gap,
        value_tol,
        x_star.mesh,
        tau_gap <= x_star.mesh * (1 + 1e-9),
        value_gap <= value_tol,
        counts[-1] == m_star,
    )


@dataclass(frozen=True)
class JumpCorrespondence:
    counts_star: list
    counts: list
    lock_index: int | None

    @property
    def locked(self) -> bool:
        return self.lock_index is not None


def interval_jump_counts(S: StoppingSequence, x: Trajectory) -> list[int]:
    """Jumps of ``x`` in each ``(tau_i, tau_{i+1}]``."""
    idx = S.indices(x)
    j = x.jump_index
    return [int(np.sum((j > a) & (j <= b))) for a, b in zip(idx[:-1], idx[1:])]


def jump_correspondence_check(
    seq: Sequence[Trajectory], x_star: Trajectory, S: StoppingSequence
) -> JumpCorrespondence:
    """Index from which per-interval jump counts of the sequence match ``x_star`` for good."""
    star = interval_jump_counts(S, x_star)
    counts = [interval_jump_counts(S, y) for y in seq]
    lock = None
    for n in range(len(counts) - 1, -1, -1):
        if counts[n] != star:
            break
        lock = n
    return JumpCorrespondence(star, counts, lock)


@dataclass(frozen=True)
class TransferReport:
    n: int
    mean: float
    se: float
    frac_positive: float
    min_value: float
    max_value: float
    within_3se: bool | None
    arbitrage_pattern: bool
    price_mean: float
    price_se: float

    def to_dict(self) -> dict:
        return asdict(self)


def transfer_experiment(
    P,
    sampler: Sampler,
    n: int,
    root_seed: int = 0,
    martingale: bool = True,
    level: int | None = None,
    jobs: int = 1,
    values: list | None = None,
) -> TransferReport:
    """Evaluate the isomorphic stochastic portfolio ``Phi(t, Z(omega))`` over ``n`` draws.

    With ``martingale=True`` the sampler must pass a price sanity check
    (``|mean Z_T - x0| <= 3 SE``) and the report states whether the mean
    terminal value lies within 3 SE of zero.  The arbitrage pattern flag is
    set when every terminal value is non-negative and some are positive.
    When ``values`` is a list, ``(seed, terminal value)`` rows are appended.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    seeds = derive_seeds(root_seed, n)

    def one(s: int) -> tuple[float, float, float]:
        x = sampler(s)
        return x.x0, x.values[-1], portfolio_value(P, x, level).terminal - P.v0

    rows = np.array(_map(one, seeds, jobs))
    x0, z_t, vals = float(rows[0, 0]), rows[:, 1], rows[:, 2]
    if values is not None:
        values.extend(zip(seeds, vals.tolist()))
    p_mean, p_se = float(z_t.mean()), float(z_t.std(ddof=1) / np.sqrt(n))
    if martingale and abs(p_mean - x0) > 3 * p_se:
        raise ValueError(f"sampler fails the martingale sanity check: mean {p_mean:.6g} vs x0 {x0:.6g}")
    mean, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))
    tol = 1e-12 * x0
    pattern = bool(vals.min() >= -tol and vals.max() > tol)
    within = bool(abs(mean) <= 3 * se) if martingale else None
    return TransferReport(
        n, mean, se, float(np.mean(vals > tol)), float(vals.min()), float(vals.max()), within, pattern, p_mean, p_se
    )
