"""Simple portfolios over stopping sequences, continuously rebalanced
portfolios between stopping times, and their accounting checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pathwise_integration import (
    SimpleIntegrand,
    SmoothField,
    integrate_simple,
    ito_follmer_decomposition,
    partition_indices,
)
from .stopping_times import StoppingSequence, constant_time, _horizon_time
from .trajectory_core import Trajectory, level_indices


# Holdings functionals.  Each reads the path only up to its stopping node.


@dataclass(frozen=True)
class Constant:
    c: float

    def __call__(self, x: Trajectory, k: int) -> float:
        return float(self.c)


@dataclass(frozen=True)
class AtStop:
    """``phi_hat(x(tau_k))`` for a continuous scalar map ``phi_hat``."""

    fn: Callable[[float], float]
    label: str = "phi_hat"

    def __call__(self, x: Trajectory, k: int) -> float:
        return float(self.fn(float(x.values[k])))


@dataclass(frozen=True)
class MinOf:
    parts: tuple

    def __call__(self, x: Trajectory, k: int) -> float:
        return min(p(x, k) for p in self.parts)


@dataclass(frozen=True)
class MaxOf:
    parts: tuple

    def __call__(self, x: Trajectory, k: int) -> float:
        return max(p(x, k) for p in self.parts)


Holding = Constant | AtStop | MinOf | MaxOf


def _as_holding(h) -> Holding:
    if isinstance(h, (Constant, AtStop, MinOf, MaxOf)):
        return h
    if isinstance(h, (int, float)):
        return Constant(float(h))
    raise TypeError("holdings must be Constant, AtStop, MinOf, MaxOf or a number")


@dataclass(frozen=True, eq=False)
class ValuePath:
    """Value, holdings and bank account on a set of grid times.

    ``holdings[k]`` is the number of shares held over ``(t_{k-1}, t_k]``
    (``holdings[0]`` is the initial position) and ``bank = V(t^-) - phi(t) x(t^-)``.
    """

    times: np.ndarray
    value: np.ndarray
    holdings: np.ndarray
    bank: np.ndarray
    price: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.value[-1])

    def accounting_gap(self) -> float:
        """``max |V - (psi + phi x)|`` over the nodes."""
        return float(np.max(np.abs(self.value - (self.bank + self.holdings * self.price))))


@dataclass(frozen=True)
class SimplePortfolio:
    """Holdings ``phi_k`` on ``(tau_k, tau_{k+1}]`` chosen at ``tau_k``; initial value ``v0``."""

    sequence: StoppingSequence
    holdings: tuple
    v0: float = 0.0

    def __post_init__(self) -> None:
        hs = tuple(_as_holding(h) for h in self.holdings)
        if len(hs) != len(self.sequence) - 1:
            raise ValueError("need one holding per stopping interval")
        object.__setattr__(self, "holdings", hs)

    def positions(self, x: Trajectory) -> tuple[np.ndarray, np.ndarray]:
        """Stopping nodes and the holding chosen at each (up to ``M(x)``)."""
        nodes = self.sequence.indices(x)
        m = int(np.flatnonzero(nodes == x.n_steps)[0])
        phis = np.array([self.holdings[k](x, int(nodes[k])) for k in range(m)])
        if not np.all(np.isfinite(phis)):
            raise ValueError("holding evaluates to a non-finite value")
        return nodes[: m + 1], phis

    def integrand(self, x: Trajectory) -> SimpleIntegrand:
        nodes, phis = self.positions(x)
        return SimpleIntegrand(x.times[nodes], phis)


def _bank(holdings, pre, prev_value, prev_price):
    """``V(t^-) - phi(t) x(t^-)`` with ``V(t^-)`` rolled forward from the previous node."""
    vminus = prev_value + holdings * (pre - prev_price)
    return vminus - holdings * pre


def value_simple(P: SimplePortfolio, x: Trajectory) -> ValuePath:
    """Exact value path of a simple portfolio at every grid node."""
    nodes, phis = P.positions(x)
    v = x.values
    n = x.n_steps
    value = np.empty(n + 1)
    hold = np.empty(n + 1)
    value[0] = P.v0
    hold[0] = phis[0]
    base = 0.0
    for k in range(phis.size):
        a, b = nodes[k], nodes[k + 1]
        if b > a:
            seg = np.arange(a + 1, b + 1)
            value[seg] = P.v0 + (base + phis[k] * (v[seg] - v[a]))
            hold[seg] = phis[k]
        base += phis[k] * (v[b] - v[a])
    value[-1] = P.v0 + integrate_simple(P.integrand(x), x, x.horizon)
    pre = x.values.copy()
    pre[1:] = v[:-1]
    pre[x.jump_index] = x.jump_left
    bank = np.empty(n + 1)
    bank[0] = P.v0 - hold[0] * v[0]
    bank[1:] = _bank(hold[1:], pre[1:], value[:-1], v[:-1])
    return ValuePath(x.times, value, hold, bank, v)


@dataclass(frozen=True)
class RebalancedPortfolio:
    """Holdings ``phi_i(t, x(t^-))`` on ``(tau_i, tau_{i+1}]``.

    ``fields`` optionally gives, per interval, a smooth ``U_i`` with
    ``U_i_y = phi_i`` for the decomposition cross-check.
    """

    sequence: StoppingSequence
    phis: tuple
    v0: float = 0.0
    fields: tuple[SmoothField, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.phis) != len(self.sequence) - 1:
            raise ValueError("need one holding function per stopping interval")
        if self.fields is not None and len(self.fields) != len(self.phis):
            raise ValueError("need one field per stopping interval")


def _rebalance_partition(P: RebalancedPortfolio, x: Trajectory, level: int):
    nodes = P.sequence.indices(x)
    m = int(np.flatnonzero(nodes == x.n_steps)[0])
    pieces = []
    for i in range(m):
        a, b = int(nodes[i]), int(nodes[i + 1])
        if b > a:
            pieces.append((i, partition_indices(x, level, a, b)))
    return nodes[: m + 1], pieces


def value_rebalanced(P: RebalancedPortfolio, x: Trajectory, level: int) -> ValuePath:
    """Cumulative Foellmer value on the level partition refined by the stopping nodes."""
    _, pieces = _rebalance_partition(P, x, level)
    pre = x.pre_values()
    times, incs, holds = [np.array([0])], [], []
    for i, idx in pieces:
        left = idx[:-1]
        h = np.broadcast_to(np.asarray(P.phis[i](x.times[left], pre[left]), dtype=float), left.shape)
        if not np.all(np.isfinite(h)):
            raise ValueError("holding function evaluates to a non-finite value")
        holds.append(h)
        incs.append(h * np.diff(x.values[idx]))
        times.append(idx[1:])
    nodes = np.concatenate(times)
    hold = np.concatenate(holds)
    value = P.v0 + np.concatenate(([0.0], np.cumsum(np.concatenate(incs))))
    hold0 = float(np.asarray(P.phis[pieces[0][0]](x.times[:1], pre[:1])).ravel()[0])
    hold = np.concatenate(([hold0], hold))
    price = x.values[nodes]
    pre_n = pre[nodes]
    bank = np.empty(nodes.size)
    bank[0] = P.v0 - hold0 * price[0]
    bank[1:] = _bank(hold[1:], pre_n[1:], value[:-1], price[:-1])
    return ValuePath(x.times[nodes], value, hold, bank, price)


@dataclass(frozen=True)
class SelfFinancingReport:
    """Residual of ``V(t) - V0 - int_0^t phi dx`` and, for rebalanced
    portfolios, the decomposition cross-check gap."""

    max_residual: float
    relative_residual: float
    decomposition_gap: float | None = None
    decomposition_relative: float | None = None
    interval_terms: list = field(default_factory=list)


def check_self_financing(P, x: Trajectory, level: int | None = None) -> SelfFinancingReport:
    """Self-financing residuals.

    Simple portfolios compare the value path with :func:`integrate_simple`
    at every level node.  Rebalanced portfolios are self-financing by
    construction; the reported gap compares the terminal value with the sum
    of the per-interval Ito-Foellmer reconstructions when fields are given.
    """
    level = x.level if level is None else level
    if isinstance(P, SimplePortfolio):
        vp = value_simple(P, x)
        y = P.integrand(x)
        idx = level_indices(x, level)
        res = np.array([vp.value[j] - P.v0 - integrate_simple(y, x, x.times[j]) for j in idx])
        scale = max(np.max(np.abs(vp.value - P.v0)), np.finfo(float).tiny)
        worst = float(np.max(np.abs(res)))
        return SelfFinancingReport(worst, worst / scale)
    vp = value_rebalanced(P, x, level)
    if P.fields is None:
        return SelfFinancingReport(0.0, 0.0)
    nodes, pieces = _rebalance_partition(P, x, level)
    reports = []
    for i, idx in pieces:
        reports.append(
            ito_follmer_decomposition(P.fields[i], x, x.times[idx[0]], x.times[idx[-1]], level)
        )
    u = sum(r.u for r in reports)
    gap = abs((vp.terminal - P.v0) - u)
    scale = sum(r.scale for r in reports)
    return SelfFinancingReport(0.0, 0.0, gap, gap / scale if scale > 0 else gap, [r.to_dict() for r in reports])


def portfolio_value(P, x: Trajectory, level: int | None = None) -> ValuePath:
    if isinstance(P, SimplePortfolio):
        return value_simple(P, x)
    return value_rebalanced(P, x, x.level if level is None else level)


@dataclass(frozen=True)
class AdmissibilityVerdict:
    passed: bool
    n_paths: int
    min_value: float
    seed: int | None = None
    time: float | None = None


def check_admissible(
    P, sampler: Callable[[int], Trajectory], n_paths: int, A: float, seeds: Sequence[int] | None = None,
    level: int | None = None,
) -> AdmissibilityVerdict:
    """Scan ``V(t, x) >= -A`` over all nodes of ``n_paths`` sampled paths."""
    if A < 0:
        raise ValueError("admissibility bound must be non-negative")
    seeds = list(range(n_paths)) if seeds is None else list(seeds)[:n_paths]
    lowest = np.inf
    for s in seeds:
        x = sampler(s)
        vp = portfolio_value(P, x, level)
        lowest = min(lowest, float(vp.value.min()))
        bad = np.flatnonzero(vp.value < -A)
        if bad.size:
            return AdmissibilityVerdict(False, len(seeds), lowest, s, float(vp.times[bad[0]]))
    return AdmissibilityVerdict(True, len(seeds), lowest)


@dataclass(frozen=True)
class ProbeReport:
    """Distances ``d(x_n, x*)`` and terminal value gaps along a sequence."""

    metric: str
    distances: list
    gaps: list
    passed: bool
    ratio: float


def v_continuity_probe(
    P,
    x_star: Trajectory,
    seq_gen: Callable[[int], Trajectory],
    metric: Callable[[Trajectory, Trajectory], float],
    n: int = 10,
    member: Callable[[Trajectory], bool] | None = None,
    contraction: float = 1e-2,
    metric_name: str = "",
    level: int | None = None,
) -> ProbeReport:
    """Numerical surrogate for local continuity of ``V(T, .)`` at ``x_star``.

    Passes when the last value gap is at most ``contraction`` times the first
    one (or every gap vanishes).
    """
    v_star = portfolio_value(P, x_star, level).terminal
    dists, gaps = [], []
    for k in range(n):
        xn = seq_gen(k)
        if member is not None and not member(xn):
            raise ValueError(f"sequence term {k} lies outside the declared neighbourhood")
        dists.append(float(metric(xn, x_star)))
        gaps.append(abs(portfolio_value(P, xn, level).terminal - v_star))
    first, last = gaps[0], gaps[-1]
    tol = 1e-12 * max(1.0, abs(v_star))
    passed = last <= tol if first <= tol else last <= contraction * first
    ratio = last / first if first > 0 else 0.0
    return ProbeReport(metric_name, dists, gaps, bool(passed), ratio)


def half_time_portfolio(horizon: float = 1.0) -> SimplePortfolio:
    """Hold one share on ``[0, T/2]`` and cash afterwards."""
    seq = StoppingSequence((constant_time(0.0), constant_time(horizon / 2, horizon), _horizon_time()), "half")
    return SimplePortfolio(seq, (Constant(1.0), Constant(0.0)), 0.0)


def buy_and_hold(shares: float = 1.0, v0: float = 0.0) -> SimplePortfolio:
    seq = StoppingSequence((constant_time(0.0), _horizon_time()), "hold")
    return SimplePortfolio(seq, (Constant(shares),), v0)
