"""Trajectory-based stopping times, their combinators, finite stopping
sequences and a falsification check for the stopping property."""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .trajectory_core import Trajectory

Evaluator = Callable[[Trajectory], int]


@dataclass(frozen=True)
class StoppingTime:
    """Functional ``x -> tau(x)`` returning a grid index of ``x``.

    Calling the object returns the time; :meth:`index` returns the node.
    An empty defining set yields the horizon.
    """

    evaluator: Evaluator
    tag: str
    label: str = ""

    def index(self, x: Trajectory) -> int:
        return int(self.evaluator(x))

    def __call__(self, x: Trajectory) -> float:
        return float(x.times[self.index(x)])


def _first(mask: np.ndarray, default: int) -> int:
    hit = np.flatnonzero(mask)
    return int(hit[0]) if hit.size else default


def constant_time(c: float, horizon: float = 1.0) -> StoppingTime:
    """``tau(x) = c``, snapped up to the first grid node at or after ``c``."""
    if not 0.0 <= c <= horizon:
        raise ValueError(f"constant time {c} outside [0, {horizon}]")

    def ev(x: Trajectory) -> int:
        if c > x.horizon:
            raise ValueError("constant time beyond the trajectory horizon")
        return min(int(np.ceil(c / x.mesh - 1e-9)), x.n_steps)

    return StoppingTime(ev, "constant", f"const({c!r})")


def _normalise_intervals(intervals: Sequence[tuple[float | None, float | None]]) -> list[tuple[float, float]]:
    out = []
    for lo, hi in intervals:
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        out.append((lo, hi))
    if not out:
        raise ValueError("closed set descriptor is empty")
    return out


def hitting_time_closed(intervals: Sequence[tuple[float | None, float | None]]) -> StoppingTime:
    """First grid time at which the path lies in a finite union of closed intervals.

    ``None`` (or an infinite bound) marks an unbounded end.
    """
    ivs = _normalise_intervals(intervals)

    def ev(x: Trajectory) -> int:
        v = x.values
        inside = np.zeros(v.shape, dtype=bool)
        for lo, hi in ivs:
            inside |= (v >= lo) & (v <= hi)
        return _first(inside, x.n_steps)

    label = "hit(" + ",".join(f"[{lo},{hi}]" for lo, hi in ivs) + ")"
    return StoppingTime(ev, "hitting", label)


def level_crossing(a: float) -> StoppingTime:
    """``inf{t : x(t) >= a}``."""
    st = hitting_time_closed([(a, None)])
    return StoppingTime(st.evaluator, "level", f"level({a!r})")


def jump_magnitude_time(delta: float) -> StoppingTime:
    """First marked jump with ``|x(t) - x(t^-)| > delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")

    def ev(x: Trajectory) -> int:
        big = np.abs(x.jump_sizes()) > delta
        return int(x.jump_index[big][0]) if np.any(big) else x.n_steps

    return StoppingTime(ev, "jump-magnitude", f"jump({delta!r})")


def jump_count_time(i: int) -> StoppingTime:
    """Time of the ``i``-th jump, or the horizon if there are fewer."""
    if int(i) != i or i < 1:
        raise ValueError("jump count index must be an integer >= 1")
    i = int(i)

    def ev(x: Trajectory) -> int:
        return int(x.jump_index[i - 1]) if x.jump_index.size >= i else x.n_steps

    return StoppingTime(ev, "jump-count", f"jumpcount({i})")


def sum_capped(t1: StoppingTime, t2: StoppingTime) -> StoppingTime:
    """``(tau1 + tau2) ^ T``."""
    return StoppingTime(
        lambda x: min(t1.index(x) + t2.index(x), x.n_steps), "sum", f"sum({t1.label},{t2.label})"
    )


def min_of(times: Sequence[StoppingTime]) -> StoppingTime:
    times = tuple(times)
    if not times:
        raise ValueError("min over an empty list")
    return StoppingTime(
        lambda x: min(s.index(x) for s in times), "min", "min(" + ",".join(s.label for s in times) + ")"
    )


def sup_of(times: Sequence[StoppingTime]) -> StoppingTime:
    """Pointwise supremum over a finite enumerated family."""
    times = tuple(times)
    if not times:
        raise ValueError("sup over an empty family")
    return StoppingTime(
        lambda x: max(s.index(x) for s in times), "sup", "sup(" + ",".join(s.label for s in times) + ")"
    )


@dataclass(frozen=True)
class StoppingSequence:
    """Nondecreasing stopping times ``tau_0 = 0 <= tau_1 <= ...``.

    The last member must equal the horizon on every trajectory so that the
    count ``M(x)``, the first index with ``tau_M(x) = T``, always exists.
    """

    times: tuple[StoppingTime, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.times) < 2:
            raise ValueError("a stopping sequence needs tau_0 and at least one more time")

    def __len__(self) -> int:
        return len(self.times)

    def indices(self, x: Trajectory) -> np.ndarray:
        idx = np.array([s.index(x) for s in self.times], dtype=np.int64)
        if idx[0] != 0:
            raise ValueError("tau_0 must vanish")
        if np.any(np.diff(idx) < 0):
            raise ValueError(f"stopping sequence not monotone on this path: {idx.tolist()}")
        if idx[-1] != x.n_steps:
            raise ValueError("last stopping time must equal the horizon")
        return idx

    def evaluate(self, x: Trajectory) -> np.ndarray:
        return x.times[self.indices(x)]

    def count(self, x: Trajectory) -> int:
        """``M(x)``: smallest index with ``tau_M(x) = T``."""
        idx = self.indices(x)
        return int(np.flatnonzero(idx == x.n_steps)[0])


def level_ladder(levels: Sequence[float], x0: float) -> StoppingSequence:
    """``tau_i = min(inf{t: x(t) >= K_i}, T)`` with ``tau_0 = 0`` and a closing ``tau = T``."""
    k = np.asarray(levels, dtype=float)
    if k.ndim != 1 or k.size == 0:
        raise ValueError("ladder needs at least one level")
    if np.any(np.diff(k) <= 0):
        raise ValueError("ladder levels must be strictly increasing")
    if not k[0] > x0:
        raise ValueError("first ladder level must exceed x0")
    members = [constant_time(0.0)] + [level_crossing(float(a)) for a in k] + [_horizon_time()]
    return StoppingSequence(tuple(members), "ladder(" + ",".join(repr(float(a)) for a in k) + ")")


def grid_sequence(n: int, horizon: float = 1.0) -> StoppingSequence:
    """Deterministic sequence ``tau_i = min(i T / n, T)`` for ``i = 0..n``."""
    if n < 1:
        raise ValueError("need n >= 1")
    members = [constant_time(i * horizon / n, horizon) for i in range(n + 1)]
    return StoppingSequence(tuple(members), f"grid({n})")


def jump_count_sequence(n: int) -> StoppingSequence:
    """``tau_i`` = time of the ``i``-th jump (capped at T) for ``i = 1..n``, closed by T."""
    members = [constant_time(0.0)] + [jump_count_time(i) for i in range(1, n + 1)] + [_horizon_time()]
    return StoppingSequence(tuple(members), f"jumpcounts({n})")


def _horizon_time() -> StoppingTime:
    return StoppingTime(lambda x: x.n_steps, "constant", "horizon")


def agree_until(x: Trajectory, y: Trajectory, k: int) -> bool:
    """Whether ``x`` and ``y`` coincide on ``[0, t_k]``, node values and jump marks included."""
    if not np.array_equal(x.values[: k + 1], y.values[: k + 1]):
        return False
    mx, my = x.jump_index <= k, y.jump_index <= k
    return np.array_equal(x.jump_index[mx], y.jump_index[my]) and np.array_equal(x.jump_left[mx], y.jump_left[my])


def check_np_property(tau: StoppingTime, x: Trajectory, y: Trajectory) -> str:
    """Return ``"pass"``, ``"fail"`` or ``"not-applicable"``.

    Applicable when ``x`` and ``y`` agree on ``[0, tau(x)]``; it then passes
    iff ``tau(y) = tau(x)``.
    """
    if not x.same_grid(y):
        raise ValueError("trajectories live on different grids")
    k = tau.index(x)
    if not agree_until(x, y, k):
        return "not-applicable"
    return "pass" if tau.index(y) == k else "fail"


# Textual expressions, e.g. ``min(level(105), const(0.5))`` or ``ladder(105,120,140)``.

_TIME_BUILDERS: dict[str, Callable[..., StoppingTime]] = {
    "level": lambda a: level_crossing(float(a)),
    "jump": lambda d: jump_magnitude_time(float(d)),
    "jumpcount": lambda i: jump_count_time(int(i)),
}


def _parse_time(node: ast.AST, horizon: float) -> StoppingTime:
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ValueError(f"expected a stopping-time call, got {ast.unparse(node)!r}")
    name = node.func.id
    if name == "const":
        return constant_time(float(ast.literal_eval(node.args[0])), horizon)
    if name in _TIME_BUILDERS:
        return _TIME_BUILDERS[name](*(ast.literal_eval(a) for a in node.args))
    if name == "hit":
        ivs = []
        for a in node.args:
            lo, hi = ast.literal_eval(a)
            ivs.append((lo, hi))
        return hitting_time_closed(ivs)
    if name == "sum":
        if len(node.args) != 2:
            raise ValueError("sum takes two stopping times")
        return sum_capped(_parse_time(node.args[0], horizon), _parse_time(node.args[1], horizon))
    if name in ("min", "sup", "max"):
        parts = [_parse_time(a, horizon) for a in node.args]
        return min_of(parts) if name == "min" else sup_of(parts)
    raise ValueError(f"unknown stopping-time constructor {name!r}")


def parse_stopping_time(text: str, horizon: float = 1.0) -> StoppingTime:
    """Parse a single stopping-time expression."""
    return _parse_time(ast.parse(text.strip(), mode="eval").body, horizon)


def parse_stopping_sequence(text: str, x0: float | None = None, horizon: float = 1.0) -> StoppingSequence:
    """Parse ``ladder(...)``, ``grid(n)``, ``jumpcounts(n)`` or a single time.

    A single time ``tau`` becomes the sequence ``0, tau, T``.
    """
    node = ast.parse(text.strip(), mode="eval").body
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        name = node.func.id
        args = [ast.literal_eval(a) for a in node.args] if name in ("ladder", "grid", "jumpcounts") else None
        if name == "ladder":
            if x0 is None:
                raise ValueError("ladder needs the initial price x0")
            return level_ladder([float(a) for a in args], x0)
        if name == "grid":
            return grid_sequence(int(args[0]), horizon)
        if name == "jumpcounts":
            return jump_count_sequence(int(args[0]))
    tau = _parse_time(node, horizon)
    return StoppingSequence((constant_time(0.0), tau, _horizon_time()), text.strip())
