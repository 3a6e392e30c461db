"""Pathwise integrals: the exact simple-integrand sum, left-point Foellmer sums
and the Ito-Foellmer decomposition of a smooth field along a trajectory."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .trajectory_core import Trajectory, level_indices, step_jump_sums

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SimpleIntegrand:
    """Piecewise-constant integrand ``c_i`` on ``(t_i, t_{i+1}]`` (``c_0`` on ``[0, t_1]``).

    ``breakpoints`` has one more entry than ``constants`` and runs from 0 to T.
    Repeated breakpoints give empty intervals.
    """

    breakpoints: np.ndarray
    constants: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.breakpoints, dtype=float)
        c = np.asarray(self.constants, dtype=float)
        if b.ndim != 1 or c.ndim != 1 or b.size != c.size + 1 or c.size == 0:
            raise ValueError("need len(breakpoints) == len(constants) + 1 >= 2")
        if b[0] != 0.0 or np.any(np.diff(b) < 0):
            raise ValueError("breakpoints must start at 0 and be nondecreasing")
        if not np.all(np.isfinite(c)):
            raise ValueError("constants must be finite")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "constants", c)


def integrate_simple(y: SimpleIntegrand, x: Trajectory, t: float) -> float:
    """Exact integral of a simple integrand against ``x`` up to grid time ``t``.

    With ``k`` the smallest index such that ``t <= t_k``, returns
    ``sum_{i<k-1} c_i (x(t_{i+1}) - x(t_i)) + c_{k-1} (x(t) - x(t_{k-1}))``,
    accumulated left to right.
    """
    if abs(y.breakpoints[-1] - x.horizon) > 1e-12 * x.horizon:
        raise ValueError("last breakpoint must equal the horizon")
    nodes = [x.index_of(b) for b in y.breakpoints]
    j = x.index_of(t)
    if j == 0:
        return 0.0
    v = x.values
    k = next(i for i, n in enumerate(nodes) if j <= n)
    s = 0.0
    for i in range(k - 1):
        s += y.constants[i] * (v[nodes[i + 1]] - v[nodes[i]])
    s += y.constants[k - 1] * (v[j] - v[nodes[k - 1]])
    return float(s)


def partition_indices(x: Trajectory, level: int, a_idx: int = 0, b_idx: int | None = None) -> np.ndarray:
    """Level-``level`` partition of ``[t_a, t_b]``, with the endpoints added."""
    b_idx = x.n_steps if b_idx is None else b_idx
    if not 0 <= a_idx < b_idx <= x.n_steps:
        raise ValueError("need 0 <= a < b <= T on the grid")
    idx = level_indices(x, level)
    inner = idx[(idx > a_idx) & (idx < b_idx)]
    return np.concatenate(([a_idx], inner, [b_idx]))


def _checked(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} evaluates to a non-finite value")
    return values


def follmer_sum(phi: Field, x: Trajectory, idx: np.ndarray) -> float:
    """Left-point sum ``sum_k phi(t_k, x(t_k^-)) (x(t_{k+1}) - x(t_k))`` over node indices ``idx``."""
    pre = x.pre_values()
    left = idx[:-1]
    h = _checked(np.broadcast_to(phi(x.times[left], pre[left]), left.shape), "phi")
    return float(np.sum(h * np.diff(x.values[idx])))


def follmer_integral(
    phi: Field, x: Trajectory, level: int, a: float | None = None, b: float | None = None
) -> float:
    """Left-point Riemann-Foellmer sum of ``phi(t, x(t^-))`` against ``x``.

    Parameters
    ----------
    phi : callable
        Vectorised ``phi(t, v)`` returning an array.
    level : int
        Dyadic partition level, at most the grid level of ``x``.
    a, b : float, optional
        Grid-time endpoints; default the whole horizon.
    """
    a_idx = 0 if a is None else x.index_of(a)
    b_idx = x.n_steps if b is None else x.index_of(b)
    return follmer_sum(phi, x, partition_indices(x, level, a_idx, b_idx))


@dataclass(frozen=True)
class SmoothField:
    """Function ``U(t, y)`` with closed-form partials, all vectorised."""

    u: Field
    u_t: Field
    u_y: Field
    u_yy: Field
    name: str = "field"


def linear_field() -> SmoothField:
    zero = lambda t, y: np.zeros_like(y)  # noqa: E731
    return SmoothField(lambda t, y: y, zero, lambda t, y: np.ones_like(y), zero, "linear")


def square_field() -> SmoothField:
    zero = lambda t, y: np.zeros_like(y)  # noqa: E731
    return SmoothField(lambda t, y: 0.5 * y * y, zero, lambda t, y: y, lambda t, y: np.ones_like(y), "square")


def log_field() -> SmoothField:
    return SmoothField(
        lambda t, y: np.log(y),
        lambda t, y: np.zeros_like(y),
        lambda t, y: 1.0 / y,
        lambda t, y: -1.0 / (y * y),
        "log",
    )


@dataclass(frozen=True)
class DecompositionReport:
    """Terms of ``u = boundary - time_integral - qv_term - jump_sum``.

    ``riemann`` is the direct left-point sum of ``U_y`` and ``residual`` its
    distance to ``u``.  ``scale`` is the sum of absolute term sizes, used for
    relative residuals.
    """

    boundary: float
    time_integral: float
    qv_term: float
    jump_sum: float
    u: float
    riemann: float
    residual: float
    scale: float
    level: int

    @property
    def relative_residual(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual

    def to_dict(self) -> dict:
        return asdict(self) | {"relative_residual": self.relative_residual}


def ito_follmer_decomposition(U: SmoothField, x: Trajectory, a: float, b: float, level: int) -> DecompositionReport:
    """Evaluate each term of the pathwise Ito formula for ``U`` on ``[a, b]``.

    The time integral and the second-order term use the left-point rule on the
    level-``level`` partition of ``[a, b]``.  The second-order term integrates
    ``U_yy`` against the continuous quadratic variation accumulated on the
    full trajectory grid inside each partition step; jumps enter only through
    the compensation sum over marks in ``(a, b]``.
    """
    if not a < b:
        raise ValueError("need a < b")
    a_idx, b_idx = x.index_of(a), x.index_of(b)
    idx = partition_indices(x, level, a_idx, b_idx)
    t, v, pre = x.times, x.values, x.pre_values()
    left = idx[:-1]
    tl, yl = t[left], pre[left]

    boundary = float(U.u(np.array(t[b_idx]), np.array(v[b_idx])) - U.u(np.array(t[a_idx]), np.array(v[a_idx])))
    time_integral = float(np.sum(_checked(U.u_t(tl, yl), "U_t") * np.diff(t[idx])))

    fine = np.arange(a_idx, b_idx + 1)
    jsum, _ = step_jump_sums(x, fine)
    fine_cont = np.concatenate(([0.0], np.cumsum((np.diff(v[fine]) - jsum) ** 2)))
    qv_step = np.diff(fine_cont[idx - a_idx])
    qv_term = float(0.5 * np.sum(_checked(U.u_yy(tl, yl), "U_yy") * qv_step))

    inside = (x.jump_index > a_idx) & (x.jump_index <= b_idx)
    js, jl = x.jump_index[inside], x.jump_left[inside]
    ts, jr = t[js], v[js]
    jump_sum = float(np.sum(U.u(ts, jr) - U.u(ts, jl) - U.u_y(ts, jl) * (jr - jl)))

    u = boundary - time_integral - qv_term - jump_sum
    riemann = follmer_sum(U.u_y, x, idx)
    scale = abs(boundary) + abs(time_integral) + abs(qv_term) + abs(jump_sum)
    return DecompositionReport(
        boundary, time_integral, qv_term, jump_sum, u, riemann, abs(u - riemann), scale, level
    )
