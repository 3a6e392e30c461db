"""RCLL price trajectories on dyadic grids and their pathwise quadratic variation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_MAX_LEVEL = 16
_GRID_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class PartitionSequence:
    """Refining family of dyadic partitions of ``[0, horizon]``.

    Level ``l`` holds the points ``k * horizon / 2**l`` for ``k = 0..2**l``.
    """

    horizon: float = 1.0
    max_level: int = DEFAULT_MAX_LEVEL

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.max_level < 0:
            raise ValueError("max_level must be non-negative")

    def points(self, level: int) -> np.ndarray:
        self._check(level)
        n = 2**level
        return np.arange(n + 1) * (self.horizon / n)

    def mesh(self, level: int) -> float:
        self._check(level)
        return self.horizon / 2**level

    def _check(self, level: int) -> None:
        if not 0 <= level <= self.max_level:
            raise ValueError(f"level {level} outside [0, {self.max_level}]")


def dyadic_grid(level: int, horizon: float = 1.0) -> np.ndarray:
    n = 2**level
    return np.arange(n + 1) * (horizon / n)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Price path sampled on a level-``level`` dyadic grid with explicit jump marks.

    Attributes
    ----------
    times : ndarray
        Grid ``0 = t_0 < ... < t_N = T`` with ``N = 2**level``.
    values : ndarray
        Right-continuous node values ``x(t_k)``.
    jump_index : ndarray of int
        Sorted grid indices carrying a jump.
    jump_left : ndarray
        Left value ``x(t_j^-)`` at each marked index.
    meta : mapping
        Generator metadata (class name, volatility curve, driver, seed ...).
    """

    times: np.ndarray
    values: np.ndarray
    jump_index: np.ndarray
    jump_left: np.ndarray
    level: int
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def mesh(self) -> float:
        return self.horizon / self.n_steps

    @property
    def x0(self) -> float:
        return float(self.values[0])

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is off-grid."""
        k = int(round(t / self.mesh))
        if not 0 <= k <= self.n_steps or abs(self.times[k] - t) > _GRID_TOL * max(1.0, self.horizon):
            raise ValueError(f"time {t!r} is not on the level-{self.level} grid")
        return k

    def value_at(self, t: float) -> float:
        return float(self.values[self.index_of(t)])

    def pre_values(self) -> np.ndarray:
        """Node values with marked jumps replaced by their left values.

        At unmarked nodes the path is continuous at grid resolution, so the
        left limit coincides with the node value.
        """
        pre = self.values.copy()
        pre[self.jump_index] = self.jump_left
        return pre

    def jump_sizes(self) -> np.ndarray:
        return self.values[self.jump_index] - self.jump_left

    def has_jumps(self) -> bool:
        return self.jump_index.size > 0

    def same_grid(self, other: "Trajectory") -> bool:
        return self.level == other.level and self.horizon == other.horizon


def make_trajectory(
    grid: Sequence[float] | np.ndarray,
    values: Sequence[float] | np.ndarray,
    jump_marks: Iterable[tuple[int, float]] | Mapping[int, float] = (),
    meta: Mapping[str, Any] | None = None,
    positive: bool = True,
) -> Trajectory:
    """Validate inputs and build a :class:`Trajectory`.

    Parameters
    ----------
    grid : array_like
        Strictly increasing dyadic grid starting at 0.
    values : array_like
        Node values, finite and (for price paths) strictly positive.
    jump_marks : iterable of (index, left value) or mapping
        Jump locations with the left value at each.
    positive : bool
        Require strictly positive values (price trajectories).
    """
    t = np.asarray(grid, dtype=float).copy()
    v = np.asarray(values, dtype=float).copy()
    if t.ndim != 1 or v.shape != t.shape or t.size < 2:
        raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
    if t[0] != 0.0:
        raise ValueError("grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly increasing")
    n = t.size - 1
    level = int(round(np.log2(n)))
    if 2**level != n:
        raise ValueError("grid size must be 2**level + 1")
    if np.max(np.abs(t - np.arange(n + 1) * (t[-1] / n))) > _GRID_TOL * max(1.0, t[-1]):
        raise ValueError("grid is not dyadic")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if positive and np.any(v <= 0):
        raise ValueError("price values must be strictly positive")

    items = jump_marks.items() if isinstance(jump_marks, Mapping) else jump_marks
    marks = sorted((int(j), float(left)) for j, left in items)
    idx = np.array([j for j, _ in marks], dtype=np.int64)
    left = np.array([lv for _, lv in marks], dtype=float)
    if idx.size:
        if np.any(np.diff(idx) == 0):
            raise ValueError("duplicate jump mark")
        if idx[0] < 1 or idx[-1] > n:
            raise ValueError("jump mark index outside 1..N")
        if not np.all(np.isfinite(left)) or (positive and np.any(left <= 0)):
            raise ValueError("jump left values must be finite and positive")
        if np.any(v[idx] - left == 0):
            raise ValueError("jump mark with zero jump size")
    return Trajectory(_freeze(t), _freeze(v), _freeze(idx), _freeze(left), level, dict(meta or {}))


def left_limit(x: Trajectory, t: float) -> float:
    """Left value ``x(t^-)`` at a grid time ``t > 0``.

    Marked jump times return the recorded left value; otherwise the value at
    the preceding grid node.
    """
    if t <= 0:
        raise ValueError("left limit undefined at t = 0")
    k = x.index_of(t)
    pos = np.searchsorted(x.jump_index, k)
    if pos < x.jump_index.size and x.jump_index[pos] == k:
        return float(x.jump_left[pos])
    return float(x.values[k - 1])


def jumps(x: Trajectory) -> list[tuple[float, float, float]]:
    """List of ``(time, size, left value)`` ordered by time."""
    return [
        (float(x.times[j]), float(x.values[j] - lv), float(lv))
        for j, lv in zip(x.jump_index, x.jump_left)
    ]


@dataclass(frozen=True, eq=False)
class QVCurve:
    """Cumulative quadratic variation along one dyadic level.

    ``cumulative`` and ``continuous`` live on ``times`` (level-``level``
    nodes); ``density`` holds one value per step, attached to the step's
    left endpoint ``times[:-1]``.
    """

    times: np.ndarray
    cumulative: np.ndarray
    continuous: np.ndarray
    density: np.ndarray
    level: int

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    @property
    def jump_part(self) -> float:
        return float(self.cumulative[-1] - self.continuous[-1])


def level_indices(x: Trajectory, level: int) -> np.ndarray:
    """Grid indices of the level-``level`` partition points of ``x``."""
    if not 0 <= level <= x.level:
        raise ValueError(f"level {level} exceeds grid resolution {x.level}")
    return np.arange(0, x.n_steps + 1, 2 ** (x.level - level))


def step_jump_sums(x: Trajectory, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step sum of jump sizes and of squared jump sizes over ``(idx[k], idx[k+1]]``."""
    n = idx.size - 1
    size = np.zeros(n)
    square = np.zeros(n)
    inside = (x.jump_index > idx[0]) & (x.jump_index <= idx[-1])
    if np.any(inside):
        step = np.searchsorted(idx, x.jump_index[inside], side="left") - 1
        d = x.jump_sizes()[inside]
        np.add.at(size, step, d)
        np.add.at(square, step, d * d)
    return size, square


def quadratic_variation(x: Trajectory, level: int) -> QVCurve:
    """Pathwise quadratic variation of ``x`` along the level-``level`` partition.

    Each step's squared increment is split into a continuous part, the
    squared increment with the step's marked jumps removed, and a discrete
    part, the sum of squared jump sizes.  The density is the continuous part
    per step divided by the step width.
    """
    idx = level_indices(x, level)
    v = x.values[idx]
    inc = np.diff(v)
    jsum, jsq = step_jump_sums(x, idx)
    cont = (inc - jsum) ** 2
    width = np.diff(x.times[idx])
    cumulative = np.concatenate(([0.0], np.cumsum(cont + jsq)))
    continuous = np.concatenate(([0.0], np.cumsum(cont)))
    return QVCurve(
        _freeze(x.times[idx].copy()),
        _freeze(cumulative),
        _freeze(continuous),
        _freeze(cont / width),
        level,
    )


def write_csv(x: Trajectory, path: str | Path) -> None:
    """Write ``t, value, is_jump, left_value`` rows; ``left_value`` is empty off jumps."""
    marks = dict(zip(x.jump_index.tolist(), x.jump_left.tolist()))
    decimals = x.level + 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value", "is_jump", "left_value"])
        for k, (t, v) in enumerate(zip(x.times, x.values)):
            lv = marks.get(k)
            w.writerow([f"{t:.{decimals}f}", repr(float(v)), int(lv is not None), "" if lv is None else repr(lv)])


def read_csv(path: str | Path, meta: Mapping[str, Any] | None = None) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"t", "value", "is_jump", "left_value"}:
        raise ValueError("trajectory CSV needs header t,value,is_jump,left_value")
    t = np.array([float(r["t"]) for r in rows])
    n = t.size - 1
    t = np.arange(n + 1) * (t[-1] / n)
    v = [float(r["value"]) for r in rows]
    marks = [(k, float(r["left_value"])) for k, r in enumerate(rows) if int(r["is_jump"])]
    return make_trajectory(t, v, marks, meta)
