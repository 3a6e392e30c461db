"""Trajectory distances: uniform, a Skorokhod upper bound with witness warp,
and the quadratic-variation metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajectory_core import Trajectory, level_indices, quadratic_variation

_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class WarpFunction:
    """Piecewise-linear, strictly increasing, endpoint-fixing time change.

    ``knots_in[k] -> knots_out[k]`` with linear interpolation in between.
    """

    knots_in: np.ndarray
    knots_out: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.knots_in, dtype=float)
        b = np.asarray(self.knots_out, dtype=float)
        if a.shape != b.shape or a.size < 2:
            raise ValueError("warp needs matching knot arrays of length >= 2")
        if a[0] != 0 or b[0] != 0 or a[-1] != b[-1]:
            raise ValueError("warp must fix both endpoints")
        if np.any(np.diff(a) <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("warp must be strictly increasing")
        object.__setattr__(self, "knots_in", a)
        object.__setattr__(self, "knots_out", b)

    @classmethod
    def identity(cls, horizon: float) -> "WarpFunction":
        return cls(np.array([0.0, horizon]), np.array([0.0, horizon]))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.knots_in, self.knots_out)

    def inverse(self, s: np.ndarray) -> np.ndarray:
        return np.interp(s, self.knots_out, self.knots_in)

    @property
    def deviation(self) -> float:
        """``sup |lambda(t) - t|``, attained at a knot."""
        return float(np.max(np.abs(self.knots_out - self.knots_in)))


@dataclass(frozen=True)
class MetricReport:
    """Distance value with its components.

    For the Skorokhod bound ``components`` holds ``warp_deviation`` and
    ``sup_gap``; for the QV metric ``uniform`` and ``density_gap``.
    """

    metric: str
    distance: float
    components: dict = field(default_factory=dict)
    warp: WarpFunction | None = None

    def to_dict(self) -> dict:
        out = {"metric": self.metric, "distance": self.distance, **self.components}
        if self.warp is not None:
            out["warp_knots_in"] = self.warp.knots_in.tolist()
            out["warp_knots_out"] = self.warp.knots_out.tolist()
        return out


def _require_same_grid(x: Trajectory, y: Trajectory) -> None:
    if not x.same_grid(y):
        raise ValueError("trajectories live on different grids")


def uniform_distance(x: Trajectory, y: Trajectory) -> float:
    """``max_k |x(t_k) - y(t_k)|`` over the shared grid."""
    _require_same_grid(x, y)
    return float(np.max(np.abs(x.values - y.values)))


def _rcll(path: Trajectory, s: np.ndarray) -> np.ndarray:
    """Value at the last grid node ``<= s``."""
    k = np.floor(np.asarray(s) / path.mesh + _EPS).astype(np.int64)
    return path.values[np.clip(k, 0, path.n_steps)]


def _segment_gap(x: Trajectory, y: Trajectory, u0: float, u1: float, w0: float, w1: float) -> float:
    """``sup_{t in [u0, u1)} |x(t) - y(lambda(t))|`` for the linear piece ``[u0,u1] -> [w0,w1]``.

    Both paths are step functions at grid resolution, so the supremum is
    attained at an ``x`` node or at the preimage of a ``y`` node.
    """
    h = x.mesh
    i0, i1 = int(round(u0 / h)), int(round(u1 / h))
    j0, j1 = int(round(w0 / h)), int(round(w1 / h))
    slope = (w1 - w0) / (u1 - u0)
    tx = x.times[i0:i1]
    gx = np.abs(x.values[i0:i1] - _rcll(y, w0 + (tx - u0) * slope))
    sy = y.times[j0:j1]
    gy = np.abs(_rcll(x, u0 + (sy - w0) / slope) - y.values[j0:j1])
    return float(max(gx.max(initial=0.0), gy.max(initial=0.0)))


def warp_cost(x: Trajectory, y: Trajectory, warp: WarpFunction) -> tuple[float, float]:
    """Exact ``(||lambda - I||, ||x - y o lambda||)`` for a piecewise-linear warp.

    Knots are assumed to lie on the shared grid.
    """
    _require_same_grid(x, y)
    gap = abs(x.values[-1] - y.values[-1])
    a, b = warp.knots_in, warp.knots_out
    for k in range(a.size - 1):
        gap = max(gap, _segment_gap(x, y, a[k], a[k + 1], b[k], b[k + 1]))
    return warp.deviation, float(gap)


def skorokhod_distance_ub(
    x: Trajectory,
    y: Trajectory,
    warp_resolution: int = 64,
    max_step: int = 3,
    band: int | None = None,
    strict: bool = True,
) -> MetricReport:
    """Upper bound on the Skorokhod distance by dynamic programming over lattice warps.

    Warps are piecewise linear with knots on an ``m x m`` lattice of times
    (``m = warp_resolution`` cells) and per-segment steps of 1..``max_step``
    cells in each coordinate.  The bottleneck cost
    ``max(||lambda - I||, ||x - y o lambda||)`` is minimised exactly over this
    family, which contains the identity, so the result never exceeds the
    uniform distance.

    Parameters
    ----------
    warp_resolution : int
        Lattice cells ``m``; must divide the grid size.
    max_step : int
        Largest segment length in lattice cells.
    band : int, optional
        Largest ``|i - j|`` lattice offset explored; defaults to ``m // 4``.
    strict : bool
        Raise when two jumps of one path share a lattice cell.  Otherwise
        the (still valid, possibly loose) bound is returned with
        ``components["jumps_separated"] = False``.
    """
    _require_same_grid(x, y)
    m = int(warp_resolution)
    if m < 2 or x.n_steps % m != 0:
        raise ValueError("warp resolution must be >= 2 and divide the grid size")
    cell = x.horizon / m
    # Two jumps of one path in a single cell cannot be aligned separately.
    separated = True
    for p in (x, y):
        cells = np.floor(p.times[p.jump_index] / cell - _EPS).astype(np.int64)
        separated &= bool(cells.size == np.unique(cells).size)
    if strict and not separated:
        raise ValueError("warp resolution too coarse to separate the jumps of one path")
    band = m // 4 if band is None else int(band)
    lattice = np.arange(m + 1) * cell

    inf = np.inf
    cost = np.full((m + 1, m + 1), inf)
    parent = np.full((m + 1, m + 1, 2), -1, dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(max(1, i - band), min(m, i + band) + 1):
            best, arg = inf, None
            dev = abs(lattice[j] - lattice[i])
            for di in range(1, min(max_step, i) + 1):
                for dj in range(1, min(max_step, j) + 1):
                    prev = cost[i - di, j - dj]
                    if prev >= best or prev == inf:
                        continue
                    c = max(prev, dev)
                    if c >= best:
                        continue
                    c = max(c, _segment_gap(x, y, lattice[i - di], lattice[i], lattice[j - dj], lattice[j]))
                    if c < best:
                        best, arg = c, (i - di, j - dj)
            if arg is not None:
                cost[i, j] = best
                parent[i, j] = arg
    knots = [(m, m)]
    while knots[-1] != (0, 0):
        i, j = knots[-1]
        knots.append(tuple(int(v) for v in parent[i, j]))
    knots.reverse()
    warp = WarpFunction(lattice[[k[0] for k in knots]], lattice[[k[1] for k in knots]])
    dev, gap = warp_cost(x, y, warp)
    uni = uniform_distance(x, y)
    if max(dev, gap) > uni:
        warp, dev, gap = WarpFunction.identity(x.horizon), 0.0, uni
    return MetricReport(
        "skorokhod-ub", max(dev, gap), {"warp_deviation": dev, "sup_gap": gap, "warp_resolution": m, "jumps_separated": separated}, warp
    )


def _volatility(x: Trajectory) -> np.ndarray:
    sigma = x.meta.get("sigma")
    if sigma is None:
        raise ValueError("closed-form QV metric needs volatility metadata on both paths")
    return np.broadcast_to(np.asarray(sigma, dtype=float), x.values.shape)


def qv_metric(x: Trajectory, y: Trajectory, mode: str = "definitional", level: int | None = None) -> MetricReport:
    """``||x - y|| + ||d<x>/dt - d<y>/dt||``.

    ``mode="definitional"`` compares the per-step QV densities at ``level``;
    ``mode="closed"`` uses ``x^2 sigma_x^2 - y^2 sigma_y^2`` on the level
    nodes from generator volatility metadata.  Paths with jumps are rejected.
    """
    _require_same_grid(x, y)
    if x.has_jumps() or y.has_jumps():
        raise ValueError("QV metric is defined for continuous trajectories only")
    level = x.level if level is None else level
    uni = uniform_distance(x, y)
    if mode in ("definitional", "def"):
        dx = quadratic_variation(x, level).density
        dy = quadratic_variation(y, level).density
        gap = float(np.max(np.abs(dx - dy)))
    elif mode in ("closed", "closed-form"):
        idx = level_indices(x, level)
        sx, sy = _volatility(x)[idx], _volatility(y)[idx]
        vx, vy = x.values[idx], y.values[idx]
        gap = float(np.max(np.abs(vx * vx * sx * sx - vy * vy * sy * sy)))
    else:
        raise ValueError(f"unknown QV metric mode {mode!r}")
    return MetricReport("qv", uni + gap, {"uniform": uni, "density_gap": gap, "mode": mode, "level": level})


def qv_distance(x: Trajectory, y: Trajectory, level: int | None = None) -> float:
    return qv_metric(x, y, "definitional", level).distance


def skorokhod_distance(x: Trajectory, y: Trajectory, warp_resolution: int = 64, strict: bool = True) -> float:
    return skorokhod_distance_ub(x, y, warp_resolution, strict=strict).distance
