"""Generators for the trajectory classes and the stochastic processes used in
transfer experiments: Poisson-exponential paths, exponential jump-diffusion
members and processes, a Heston-type model with window-averaged CIR variance,
fractional Brownian motion and the fBm-perturbed Heston model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .trajectory_core import Trajectory, dyadic_grid, make_trajectory


def _rng(seed: int | Sequence[int] | np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(seed)


def snap_times(times: Sequence[float], level: int, horizon: float = 1.0, resolve: bool = False) -> np.ndarray:
    """Snap jump times in ``(0, T]`` to the nearest grid node ``>= 1``.

    With ``resolve`` a collision moves the later jump to the next free node
    (or the previous free node at the horizon); otherwise it is an error.
    """
    n = 2**level
    t = np.asarray(times, dtype=float)
    if t.size and (np.any(t <= 0) or np.any(t > horizon)):
        raise ValueError("jump times must lie in (0, T]")
    k = np.clip(np.rint(t / horizon * n).astype(np.int64), 1, n)
    if not resolve:
        if np.any(np.diff(k) <= 0):
            raise ValueError("jump times must be strictly increasing and distinct on the grid")
        return k
    k = np.sort(k)
    taken: set[int] = set()
    out = []
    for j in k:
        j = int(j)
        while j in taken and j < n:
            j += 1
        while j in taken:
            j -= 1
        if j < 1:
            raise ValueError("more jumps than grid nodes")
        taken.add(j)
        out.append(j)
    return np.array(sorted(out), dtype=np.int64)


def _member(
    x0: float,
    exponent: np.ndarray,
    jump_idx: np.ndarray,
    factors: np.ndarray,
    level: int,
    horizon: float,
    meta: dict,
) -> Trajectory:
    """``x0 exp(exponent) prod (1 + a_i)`` with jump marks at ``jump_idx``."""
    n = 2**level
    logf = np.zeros(n + 1)
    np.add.at(logf, jump_idx, np.log1p(factors))
    cum = np.cumsum(logf)
    values = x0 * np.exp(exponent + cum)
    left = x0 * np.exp(exponent[jump_idx] + cum[jump_idx] - np.log1p(factors))
    return make_trajectory(dyadic_grid(level, horizon), values, list(zip(jump_idx.tolist(), left.tolist())), meta)


@dataclass(frozen=True)
class PoissonExpParams:
    """``x(t) = x0 exp(mu t) (1 + a)**n(t)`` with the sign condition ``mu * a < 0``."""

    x0: float
    mu: float
    a: float

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if not self.mu * self.a < 0:
            raise ValueError("sign condition mu * a < 0 violated")
        if not 1 + self.a > 0:
            raise ValueError("jump factor needs 1 + a > 0")


def gen_poisson_exp(
    p: PoissonExpParams, jump_times: Sequence[float], level: int, horizon: float = 1.0
) -> Trajectory:
    """Exact grid evaluation of the Poisson-exponential path with given jump times."""
    t = np.asarray(jump_times, dtype=float)
    if np.unique(t).size != t.size:
        raise ValueError("duplicate jump times")
    idx = snap_times(t, level, horizon)
    grid = dyadic_grid(level, horizon)
    factors = np.full(idx.size, p.a)
    meta = {"class": "poisson-exp", "x0": p.x0, "mu": p.mu, "a": p.a, "jump_times": grid[idx].tolist()}
    return _member(p.x0, p.mu * grid, idx, factors, level, horizon, meta)


def gen_brownian_z(level: int, seed, horizon: float = 1.0) -> np.ndarray:
    """Standard Brownian path on the level grid with ``z(0) = 0``."""
    n = 2**level
    dz = _rng(seed).standard_normal(n) * np.sqrt(horizon / n)
    return np.concatenate(([0.0], np.cumsum(dz)))


@dataclass(frozen=True)
class FactorSet:
    """Jump factor set ``C``: a finite set (``points``) or a closed interval."""

    points: tuple[float, ...] = ()
    low: float | None = None
    high: float | None = None

    def __post_init__(self) -> None:
        if bool(self.points) == (self.low is not None):
            raise ValueError("give either finite points or an interval")
        if self.low is not None and (self.high is None or self.low > self.high):
            raise ValueError("interval needs low <= high")
        if not self.infimum > -1:
            raise ValueError("inf C must exceed -1")

    @property
    def infimum(self) -> float:
        return min(self.points) if self.points else float(self.low)

    @property
    def min_abs(self) -> float:
        if self.points:
            return min(abs(c) for c in self.points)
        if self.low <= 0 <= self.high:
            return 0.0
        return min(abs(self.low), abs(self.high))

    def contains(self, a: float, tol: float = 1e-12) -> bool:
        if self.points:
            return any(abs(a - c) <= tol for c in self.points)
        return self.low - tol <= a <= self.high + tol


@dataclass(frozen=True)
class JumpDiffusionClassParams:
    """``x(t) = x0 exp(sigma z(t)) prod (1 + a_i)`` with factors ``a_i`` in ``C``."""

    x0: float
    sigma: float
    C: FactorSet

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def gen_jump_diffusion_member(
    p: JumpDiffusionClassParams,
    z: np.ndarray,
    jumps: Sequence[tuple[float, float]] = (),
    horizon: float = 1.0,
) -> Trajectory:
    """Class member driven by ``z`` with jumps ``(time, factor)``.

    Metadata keeps the driver and jump list so the path can be rebuilt and
    perturbed, plus a constant volatility curve for the closed-form QV metric.
    """
    z = np.asarray(z, dtype=float)
    level = int(round(np.log2(z.size - 1)))
    if 2**level + 1 != z.size or z[0] != 0.0:
        raise ValueError("driver must live on a dyadic grid and start at 0")
    jumps = sorted((float(t), float(a)) for t, a in jumps)
    for _, a in jumps:
        if not p.C.contains(a):
            raise ValueError(f"jump factor {a} outside C")
    idx = snap_times([t for t, _ in jumps], level, horizon)
    factors = np.array([a for _, a in jumps])
    grid = dyadic_grid(level, horizon)
    meta = {
        "class": "jump-diffusion-member",
        "x0": p.x0,
        "sigma": p.sigma,
        "z": z,
        "jumps": tuple(zip(grid[idx].tolist(), factors.tolist())),
        "C": p.C,
    }
    return _member(p.x0, p.sigma * z, idx, factors, level, horizon, meta)


def member_parts(x: Trajectory) -> tuple[float, float, np.ndarray, tuple[tuple[float, float], ...]]:
    """Return ``(x0, sigma, z, jumps)`` from member metadata."""
    try:
        return x.meta["x0"], x.meta["sigma"], x.meta["z"], x.meta["jumps"]
    except KeyError as err:
        raise ValueError("trajectory carries no class-member metadata") from err


@dataclass(frozen=True)
class JumpLaw:
    """Law of the relative jump size ``X``: finite support or uniform on an interval."""

    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    low: float | None = None
    high: float | None = None

    def __post_init__(self) -> None:
        if self.values:
            if len(self.values) != len(self.probs) or abs(sum(self.probs) - 1) > 1e-12 or min(self.probs) < 0:
                raise ValueError("finite jump law needs matching non-negative probabilities summing to 1")
        elif self.low is None or self.high is None or self.low > self.high:
            raise ValueError("jump law needs finite support or an interval")
        if not self.support_min > -1:
            raise ValueError("jump factors must exceed -1")

    @property
    def support_min(self) -> float:
        return min(self.values) if self.values else float(self.low)

    def mean(self) -> float:
        if self.values:
            return float(np.dot(self.values, self.probs))
        return 0.5 * (self.low + self.high)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.values:
            return rng.choice(np.asarray(self.values), size=n, p=np.asarray(self.probs))
        return rng.uniform(self.low, self.high, size=n)

    def support_set(self) -> FactorSet:
        if self.values:
            return FactorSet(points=tuple(v for v, q in zip(self.values, self.probs) if q > 0))
        return FactorSet(low=self.low, high=self.high)


@dataclass(frozen=True)
class JumpDiffusionProcessParams:
    """``Z_t = x0 exp((mu - sigma^2/2) t + sigma W_t) prod_{i <= N_t} (1 + X_i)``."""

    x0: float
    mu: float
    sigma: float
    lam: float
    law: JumpLaw

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.lam < 0:
            raise ValueError("intensity must be non-negative")


def compensated_drift(lam: float, law: JumpLaw) -> float:
    """Drift making ``Z`` a martingale at zero interest: ``-lam E[X]``."""
    return -lam * law.mean()


def sample_jump_diffusion_process(
    p: JumpDiffusionProcessParams, level: int, seed, horizon: float = 1.0
) -> Trajectory:
    """One path of the exponential jump-diffusion on the level grid.

    Jump times are uniform order statistics snapped to the grid, with
    collisions moved to the next free node.
    """
    rng = _rng(seed)
    n = 2**level
    dt = horizon / n
    grid = dyadic_grid(level, horizon)
    dw = rng.standard_normal(n) * np.sqrt(dt)
    w = np.concatenate(([0.0], np.cumsum(dw)))
    count = int(rng.poisson(p.lam * horizon))
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    factors = p.law.sample(rng, count)
    times = np.where(times <= 0, dt, times)
    idx = snap_times(times, level, horizon, resolve=True)
    drift = (p.mu - 0.5 * p.sigma**2) * grid
    noise = p.sigma * w
    sigma_eff = p.sigma if p.sigma > 0 else 1.0
    meta = {
        "class": "jump-diffusion-process",
        "x0": p.x0,
        "sigma": p.sigma,
        "z": (drift + noise) / sigma_eff,
        "drift": drift,
        "noise": noise,
        "jumps": tuple(zip(grid[idx].tolist(), factors.tolist())),
        "C": p.law.support_set(),
        "seed": seed if isinstance(seed, int) else None,
    }
    return _member(p.x0, drift + noise, idx, factors, level, horizon, meta)


def rebuild_process_path(
    x: Trajectory, noise: np.ndarray | None = None, jumps: Sequence[tuple[float, float]] | None = None
) -> Trajectory:
    """Rebuild a jump-diffusion process path with a replaced noise or jump list."""
    drift = x.meta["drift"]
    noise = x.meta["noise"] if noise is None else np.asarray(noise)
    jumps = x.meta["jumps"] if jumps is None else tuple(sorted(jumps))
    idx = snap_times([t for t, _ in jumps], x.level, x.horizon)
    factors = np.array([a for _, a in jumps], dtype=float)
    grid = x.times
    sigma_eff = x.meta["sigma"] if x.meta["sigma"] > 0 else 1.0
    meta = dict(x.meta) | {
        "noise": noise,
        "z": (drift + noise) / sigma_eff,
        "jumps": tuple(zip(grid[idx].tolist(), factors.tolist())),
    }
    return _member(x.x0, drift + noise, idx, factors, x.level, x.horizon, meta)


@dataclass(frozen=True)
class HestonTypeParams:
    """Heston-type model whose volatility is the root of a window-averaged CIR variance.

    ``dV = k (theta - V) dt + xi sqrt(V) dB2`` with ``V = v0`` on ``[-h, 0]``;
    ``sigma_s = sqrt(mean of V over [s - h, s])``; the log price has drift
    ``mu - sigma^2/2`` and diffusion ``alpha sigma dB1 + sqrt(1 - alpha^2) sigma dB2``.
    """

    z0: float
    mu: float
    alpha: float
    k: float
    theta: float
    xi: float
    h: float
    v0: float

    def __post_init__(self) -> None:
        if not self.z0 > 0:
            raise ValueError("z0 must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie strictly inside (0, 1)")
        for name in ("k", "theta", "xi", "h", "v0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if 2 * self.k * self.theta < self.xi**2:
            raise ValueError("Feller condition 2 k theta >= xi^2 violated")

    def cir_mean(self, t: float) -> float:
        return self.theta + (self.v0 - self.theta) * np.exp(-self.k * t)


def _heston_drivers(level: int, seed, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    rng = _rng(seed)
    n = 2**level
    sq = np.sqrt(horizon / n)
    db2 = rng.standard_normal(n) * sq
    db1 = rng.standard_normal(n) * sq
    return db1, db2


def _cir_path(p: HestonTypeParams, db2: np.ndarray, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    n = db2.size
    dt = horizon / n
    v = np.empty(n + 1)
    v[0] = p.v0
    for i in range(n):
        vp = max(v[i], 0.0)
        v[i + 1] = v[i] + p.k * (p.theta - vp) * dt + p.xi * np.sqrt(vp) * db2[i]
    vp = np.maximum(v, 0.0)
    integral = np.concatenate(([0.0], np.cumsum(0.5 * (vp[1:] + vp[:-1]) * dt)))
    w = max(1, int(round(p.h / dt)))
    h = w * dt
    avg = np.empty(n + 1)
    avg[w:] = (integral[w:] - integral[:-w]) / h
    t = np.arange(min(w, n + 1)) * dt
    avg[: t.size] = (integral[: t.size] + p.v0 * (h - t)) / h
    return vp, np.sqrt(avg)


def sample_cir_regularized(p: HestonTypeParams, level: int, seed, horizon: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Full-truncation Euler CIR variance and the window-averaged volatility.

    Returns ``(V, sigma)`` on the level grid; ``V`` is reported truncated at 0.
    """
    _, db2 = _heston_drivers(level, seed, horizon)
    return _cir_path(p, db2, horizon)


def total_variation(a: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(a))))


def _heston_log(p: HestonTypeParams, level: int, seed, horizon: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    db1, db2 = _heston_drivers(level, seed, horizon)
    v, sigma = _cir_path(p, db2, horizon)
    dt = horizon / db2.size
    s = sigma[:-1]
    incr = (p.mu - 0.5 * s * s) * dt + p.alpha * s * db1 + np.sqrt(1 - p.alpha**2) * s * db2
    return np.concatenate(([0.0], np.cumsum(incr))), v, sigma


def _heston_trajectory(p, level, horizon, log_path, v, sigma, meta) -> Trajectory:
    meta = {"z0": p.z0, "sigma": sigma, "variance": v, "sigma_total_variation": total_variation(sigma)} | meta
    return make_trajectory(dyadic_grid(level, horizon), p.z0 * np.exp(log_path), (), meta)


def sample_heston_type(p: HestonTypeParams, level: int, seed, horizon: float = 1.0) -> Trajectory:
    """Heston-type price path; ``B2`` is shared with the CIR driver."""
    log_path, v, sigma = _heston_log(p, level, seed, horizon)
    return _heston_trajectory(p, level, horizon, log_path, v, sigma, {"class": "heston-type"})


def _fgn_sqrt_eigs(hurst: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    gamma = 0.5 * ((k + 1) ** (2 * hurst) - 2 * k ** (2 * hurst) + np.abs(k - 1) ** (2 * hurst))
    row = np.concatenate((gamma, gamma[-2:0:-1]))
    eig = np.fft.fft(row).real
    if np.min(eig) < -1e-10 * np.max(eig):
        raise ValueError("circulant embedding is not positive semi-definite")
    return np.sqrt(np.maximum(eig, 0.0) / row.size)


def sample_fbm(hurst: float, level: int, seed, horizon: float = 1.0) -> np.ndarray:
    """Fractional Brownian motion on the level grid by circulant embedding.

    Exact covariance for the fractional Gaussian noise increments; ``Y(0) = 0``.
    """
    if not 0.5 < hurst <= 0.75:
        raise ValueError("Hurst index must lie in (1/2, 3/4]")
    n = 2**level
    lam = _fgn_sqrt_eigs(hurst, n)
    rng = _rng(seed)
    m = lam.size
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    fgn = np.fft.fft(lam * w).real[:n]
    fgn *= (horizon / n) ** hurst
    return np.concatenate(([0.0], np.cumsum(fgn)))


@dataclass(frozen=True)
class YSpec:
    """Null-QV perturbation: ``none``, ``fbm`` with Hurst index, or a supplied path."""

    kind: str = "none"
    hurst: float | None = None
    path: tuple[float, ...] | None = None
    qv_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("none", "fbm", "path"):
            raise ValueError(f"unknown Y kind {self.kind!r}")
        if self.kind == "fbm" and not (self.hurst is not None and 0.5 < self.hurst <= 0.75):
            raise ValueError("fBm perturbation needs Hurst index in (1/2, 3/4]")
        if self.kind == "path" and not self.path:
            raise ValueError("path perturbation needs values")


@dataclass(frozen=True)
class ModifiedHestonParams:
    heston: HestonTypeParams
    y: YSpec = field(default_factory=YSpec)


def _y_seed(seed) -> np.random.SeedSequence:
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + (0x59,))


def sample_modified_heston(p: ModifiedHestonParams, level: int, seed, horizon: float = 1.0) -> Trajectory:
    """Heston-type log path plus an independent null-QV term in the exponent.

    The Heston part uses the same random stream as :func:`sample_heston_type`,
    so ``Y = 0`` reproduces it bit for bit.
    """
    n = 2**level
    if p.y.kind == "none":
        y = np.zeros(n + 1)
    elif p.y.kind == "fbm":
        y = sample_fbm(p.y.hurst, level, _y_seed(seed), horizon)
    else:
        y = np.asarray(p.y.path, dtype=float)
        if y.size != n + 1 or y[0] != 0 or not np.all(np.isfinite(y)):
            raise ValueError("Y path must match the grid, be finite and start at 0")
    y_qv = float(np.sum(np.diff(y) ** 2))
    if y_qv > p.y.qv_threshold:
        raise ValueError(f"Y quadratic variation {y_qv:.4g} exceeds threshold {p.y.qv_threshold}")
    log_path, v, sigma = _heston_log(p.heston, level, seed, horizon)
    return _heston_trajectory(
        p.heston, level, horizon, log_path + y, v, sigma, {"class": "modified-heston", "y_qv": y_qv, "y": y}
    )
