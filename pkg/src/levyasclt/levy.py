"""Finite-activity Levy process simulation.

A model is ``S_t = b t + sigma_c W_t + J_t`` with ``J`` compound Poisson of
rate ``lam``. Paths are simulated exactly in distribution on a time grid;
jumps are kept in a log at their true times and the Brownian part is also
sampled at every jump time, so left limits ``M_{s-}`` are available exactly
at each jump.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import (
    InvalidHorizon,
    InvalidStep,
    OutOfHorizon,
    WeightNotIntegrable,
)

__all__ = [
    "NormalJumps",
    "UniformJumps",
    "DiscreteJumps",
    "LevyModel",
    "SamplePath",
    "WeightedPath",
    "ConstantWeight",
    "PowerWeight",
    "ExpWeight",
    "simulate_path",
    "simulate_vector_path",
    "quadratic_variation",
    "predictable_variation",
    "weighted_integral",
    "write_path_csv",
]


# --------------------------------------------------------------------------
# jump size distributions


@dataclass(frozen=True)
class NormalJumps:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("Normal jump std must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.std, size=n)

    def moment(self, k: int) -> float:
        mu, s = self.mean, self.std
        if k == 1:
            return mu
        if k == 2:
            return mu * mu + s * s
        raise NotImplementedError(k)

    def truncated_second_moment(self, c: float) -> float:
        """E[J^2 1{|J| > c}] in closed form."""
        mu, s = self.mean, self.std
        if c <= 0:
            return self.moment(2)
        a = (c - mu) / s
        b = (-c - mu) / s
        phi_a, phi_b = _npdf(a), _npdf(b)
        upper = mu * mu * special.ndtr(-a) + 2 * mu * s * phi_a + s * s * (a * phi_a + special.ndtr(-a))
        lower = mu * mu * special.ndtr(b) - 2 * mu * s * phi_b + s * s * (special.ndtr(b) - b * phi_b)
        return float(upper + lower)

    def compensated_cf(self, x: float) -> complex:
        """E[exp(ixJ) - 1 - ixJ]."""
        z = 1j * x * self.mean - 0.5 * (x * self.std) ** 2
        return _exp_remainder(z, 2) - 0.5 * (x * self.std) ** 2

    def density(self, y):
        return _npdf((np.asarray(y) - self.mean) / self.std) / self.std

    @property
    def support(self):
        return (-np.inf, np.inf)


@dataclass(frozen=True)
class UniformJumps:
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Uniform jumps need hi > lo")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=n)

    def moment(self, k: int) -> float:
        lo, hi = self.lo, self.hi
        return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))

    def truncated_second_moment(self, c: float) -> float:
        c = max(c, 0.0)
        lo, hi = self.lo, self.hi

        def cube_mass(a, b):
            return (b ** 3 - a ** 3) / 3.0 if b > a else 0.0

        mass = cube_mass(max(lo, c), hi) + cube_mass(lo, min(hi, -c))
        return mass / (hi - lo)

    def compensated_cf(self, x: float) -> complex:
        lo, hi = self.lo, self.hi
        if x == 0.0:
            return 0j
        # int (e^{ixy} - 1 - ixy) dy has antiderivative r3(ixy) / (ix)
        num = _exp_remainder(1j * x * hi, 3) - _exp_remainder(1j * x * lo, 3)
        return num / (1j * x * (hi - lo))

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y >= self.lo) & (y <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    @property
    def support(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class DiscreteJumps:
    points: tuple
    probs: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        prb = tuple(float(p) for p in self.probs)
        if len(pts) == 0 or len(pts) != len(prb):
            raise ValueError("points and probs must be non-empty and of equal length")
        if min(prb) < 0 or not math.isclose(math.fsum(prb), 1.0, abs_tol=1e-12):
            raise ValueError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", prb)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.points), size=n, p=np.asarray(self.probs))
        return np.asarray(self.points)[idx]

    def moment(self, k: int) -> float:
        return math.fsum(p * x ** k for x, p in zip(self.points, self.probs))

    def truncated_second_moment(self, c: float) -> float:
        return math.fsum(p * x * x for x, p in zip(self.points, self.probs) if abs(x) > c)

    def compensated_cf(self, x: float) -> complex:
        # cos(y) - 1 = -2 sin^2(y/2) keeps small arguments accurate
        re = math.fsum(-2.0 * p * math.sin(0.5 * x * y) ** 2 for y, p in zip(self.points, self.probs))
        im = math.fsum(p * (math.sin(x * y) - x * y) for y, p in zip(self.points, self.probs))
        return complex(re, im)


def _exp_remainder(z: complex, order: int) -> complex:
    """``e^z - sum_{k<order} z^k / k!`` without cancellation for small ``|z|``."""
    if abs(z) > 0.5:
        return complex(np.exp(z) - sum(z ** k / math.factorial(k) for k in range(order)))
    term = z ** order / math.factorial(order)
    total = term
    k = order
    while abs(term) > 1e-18 * abs(total):
        k += 1
        term = term * z / k
        total += term
    return complex(total)


def _npdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def compensated_cf_quadrature(jumps, x: float, rtol: float = 1e-8) -> complex:
    """E[exp(ixJ) - 1 - ixJ] by adaptive quadrature against the jump density.

    Independent of the closed forms; used as their cross-check.
    """
    if isinstance(jumps, DiscreteJumps):
        return jumps.compensated_cf(x)
    lo, hi = jumps.support
    re, _ = integrate.quad(lambda y: (math.cos(x * y) - 1.0) * jumps.density(y), lo, hi,
                           epsrel=rtol, epsabs=0.0, limit=200)
    im, _ = integrate.quad(lambda y: (math.sin(x * y) - x * y) * jumps.density(y), lo, hi,
                           epsrel=rtol, epsabs=0.0, limit=200)
    return complex(re, im)


# --------------------------------------------------------------------------
# model and paths


@dataclass(frozen=True)
class LevyModel:
    """Drift + Gaussian + compound Poisson model.

    ``m = b + lam E[J]`` is the mean rate and ``sigma2 = sigma_c^2 + lam E[J^2]``
    the variance rate of ``S``. A degenerate model (``sigma2 == 0``) can be
    built; the experiment harness refuses it.
    """

    drift: float = 0.0
    gaussian_vol: float = 1.0
    jump_intensity: float = 0.0
    jumps: NormalJumps | UniformJumps | DiscreteJumps = field(default_factory=NormalJumps)

    def __post_init__(self):
        if self.gaussian_vol < 0:
            raise ValueError("gaussian_vol must be >= 0")
        if self.jump_intensity < 0:
            raise ValueError("jump_intensity must be >= 0")

    @property
    def m(self) -> float:
        return self.drift + self.jump_intensity * self.jumps.moment(1)

    @property
    def sigma2(self) -> float:
        return self.gaussian_vol ** 2 + self.jump_intensity * self.jumps.moment(2)

    @property
    def is_degenerate(self) -> bool:
        return not self.sigma2 > 0


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One trajectory of ``S``.

    ``knot_times`` is the sorted union of the grid, the jump times and any
    extra knots requested at simulation time; ``knot_cont`` holds the
    continuous part ``b t + sigma_c W_t`` at each knot and ``grid_index``
    locates the grid points among the knots.
    """

    grid: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    knot_times: np.ndarray
    knot_cont: np.ndarray
    grid_index: np.ndarray
    drift: float
    seed_tag: int | None = None

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def martingale(self, m: float) -> np.ndarray:
        """``M = S - m t`` on the grid."""
        return self.values - m * self.grid

    def knot_values(self, m: float):
        """Return ``(times, left, right)`` over the knots: ``left`` is
        ``M_{t-}`` and ``right`` is ``M_t``."""
        csum = np.concatenate(([0.0], np.cumsum(self.jump_sizes)))
        before = csum[np.searchsorted(self.jump_times, self.knot_times, side="left")]
        upto = csum[np.searchsorted(self.jump_times, self.knot_times, side="right")]
        base = self.knot_cont - m * self.knot_times
        return self.knot_times, base + before, base + upto

    def gaussian_increments(self) -> np.ndarray:
        """``sigma_c (W_{t_{i+1}} - W_{t_i})`` per grid cell."""
        cont = self.knot_cont[self.grid_index]
        return np.diff(cont) - self.drift * np.diff(self.grid)

    def coarsened(self, factor: int) -> "SamplePath":
        """Same realization observed on every ``factor``-th grid point.

        All knots are kept, so jumps and the continuous part are unchanged;
        only the grid used by cell-wise integrals gets coarser.
        """
        n = self.grid.size - 1
        if factor < 1 or n % factor:
            raise InvalidStep(f"factor {factor} must divide the {n} grid cells")
        return SamplePath(
            grid=self.grid[::factor],
            values=self.values[::factor],
            jump_times=self.jump_times,
            jump_sizes=self.jump_sizes,
            knot_times=self.knot_times,
            knot_cont=self.knot_cont,
            grid_index=self.grid_index[::factor],
            drift=self.drift,
            seed_tag=self.seed_tag,
        )

    def reconstruct(self) -> np.ndarray:
        """Rebuild grid values from drift, Gaussian part and the jump log."""
        cont = self.knot_cont[self.grid_index]
        csum = np.concatenate(([0.0], np.cumsum(self.jump_sizes)))
        return cont + csum[np.searchsorted(self.jump_times, self.grid, side="right")]


def _make_grid(horizon: float, step: float) -> np.ndarray:
    if not (np.isfinite(horizon) and horizon > 0):
        raise InvalidHorizon(f"horizon must be positive, got {horizon}")
    if not (np.isfinite(step) and 0 < step <= horizon):
        raise InvalidStep(f"step must lie in (0, horizon], got {step}")
    n = max(1, math.ceil(horizon / step - 1e-9))
    grid = np.arange(n + 1, dtype=float) * step
    grid[-1] = horizon
    if n > 1 and grid[-2] >= horizon:
        grid = grid[:-1]
        grid[-1] = horizon
    return grid


def _draw_jumps(model: LevyModel, horizon: float, rng: np.random.Generator):
    lam = model.jump_intensity
    if lam == 0:
        return np.empty(0), np.empty(0)
    mean_count = lam * horizon
    batch = int(mean_count + 6.0 * math.sqrt(mean_count) + 16)
    arrivals = np.cumsum(rng.exponential(1.0 / lam, size=batch))
    while arrivals[-1] <= horizon:
        more = np.cumsum(rng.exponential(1.0 / lam, size=batch)) + arrivals[-1]
        arrivals = np.concatenate((arrivals, more))
    times = arrivals[arrivals <= horizon]
    return times, model.jumps.sample(rng, times.size)


def _assemble(model, grid, jump_times, jump_sizes, extra, rng, seed_tag) -> SamplePath:
    parts = [grid, jump_times]
    if extra is not None and len(extra):
        parts.append(np.asarray(extra, dtype=float))
    allt = np.concatenate(parts)
    order = np.argsort(allt, kind="stable")
    knot_times = allt[order]
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    grid_index = inv[: grid.size]

    dt = np.diff(knot_times)
    if model.gaussian_vol > 0:
        dw = rng.standard_normal(dt.size) * np.sqrt(dt)
        w = np.concatenate(([0.0], np.cumsum(dw)))
    else:
        w = np.zeros(knot_times.size)
    knot_cont = model.drift * knot_times + model.gaussian_vol * w

    csum = np.concatenate(([0.0], np.cumsum(jump_sizes)))
    values = knot_cont[grid_index] + csum[np.searchsorted(jump_times, grid, side="right")]
    return SamplePath(
        grid=grid,
        values=values,
        jump_times=jump_times,
        jump_sizes=jump_sizes,
        knot_times=knot_times,
        knot_cont=knot_cont,
        grid_index=grid_index,
        drift=model.drift,
        seed_tag=seed_tag,
    )


def simulate_path(
    model: LevyModel,
    horizon: float,
    step: float,
    rng: np.random.Generator,
    extra_knots: Sequence[float] | None = None,
    seed_tag: int | None = None,
) -> SamplePath:
    """Simulate ``S`` on ``[0, horizon]`` with grid spacing ``step``.

    Draw order is fixed (interarrival times, jump sizes, Gaussian
    increments), so a given generator state always yields the same path.
    """
    grid = _make_grid(horizon, step)
    jt, js = _draw_jumps(model, horizon, rng)
    return _assemble(model, grid, jt, js, extra_knots, rng, seed_tag)


def simulate_vector_path(models: Sequence[LevyModel], horizon, step, rng, seed_tag=None) -> list:
    """Independent scalar coordinates sharing one knot set.

    Each coordinate's Brownian part is also sampled at the other
    coordinates' jump times, so all coordinates have exact values on the
    merged knots.
    """
    grid = _make_grid(horizon, step)
    drawn = [_draw_jumps(mod, horizon, rng) for mod in models]
    paths = []
    for j, mod in enumerate(models):
        others = [drawn[k][0] for k in range(len(models)) if k != j]
        extra = np.concatenate(others) if others else None
        paths.append(_assemble(mod, grid, drawn[j][0], drawn[j][1], extra, rng, seed_tag))
    return paths


def _check_time(path: SamplePath, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > path.horizon * (1 + 1e-12)):
        raise OutOfHorizon(f"time outside [0, {path.horizon}]")
    return t


def quadratic_variation(path: SamplePath, model: LevyModel, t):
    """``[M]_t = sigma_c^2 t + sum_{s <= t} (Delta S_s)^2`` from the jump log."""
    t = _check_time(path, t)
    sq = np.concatenate(([0.0], np.cumsum(np.square(path.jump_sizes))))
    out = model.gaussian_vol ** 2 * t + sq[np.searchsorted(path.jump_times, t, side="right")]
    return float(out) if out.ndim == 0 else out


def predictable_variation(model: LevyModel, t):
    t = np.asarray(t, dtype=float)
    out = model.sigma2 * t
    return float(out) if out.ndim == 0 else out


def write_path_csv(path: SamplePath, model: LevyModel, values_file, jumps_file=None):
    """Dump ``(t, S, M, QV)`` on the grid and optionally the jump log ``(time, size)``."""
    mart = path.martingale(model.m)
    qv = quadratic_variation(path, model, path.grid)
    with open(values_file, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "S", "M", "QV"])
        for row in zip(path.grid, path.values, mart, qv):
            wr.writerow([repr(float(v)) for v in row])
    if jumps_file is not None:
        with open(jumps_file, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "size"])
            for row in zip(path.jump_times, path.jump_sizes):
                wr.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# deterministic weights


class _Weight:
    """Deterministic integrand ``w`` for ``int w dM``.

    ``log_scale(t)`` is the log of the normalizer ``v_t`` under which the
    weighted integral is stored (``Z = N / v``); it must be non-decreasing.
    ``zero_exponent`` is ``p`` when ``w(s) ~ s^p`` near zero.
    """

    zero_exponent = 0.0

    @property
    def singular_exponent(self) -> float:
        return max(-self.zero_exponent, 0.0)

    def log_w(self, s):
        raise NotImplementedError

    def log_scale(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def scaled_sq_integral(self, a, b):
        """``int_a^b w^2 ds / v_b^2`` per cell."""
        return _scaled_cell_integrals(self, a, b, power=2)

    def scaled_integral(self, a, b):
        """``int_a^b w ds / v_b`` per cell."""
        return _scaled_cell_integrals(self, a, b, power=1)


@dataclass(frozen=True)
class ConstantWeight(_Weight):
    value: float = 1.0

    def log_w(self, s):
        return np.full_like(np.asarray(s, dtype=float), math.log(self.value))

    def scaled_sq_integral(self, a, b):
        return self.value ** 2 * (np.asarray(b) - np.asarray(a))

    def scaled_integral(self, a, b):
        return self.value * (np.asarray(b) - np.asarray(a))


@dataclass(frozen=True)
class PowerWeight(_Weight):
    """``w(s) = s^p``."""

    exponent: float = 0.5

    def __post_init__(self):
        if self.exponent <= -0.5:
            raise WeightNotIntegrable("s^p is square integrable at 0 only for p > -1/2")

    @property
    def zero_exponent(self):
        return self.exponent

    def log_w(self, s):
        with np.errstate(divide="ignore"):
            return self.exponent * np.log(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class ExpWeight(_Weight):
    """``w(s) = scale * s^{-alpha/2} exp(s^{1-alpha} / (2(1-alpha)))``.

    Stored under the normalizer ``v_t = scale * exp(t^{1-alpha}/(2(1-alpha)))``
    so ``Z`` stays O(1) at horizons where ``w`` itself overflows. With
    ``scale = 1`` the normalized variance tends to ``sigma^2``; the
    ``1/(1-alpha)`` prefactor (``with_prefactor``) inflates it by
    ``(1-alpha)^{-2}``.
    """

    alpha: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def with_prefactor(cls, alpha: float) -> "ExpWeight":
        return cls(alpha=alpha, scale=1.0 / (1.0 - alpha))

    @property
    def zero_exponent(self):
        return -self.alpha / 2.0

    def clock(self, t):
        """``A_t = t^{1-alpha} / (1-alpha)``."""
        return np.power(np.asarray(t, dtype=float), 1.0 - self.alpha) / (1.0 - self.alpha)

    def log_w(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return math.log(self.scale) - 0.5 * self.alpha * np.log(s) + 0.5 * self.clock(s)

    def log_scale(self, t):
        return math.log(self.scale) + 0.5 * self.clock(t)

    def scaled_sq_integral(self, a, b):
        # int_a^b s^{-alpha} e^{A_s} ds = e^{A_b} - e^{A_a}
        return -np.expm1(self.clock(a) - self.clock(b))


_GL_LOW = np.polynomial.legendre.leggauss(3)
_GL_HIGH = np.polynomial.legendre.leggauss(5)
_GRADED_LEVELS = 60
_CHUNK = 200_000


def _gl(fun, a, b, ref, rule):
    nodes, weights = rule
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    return half * (fun(x, ref[:, None]) @ weights)


def _adaptive_gl(fun, a, b, ref, rtol=1e-8, max_depth=40):
    """Per-cell adaptive Gauss-Legendre: a cell is accepted when the 3- and
    5-point rules agree to ``rtol``; otherwise it is bisected."""
    out = np.zeros(a.size)
    idx = np.arange(a.size)
    for _ in range(max_depth):
        if idx.size == 0:
            return out
        mid = 0.5 * (a + b)
        coarse = _gl(fun, a, b, ref, _GL_LOW)
        fine = _gl(fun, a, b, ref, _GL_HIGH)
        ok = np.abs(fine - coarse) <= rtol * np.abs(fine) + 1e-300
        np.add.at(out, idx[ok], fine[ok])
        bad = ~ok
        if not np.all(np.isfinite(fine[bad])):
            raise WeightNotIntegrable("weight integral is not finite on some cell")
        idx = np.concatenate((idx[bad], idx[bad]))
        a, b, ref = (np.concatenate((a[bad], mid[bad])),
                     np.concatenate((mid[bad], b[bad])),
                     np.concatenate((ref[bad], ref[bad])))
    if idx.size:
        raise WeightNotIntegrable("adaptive quadrature did not converge")
    return out


def _scaled_cell_integrals(weight: _Weight, a, b, power: int, rtol: float = 1e-8):
    """``int_a^b w^power ds / v_b^power`` for every cell ``[a_i, b_i]``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    ref = power * weight.log_scale(b) * np.ones_like(b)

    def fun(x, off):
        return np.exp(power * weight.log_w(x) - off)

    # w^power ~ s^-q near zero
    q = -power * weight.zero_exponent
    if q >= 1.0:
        raise WeightNotIntegrable(f"w^{power} ~ s^-{q} is not integrable at 0")
    out = np.empty(a.size)
    # non-integer powers are not smooth at 0 and defeat plain bisection there
    at_zero = (a == 0.0) & (not float(q).is_integer())
    regular = np.flatnonzero(~at_zero)
    for lo in range(0, regular.size, _CHUNK):
        sel = regular[lo: lo + _CHUNK]
        out[sel] = _adaptive_gl(fun, a[sel], b[sel], ref[sel], rtol)
    for i in np.flatnonzero(at_zero):
        # graded subdivision toward zero, then the analytic antiderivative
        # of s^-q on the last sliver [0, eps]
        k = np.arange(_GRADED_LEVELS)
        hi = b[i] * 0.5 ** k
        lo_ = b[i] * 0.5 ** (k + 1)
        refs = np.full(k.size, ref[i])
        body = _adaptive_gl(fun, lo_, hi, refs, rtol).sum()
        eps = lo_[-1]
        tail = float(fun(np.array([eps]), ref[i])[0]) * eps / (1.0 - q)
        out[i] = body + tail
    if not np.all(np.isfinite(out)):
        raise WeightNotIntegrable("weight integral overflowed")
    return out


# --------------------------------------------------------------------------
# weighted integral


@dataclass(frozen=True, eq=False)
class WeightedPath:
    """``N_t = int_0^t w d(S - m s)`` on the grid, stored as ``Z = N / v``
    with ``log v`` in ``log_scale``."""

    grid: np.ndarray
    z: np.ndarray
    log_scale: np.ndarray
    weight: _Weight
    increments: np.ndarray | None = None

    def raw_values(self) -> np.ndarray:
        """``N`` accumulated directly from unscaled cell increments, without
        the rescaling recursion. Overflows for large horizons."""
        if self.increments is None:
            raise ValueError("path was built without increments")
        with np.errstate(over="ignore"):
            unscaled = self.increments * np.exp(self.log_scale[1:])
        return np.concatenate(([0.0], np.cumsum(unscaled)))

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.z * np.exp(self.log_scale)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


def _rescaled_recursion(x, log_v, cap=600.0):
    """``z[0] = 0, z[i+1] = (v_i / v_{i+1}) z[i] + x[i]``, vectorized in
    blocks over which ``log v`` grows by at most ``cap``."""
    n = x.size
    z = np.zeros(n + 1)
    if np.any(np.diff(log_v) < 0):
        for i in range(n):
            z[i + 1] = math.exp(log_v[i] - log_v[i + 1]) * z[i] + x[i]
        return z
    start = 0
    while start < n:
        end = int(np.searchsorted(log_v, log_v[start] + cap, side="right")) - 1
        end = min(max(end, start + 1), n)
        lift = log_v[start + 1: end + 1] - log_v[start]
        acc = z[start] + np.cumsum(x[start:end] * np.exp(lift))
        z[start + 1: end + 1] = np.exp(-lift) * acc
        start = end
    return z


def weighted_integral(
    path: SamplePath,
    model: LevyModel,
    weight: _Weight,
    rng: np.random.Generator | None = None,
) -> WeightedPath:
    """Integrate a deterministic weight against ``M = S - m t`` cell by cell.

    Per cell ``[t_i, t_{i+1}]`` of length ``h``:

    * Gaussian part: conditionally on the path's own Brownian increment
      ``dB``, ``int w dB`` is ``(I1/h) dB + N(0, sigma_c^2 (I2 - I1^2/h))``
      with ``I1 = int w``, ``I2 = int w^2``. The marginal law is exactly
      ``N(0, sigma_c^2 I2)`` and ``w = 1`` reproduces ``M`` pathwise.
    * jumps: ``w(tau) * size`` for each logged jump in the cell.
    * drift: ``(b - m) I1``.

    ``rng`` feeds the conditional residual; when omitted it is derived from
    ``path.seed_tag``.
    """
    grid = path.grid
    a, b = grid[:-1], grid[1:]
    h = b - a
    log_v = np.asarray(weight.log_scale(grid), dtype=float) * np.ones_like(grid)
    incr = np.zeros(h.size)

    sigma_c = model.gaussian_vol
    drift_gap = model.drift - model.m
    need_i1 = sigma_c > 0 or drift_gap != 0
    i1 = weight.scaled_integral(a, b) if need_i1 else None

    if sigma_c > 0:
        i2 = weight.scaled_sq_integral(a, b)
        resid = np.sqrt(np.maximum(i2 - i1 * i1 / h, 0.0))
        if rng is None:
            if path.seed_tag is None:
                raise ValueError("weighted_integral needs rng when the path has no seed_tag")
            rng = np.random.default_rng([path.seed_tag, 1])
        incr += (i1 / h) * path.gaussian_increments() + sigma_c * resid * rng.standard_normal(h.size)
    if drift_gap != 0:
        incr += drift_gap * i1
    if path.jump_times.size:
        cell = np.searchsorted(grid, path.jump_times, side="left") - 1
        cell = np.clip(cell, 0, h.size - 1)
        contrib = np.exp(weight.log_w(path.jump_times) - log_v[cell + 1]) * path.jump_sizes
        incr += np.bincount(cell, weights=contrib, minlength=h.size)

    z = _rescaled_recursion(incr, log_v)
    if not np.all(np.isfinite(z)):
        raise WeightNotIntegrable("weighted integral is not finite")
    return WeightedPath(grid=grid, z=z, log_scale=log_v, weight=weight, increments=incr)
