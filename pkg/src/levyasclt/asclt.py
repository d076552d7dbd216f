"""Logarithmically weighted empirical measures and their distance to a Gaussian."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NonScalarMeasure, OutOfHorizon, TooFewAtoms
from .levy import SamplePath, WeightedPath
from .normalization import NormalizationFamily

__all__ = [
    "EmpiricalMeasure",
    "log_empirical_measure",
    "ks_distance",
    "marginal_ks",
    "cf_distance",
]

MIN_ATOMS = 10


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted atoms; ``locations`` is ``(n,)`` or ``(n, d)``."""

    locations: np.ndarray
    weights: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if loc.shape[0] != w.shape[0]:
            raise ValueError("one weight per atom")
        if w.shape[0] < MIN_ATOMS:
            raise TooFewAtoms(f"need at least {MIN_ATOMS} atoms, got {w.shape[0]}")
        if np.any(w < 0) or not np.all(np.isfinite(loc)):
            raise ValueError("weights must be non-negative and locations finite")
        total = w.sum()
        if self.normalized:
            if not total > 0:
                raise ValueError("total weight is zero")
            w = w / total
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return 1 if self.locations.ndim == 1 else self.locations.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            if self.locations.ndim == 1:
                wr.writerow(["location", "weight"])
                for x, w in zip(self.locations, self.weights):
                    wr.writerow([repr(float(x)), repr(float(w))])
            else:
                wr.writerow([f"location_{j}" for j in range(self.dim)] + ["weight"])
                for x, w in zip(self.locations, self.weights):
                    wr.writerow([repr(float(v)) for v in x] + [repr(float(w))])


def _trapezoid_node_weights(ell: np.ndarray) -> np.ndarray:
    d = np.diff(ell)
    w = np.zeros(ell.size)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def log_empirical_measure(source, family: NormalizationFamily, R: float, subsample: int = 1,
                          m: float = 0.0) -> EmpiricalMeasure:
    """``(log det V_R^2)^{-1} int_0^R delta_{Z_r} d log det V_r^2`` with ``Z = V^{-1} M``.

    ``source`` is a :class:`SamplePath` (then ``m`` is its mean rate), a
    list of coordinate paths, or a :class:`WeightedPath`; for the latter the
    stored rescaled ``Z`` is converted to ``V^{-1} N`` in log space. Atoms sit
    at every ``subsample``-th grid point up to ``R``, weighted by the
    trapezoid share of ``Delta log det V^2``. Atoms where ``log det V^2`` is
    not finite (e.g. ``t = 0`` for a normalizer that blows up there) are
    dropped.
    """
    if subsample < 1:
        raise ValueError("subsample must be >= 1")
    if isinstance(source, WeightedPath):
        grid = source.grid
        sel = np.flatnonzero(grid <= R * (1 + 1e-12))[::subsample]
        t = grid[sel]
        if R > source.horizon * (1 + 1e-12):
            raise OutOfHorizon(f"R = {R} beyond horizon {source.horizon}")
        if not (family.scalar and family.dim == 1 and hasattr(family, "log_v")):
            raise NonScalarMeasure("weighted paths pair with scalar families only")
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            factor = np.exp(source.log_scale[sel] - np.asarray(family.log_v(t), dtype=float))
        z = (source.z[sel] * factor)[:, None]
    else:
        paths = [source] if isinstance(source, SamplePath) else list(source)
        if R > paths[0].horizon * (1 + 1e-12):
            raise OutOfHorizon(f"R = {R} beyond horizon {paths[0].horizon}")
        grid = paths[0].grid
        sel = np.flatnonzero(grid <= R * (1 + 1e-12))[::subsample]
        t = grid[sel]
        means = np.broadcast_to(np.asarray(m, dtype=float), (len(paths),))
        mart = np.stack([p.martingale(mu)[sel] for p, mu in zip(paths, means)], axis=1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            z = family.normalize(t, mart)

    with np.errstate(divide="ignore", invalid="ignore"):
        ell = np.asarray(family.logdet(t), dtype=float)
    keep = np.isfinite(ell) & np.all(np.isfinite(z), axis=1)
    t, z, ell = t[keep], z[keep], ell[keep]
    if t.size < MIN_ATOMS:
        raise TooFewAtoms(f"only {t.size} admissible atoms up to R = {R}")
    weights = _trapezoid_node_weights(ell)
    loc = z[:, 0] if z.shape[1] == 1 else z
    return EmpiricalMeasure(loc, weights)


def _scalar(measure: EmpiricalMeasure):
    if measure.locations.ndim != 1:
        raise NonScalarMeasure("measure has vector atoms; use marginal_ks")
    return measure.locations, measure.weights


def _ks(x, w, var: float) -> float:
    if not var > 0:
        raise ValueError("Gaussian variance must be positive")
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    uniq, start = np.unique(xs, return_index=True)
    mass = np.add.reduceat(ws, start)
    upper = np.minimum(np.cumsum(mass), 1.0)
    lower = upper - mass
    cdf = special.ndtr(uniq / math.sqrt(var))
    return float(max(np.max(np.abs(upper - cdf)), np.max(np.abs(lower - cdf))))


def ks_distance(measure: EmpiricalMeasure, gaussian_var: float) -> float:
    """Sup distance between the weighted ECDF and the ``N(0, C)`` CDF,
    checked at both one-sided limits of every atom."""
    x, w = _scalar(measure)
    return _ks(x, w, gaussian_var)


def marginal_ks(measure: EmpiricalMeasure, C) -> list:
    """Per-coordinate KS distances against the diagonal of ``C``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    loc = measure.locations if measure.locations.ndim == 2 else measure.locations[:, None]
    return [_ks(loc[:, j], measure.weights, float(C[j, j])) for j in range(loc.shape[1])]


def cf_distance(measure: EmpiricalMeasure, gaussian_var, u_grid) -> float:
    """``max_u |sum_j w_j exp(i u Z_j) - exp(-u^2 C / 2)|`` over ``u_grid``.

    For vector atoms ``u_grid`` holds vectors and ``gaussian_var`` is a matrix.
    """
    u = np.asarray(u_grid, dtype=float)
    if u.size == 0:
        raise ValueError("u_grid must be non-empty")
    if np.any(np.abs(u) > 10):
        raise ValueError("|u| must not exceed 10")
    if measure.locations.ndim == 1:
        u = u.reshape(-1)
        emp = np.exp(1j * np.outer(u, measure.locations)) @ measure.weights
        target = np.exp(-0.5 * u * u * float(gaussian_var))
    else:
        C = np.atleast_2d(np.asarray(gaussian_var, dtype=float))
        u = u.reshape(-1, measure.dim)
        emp = np.exp(1j * u @ measure.locations.T) @ measure.weights
        target = np.exp(-0.5 * np.einsum("ij,jk,ik->i", u, C, u))
    return float(np.max(np.abs(emp - target)))
