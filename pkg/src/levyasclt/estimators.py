"""Variance estimators, quadratic strong law averages and their limit statistics.

All time integrals are trapezoid sums over the merged knots of the path
(grid points and exact jump times). Inside a cell the integrand is taken at
``M_{t_k}`` on the left and ``M_{t_{k+1}-}`` on the right, which is the
left-limit convention ``M_{s-}``. Integrals against ``d log det V_s^2`` use
the exact increments of ``log det V^2`` between knots.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatch,
    DomainTooSmall,
    MissingEvalTime,
    OutOfHorizon,
    WeightMismatch,
)
from .levy import ExpWeight, LevyModel, SamplePath, WeightedPath, quadratic_variation
from .normalization import NormalizationFamily

__all__ = [
    "EstimatorKind",
    "EstimatorSeries",
    "LogRate",
    "PolyRate",
    "sigma2_hat",
    "sigma2_tilde",
    "sigma2_tilde_raw",
    "matrix_lfq",
    "clt_statistic",
    "clt_constants",
    "matrix_clt_statistic",
    "lil_statistic",
    "lil_sup",
    "lil_bound",
    "scalar_lil_bound",
    "lindeberg_diagnostic",
    "hypothesis_rate_check",
    "rate_boundedness",
    "char_exponent",
    "gaussian_gap",
]


class EstimatorKind(str, enum.Enum):
    SIGMA_HAT = "SigmaHat"
    SIGMA_TILDE = "SigmaTilde"
    MATRIX_LFQ = "MatrixLFQ"
    CLT_STAT = "CltStat"
    MATRIX_CLT_STAT = "MatrixCltStat"
    LIL_STAT = "LilStat"


@dataclass(frozen=True, eq=False)
class EstimatorSeries:
    kind: EstimatorKind
    eval_times: np.ndarray
    values: np.ndarray
    config_hash: str = ""

    def value_at(self, t: float):
        idx = np.flatnonzero(np.isclose(self.eval_times, t, rtol=1e-12, atol=0.0))
        if idx.size == 0:
            raise MissingEvalTime(f"t = {t} is not an evaluation time of this series")
        return self.values[idx[0]]

    def rows(self):
        for t, v in zip(self.eval_times, self.values):
            flat = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
            yield [self.kind.value, repr(float(t))] + [repr(float(x)) for x in flat]

    def to_csv(self, path, metadata: dict | None = None):
        """Write ``(kind, t, value...)`` rows, matrices flattened row-major,
        plus a JSON sidecar ``<path>.json``."""
        width = int(np.prod(self.values.shape[1:])) if self.values.ndim > 1 else 1
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["kind", "t"] + [f"value_{i}" for i in range(width)])
            wr.writerows(self.rows())
        side = {"kind": self.kind.value, "config_hash": self.config_hash,
                "count": int(self.eval_times.size), **(metadata or {})}
        with open(f"{path}.json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)


def _check_eval(eval_times, horizon: float) -> np.ndarray:
    ts = np.atleast_1d(np.asarray(eval_times, dtype=float))
    if np.any(ts <= 0) or np.any(ts > horizon * (1 + 1e-12)):
        raise OutOfHorizon(f"evaluation times must lie in (0, {horizon}]")
    return ts


def _trapezoid_cumulative(left_vals, right_vals, dx):
    """Cumulative trapezoid where a cell uses ``right_vals[k]`` at its left
    end and ``left_vals[k+1]`` at its right end."""
    cells = 0.5 * (right_vals[:-1] + left_vals[1:]) * dx.reshape(dx.shape + (1,) * (right_vals.ndim - 1))
    return np.concatenate((np.zeros((1,) + right_vals.shape[1:]), np.cumsum(cells, axis=0)))


def _interp_rows(t, xp, fp):
    if fp.ndim == 1:
        return np.interp(t, xp, fp)
    flat = fp.reshape(fp.shape[0], -1)
    out = np.stack([np.interp(t, xp, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
    return out.reshape((np.size(t),) + fp.shape[1:])


# --------------------------------------------------------------------------
# scalar variance estimators


def sigma2_hat(path: SamplePath, m: float, eval_times, config_hash: str = "") -> EstimatorSeries:
    """``(log(1+t))^{-1} int_0^t (S_r - m r)^2 / (1+r)^2 dr``.

    ``m`` is the true mean rate of the model; it is never estimated here.
    Written as ``int (M_r^2 / (1+r)) d log(1+r)`` and integrated against the
    exact increments of ``log(1+r)``, the same rule :func:`matrix_lfq` uses.
    """
    ts = _check_eval(eval_times, path.horizon)
    times, left, right = path.knot_values(m)
    den = 1.0 + times
    cum = _trapezoid_cumulative(left * left / den, right * right / den, np.diff(np.log1p(times)))
    values = _interp_rows(ts, times, cum) / np.log1p(ts)
    return EstimatorSeries(EstimatorKind.SIGMA_HAT, ts, values, config_hash)


def _check_weight(wpath: WeightedPath, alpha: float) -> ExpWeight:
    w = wpath.weight
    if not isinstance(w, ExpWeight) or not math.isclose(w.alpha, alpha, rel_tol=0, abs_tol=1e-15):
        raise WeightMismatch(f"weighted path was not built with the exponential weight for alpha={alpha}")
    return w


def sigma2_tilde(wpath: WeightedPath, alpha: float, eval_times, config_hash: str = "") -> EstimatorSeries:
    """``(1-alpha)/t^{1-alpha} int_0^t exp(-s^{1-alpha}/(1-alpha)) N_s^2 s^{-alpha} ds``.

    With ``A_s = s^{1-alpha}/(1-alpha)`` the integrand is ``(e^{-A_s/2} N_s)^2 dA_s``
    and ``e^{-A_s/2} N_s`` is recovered from the stored ``Z`` as
    ``Z_s exp(log v_s - A_s/2)``, so no intermediate leaves double range.
    The ``dA`` integral is a trapezoid over exact increments of ``A``.
    """
    w = _check_weight(wpath, alpha)
    ts = _check_eval(eval_times, wpath.horizon)
    clock = w.clock(wpath.grid)
    z = wpath.z * np.exp(wpath.log_scale - 0.5 * clock)
    sq = z * z
    cum = _trapezoid_cumulative(sq, sq, np.diff(clock))
    values = _interp_rows(ts, wpath.grid, cum) / w.clock(ts)
    return EstimatorSeries(EstimatorKind.SIGMA_TILDE, ts, values, config_hash)


def sigma2_tilde_raw(wpath: WeightedPath, alpha: float, eval_times) -> EstimatorSeries:
    """Same estimator evaluated literally from the unscaled ``N``.

    Only usable while ``exp(A_t)`` fits in a double (t <= ~50 for alpha = 1/2);
    it exists to validate the rescaled evaluation.
    """
    w = _check_weight(wpath, alpha)
    ts = _check_eval(eval_times, wpath.horizon)
    raw = wpath.raw_values()
    clock = w.clock(wpath.grid)
    integrand = np.exp(-clock) * raw * raw
    cum = _trapezoid_cumulative(integrand, integrand, np.diff(clock))
    values = _interp_rows(ts, wpath.grid, cum) * (1.0 - alpha) / np.power(ts, 1.0 - alpha)
    return EstimatorSeries(EstimatorKind.SIGMA_TILDE, ts, values)


# --------------------------------------------------------------------------
# vector martingale helpers


def _as_path_list(paths) -> list:
    if isinstance(paths, SamplePath):
        return [paths]
    return list(paths)


def _normalized_knots(paths, means, family: NormalizationFamily):
    """Knot times, ``V^{-1} M_{t-}``, ``V^{-1} M_t`` and ``log det V_t^2``."""
    paths = _as_path_list(paths)
    means = np.broadcast_to(np.asarray(means, dtype=float), (len(paths),))
    if family.dim != len(paths):
        raise DimensionMismatch(f"family has dim {family.dim} but {len(paths)} coordinates were given")
    knots = paths[0].knot_times
    lefts, rights = [], []
    for p, m in zip(paths, means):
        if p.knot_times.shape != knots.shape or not np.array_equal(p.knot_times, knots):
            raise DimensionMismatch("coordinates do not share a knot set; use simulate_vector_path")
        _, lft, rgt = p.knot_values(m)
        lefts.append(lft)
        rights.append(rgt)
    left = family.normalize(knots, np.stack(lefts, axis=1))
    right = family.normalize(knots, np.stack(rights, axis=1))
    ell = np.asarray(family.logdet(knots), dtype=float)
    if not np.all(np.isfinite(ell)):
        raise ValueError(f"log det V_t^2 is not finite on the knots for family {family.name}")
    return knots, left, right, ell


def matrix_lfq(paths, means, family: NormalizationFamily, eval_times, config_hash: str = "") -> EstimatorSeries:
    """``(log det V_R^2)^{-1} int_0^R V^{-1} M_{s-} M_{s-}^* V^{-*} d log det V_s^2``."""
    paths = _as_path_list(paths)
    ts = _check_eval(eval_times, paths[0].horizon)
    knots, left, right, ell = _normalized_knots(paths, means, family)
    outer_l = left[:, :, None] * left[:, None, :]
    outer_r = right[:, :, None] * right[:, None, :]
    cum = _trapezoid_cumulative(outer_l, outer_r, np.diff(ell))
    norm = np.asarray(family.logdet(ts), dtype=float)
    values = _interp_rows(ts, knots, cum) / norm[:, None, None]
    values = 0.5 * (values + np.swapaxes(values, 1, 2))
    return EstimatorSeries(EstimatorKind.MATRIX_LFQ, ts, values, config_hash)


def _centered_trace_cumulative(paths, means, family, C):
    knots, left, right, ell = _normalized_knots(paths, means, family)
    trace_c = float(np.trace(np.atleast_2d(C)))
    fl = np.sum(left * left, axis=1) - trace_c
    fr = np.sum(right * right, axis=1) - trace_c
    return knots, _trapezoid_cumulative(fl, fr, np.diff(ell))


# --------------------------------------------------------------------------
# limit statistics


@dataclass(frozen=True)
class LogRate:
    """``sqrt(log(1+t)) (sigma_hat^2 - sigma^2) => N(0, 4 sigma^4)``."""

    def scale(self, t):
        return np.sqrt(np.log1p(t))

    def target_variance(self, sigma2: float) -> float:
        return 4.0 * sigma2 ** 2


@dataclass(frozen=True)
class PolyRate:
    """``t^{(1-alpha)/2} (sigma_tilde - sigma^2) => N(0, 4(1-alpha) sigma^4)``."""

    alpha: float

    def scale(self, t):
        return np.power(t, 0.5 * (1.0 - self.alpha))

    def target_variance(self, sigma2: float) -> float:
        return 4.0 * (1.0 - self.alpha) * sigma2 ** 2


def clt_statistic(series: EstimatorSeries, sigma2_true: float, t: float, rate) -> float:
    value = float(series.value_at(t))
    return float(rate.scale(t)) * (value - sigma2_true)


def clt_constants(U, C) -> dict:
    """Limit standard deviations of the centered LFQ statistic.

    ``matrix``: ``2 sqrt(tr S tr(C~ R C R))`` with ``R`` solving
    ``R U + U^* R = I``, ``C~ = U C + C U^*``. For ``d = 1`` also the scalar
    form ``2 eta C`` and the variance-estimator form ``2 C``.
    """
    U = linalg.as_square(U)
    C = linalg.symmetrize(C)
    R = linalg.lyapunov_solve(U)
    S = U + U.T
    C_tilde = U @ C + C @ U.T
    inner = float(np.trace(C_tilde @ R @ C @ R))
    out = {"matrix": 2.0 * math.sqrt(float(np.trace(S)) * inner),
           "lil_matrix": math.sqrt(float(np.trace(S)) * inner)}
    if U.shape == (1, 1):
        eta, c = float(U[0, 0]), float(C[0, 0])
        out["scalar"] = 2.0 * eta * c
        out["applied"] = 2.0 * c
    return out


def matrix_clt_statistic(paths, means, family: NormalizationFamily, C, t: float):
    """Return ``(statistic, target_std)`` for
    ``(log det V_t^2)^{-1/2} int_0^t tr[V^{-1} M_{s-} M_{s-}^* V^{-*} - C] d log det V_s^2``."""
    paths = _as_path_list(paths)
    C = linalg.symmetrize(C) if np.ndim(C) else np.array([[float(C)]])
    target = clt_constants(family.U, C)["matrix"]
    ts = _check_eval([t], paths[0].horizon)
    knots, cum = _centered_trace_cumulative(paths, means, family, C)
    ell_t = float(family.logdet(ts[0]))
    stat = float(np.interp(ts[0], knots, cum)) / math.sqrt(ell_t)
    return stat, target


def _h(u):
    return np.sqrt(2.0 * u * np.log(np.log(u)))


def lil_statistic(paths, means, family: NormalizationFamily, C, eval_times, config_hash: str = "") -> EstimatorSeries:
    """``h(log det V_t^2)^{-1} int_0^t tr[V^{-1} M_{s-} M_{s-}^* V^{-*} - C] d log det V_s^2``
    with ``h(u) = sqrt(2 u log log u)``.

    Raises
    ------
    DomainTooSmall
        If ``log det V_t^2 <= e`` at some evaluation time.
    """
    paths = _as_path_list(paths)
    C = linalg.symmetrize(C) if np.ndim(C) else np.array([[float(C)]])
    ts = _check_eval(eval_times, paths[0].horizon)
    ell = np.asarray(family.logdet(ts), dtype=float)
    if np.any(ell <= math.e):
        bad = float(ts[np.argmax(ell <= math.e)])
        raise DomainTooSmall(f"log det V_t^2 <= e at t = {bad}")
    knots, cum = _centered_trace_cumulative(paths, means, family, C)
    values = np.interp(ts, knots, cum) / _h(ell)
    return EstimatorSeries(EstimatorKind.LIL_STAT, ts, values, config_hash)


def lil_sup(paths, means, family: NormalizationFamily, C, t_lo: float, t_hi: float) -> float:
    """``sup |LIL statistic|`` over every knot in ``[t_lo, t_hi]``.

    Taken on the knots rather than on a coarse evaluation grid so that
    excursions between evaluation times are not missed.
    """
    paths = _as_path_list(paths)
    C = linalg.symmetrize(C) if np.ndim(C) else np.array([[float(C)]])
    if not 0 < t_lo < t_hi <= paths[0].horizon * (1 + 1e-12):
        raise OutOfHorizon(f"window [{t_lo}, {t_hi}] must lie in (0, {paths[0].horizon}]")
    if float(family.logdet(t_lo)) <= math.e:
        raise DomainTooSmall(f"log det V_t^2 <= e at t = {t_lo}")
    knots, cum = _centered_trace_cumulative(paths, means, family, C)
    sel = (knots >= t_lo) & (knots <= t_hi * (1 + 1e-12))
    ell = np.asarray(family.logdet(knots[sel]), dtype=float)
    return float(np.max(np.abs(cum[sel] / _h(ell))))


def lil_bound(family: NormalizationFamily, C) -> float:
    """``sqrt(tr S tr(C~ R C R))``."""
    C = linalg.symmetrize(C) if np.ndim(C) else np.array([[float(C)]])
    return clt_constants(family.U, C)["lil_matrix"]


def scalar_lil_bound(eta: float, C: float) -> float:
    """``2 eta C``."""
    return 2.0 * eta * C


# --------------------------------------------------------------------------
# hypothesis diagnostics


def _require_scalar(family):
    if not family.scalar:
        raise ValueError(f"{family.name} is not a scalar normalization")


def lindeberg_diagnostic(model: LevyModel, family: NormalizationFamily, t: float, delta: float) -> float:
    """``(lam t / v_t^2) E[J^2 1{|J| > delta v_t}]``, the Lindeberg integral
    of the normalized jump measure."""
    _require_scalar(family)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if model.jump_intensity == 0 or t == 0:
        return 0.0
    log_v = float(family.log_v(t))
    v = math.exp(log_v)
    tail = model.jumps.truncated_second_moment(delta * v)
    return model.jump_intensity * t * math.exp(-2.0 * log_v) * tail


def hypothesis_rate_check(path: SamplePath, model: LevyModel, family: NormalizationFamily, eval_times, rho: float):
    """``(log v_t^2)^rho |v_t^{-2} [M]_t - sigma^2|`` at each evaluation time."""
    _require_scalar(family)
    if not rho > 0.5:
        raise ValueError("rho must exceed 1/2")
    ts = np.atleast_1d(np.asarray(eval_times, dtype=float))
    qv = np.atleast_1d(quadratic_variation(path, model, ts))
    lv2 = 2.0 * np.asarray(family.log_v(ts), dtype=float)
    return np.power(lv2, rho) * np.abs(qv * np.exp(-lv2) - model.sigma2)


def rate_boundedness(series, tail_fraction: float = 0.25) -> float:
    """Max over median of the last ``tail_fraction`` of a diagnostic series;
    values up to 10 are read as bounded."""
    s = np.asarray(series, dtype=float)
    tail = s[int(math.floor((1.0 - tail_fraction) * s.size)):]
    med = float(np.median(tail))
    if med == 0.0:
        return 1.0 if float(np.max(tail)) == 0.0 else math.inf
    return float(np.max(tail)) / med


def char_exponent(model: LevyModel, family: NormalizationFamily, u: float, t: float) -> complex:
    """``Phi_t(u / v_t) = exp(B_t(u / v_t))`` with
    ``B_t(x) = -x^2 sigma_c^2 t / 2 + t lam E[exp(ixJ) - 1 - ixJ]``."""
    _require_scalar(family)
    if t == 0 or u == 0:
        return complex(1.0)
    x = u * math.exp(-float(family.log_v(t)))
    b = -0.5 * x * x * model.gaussian_vol ** 2 * t
    if model.jump_intensity > 0:
        b = b + t * model.jump_intensity * model.jumps.compensated_cf(x)
    return complex(np.exp(b))


def gaussian_gap(model: LevyModel, family: NormalizationFamily, u: float, t: float) -> float:
    """``|Phi_t(u / v_t) - exp(-sigma^2 u^2 / 2)|``."""
    return abs(char_exponent(model, family, u, t) - math.exp(-0.5 * model.sigma2 * u * u))
