"""Deterministic normalization families ``V_t`` and their regularity checks.

A family carries its witnesses explicitly: the weight ``a_t``, its
primitive ``A_t``, the limit matrix ``U`` of ``a_t^{-1} V_t^{-1} V_t'`` and
the remainder ``Delta_t``. :func:`check_conditions` then verifies them on a
sampled grid instead of trusting them.

Scalar families (``V_t = v_t I``) expose ``log_v`` and ``dlog_v`` so that
fast-growing normalizers never have to be materialized.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import linalg
from .errors import Singular

__all__ = [
    "NormalizationFamily",
    "SqrtScalar",
    "PowerDiag",
    "WeightedExp",
    "ExpScale",
    "CustomFamily",
    "ConditionReport",
    "check_conditions",
    "logdet_identity_residual",
    "lemma_norm_bound_margin",
    "smallest_certifying_n0",
    "first_admissible_time",
    "geometric_grid",
]


def geometric_grid(t0: float, ratio: float, count: int) -> np.ndarray:
    return t0 * ratio ** np.arange(count, dtype=float)


class NormalizationFamily:
    """Base class. Subclasses define at least ``V``, ``dV``, ``a``, ``A``
    and ``U``; scalar ones define ``log_v`` and ``dlog_v`` instead of
    ``V``/``dV``."""

    name = "family"
    dim = 1
    scalar = False
    s0 = 0.0

    # -- declared witnesses ------------------------------------------------
    @property
    def U(self) -> np.ndarray:
        raise NotImplementedError

    def a(self, t):
        raise NotImplementedError

    def A(self, t):
        raise NotImplementedError

    def delta(self, t) -> np.ndarray:
        """Declared remainder ``Delta_t``; defaults to the definition."""
        return self.rel_derivative(t) / self.a(t) - self.U

    @property
    def S(self) -> np.ndarray:
        return self.U + self.U.T

    def params(self) -> dict:
        return {}

    # -- matrix valued -----------------------------------------------------
    def V(self, t) -> np.ndarray:
        if self.scalar:
            return math.exp(float(self.log_v(t))) * np.eye(self.dim)
        raise NotImplementedError

    def dV(self, t) -> np.ndarray:
        if self.scalar:
            return float(self.dlog_v(t)) * self.V(t)
        raise NotImplementedError

    def rel_derivative(self, t) -> np.ndarray:
        """``V_t^{-1} V_t'``."""
        if self.scalar:
            return float(self.dlog_v(t)) * np.eye(self.dim)
        return np.linalg.solve(self.V(t), self.dV(t))

    # -- vectorized helpers ------------------------------------------------
    def logdet(self, t):
        """``log det V_t^2`` for an array of times."""
        t = np.asarray(t, dtype=float)
        if self.scalar:
            return 2.0 * self.dim * np.asarray(self.log_v(t), dtype=float)
        flat = t.reshape(-1)
        out = np.array([linalg.logdet_sq(self.V(s)) for s in flat])
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def trace_rel_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.scalar:
            return self.dim * np.asarray(self.dlog_v(t), dtype=float)
        flat = t.reshape(-1)
        out = np.array([np.trace(self.rel_derivative(s)) for s in flat])
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def normalize(self, t, values) -> np.ndarray:
        """``V_t^{-1} M_t`` row by row; ``values`` has shape ``(n, d)``."""
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float).reshape(t.size, self.dim)
        if self.scalar:
            return values * np.exp(-np.asarray(self.log_v(t), dtype=float))[:, None]
        mats = np.stack([self.V(s) for s in t])
        return np.linalg.solve(mats, values[..., None])[..., 0]

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, **self.params()}


class SqrtScalar(NormalizationFamily):
    """``v_t = sqrt(1 + t)``, ``a_t = 1/(1+t)``, ``A_t = log(1+t)``, ``eta = 1/2``."""

    name = "sqrt"
    scalar = True

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def params(self):
        return {}

    @property
    def U(self):
        return 0.5 * np.eye(self.dim)

    def log_v(self, t):
        return 0.5 * np.log1p(t)

    def dlog_v(self, t):
        return 0.5 / (1.0 + np.asarray(t, dtype=float))

    def a(self, t):
        return 1.0 / (1.0 + np.asarray(t, dtype=float))

    def A(self, t):
        return np.log1p(t)

    def delta(self, t):
        return np.zeros((self.dim, self.dim))


class PowerDiag(NormalizationFamily):
    """``V_t = diag((1+t)^{beta_i/2})`` with ``U = diag(beta_i/2)``."""

    name = "power_diag"

    def __init__(self, betas):
        self.betas = np.asarray(betas, dtype=float)
        if self.betas.ndim != 1 or np.any(self.betas <= 0):
            raise ValueError("betas must be a list of positive numbers")
        self.dim = self.betas.size

    def params(self):
        return {"betas": self.betas.tolist()}

    @property
    def U(self):
        return np.diag(self.betas / 2.0)

    def V(self, t):
        return np.diag((1.0 + t) ** (self.betas / 2.0))

    def dV(self, t):
        return np.diag(self.betas / 2.0 * (1.0 + t) ** (self.betas / 2.0 - 1.0))

    def rel_derivative(self, t):
        return np.diag(self.betas / (2.0 * (1.0 + t)))

    def a(self, t):
        return 1.0 / (1.0 + np.asarray(t, dtype=float))

    def A(self, t):
        return np.log1p(t)

    def delta(self, t):
        return np.zeros((self.dim, self.dim))

    def logdet(self, t):
        return self.betas.sum() * np.log1p(np.asarray(t, dtype=float))

    def trace_rel_derivative(self, t):
        return self.betas.sum() / (2.0 * (1.0 + np.asarray(t, dtype=float)))

    def normalize(self, t, values):
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float).reshape(t.size, self.dim)
        return values * (1.0 + t[:, None]) ** (-self.betas[None, :] / 2.0)


class WeightedExp(NormalizationFamily):
    """``v_t = t^{-alpha/2} / (1-alpha) * exp(t^{1-alpha} / (2(1-alpha)))``.

    ``variant="declared"`` declares ``a_t = t^{-alpha}``, ``A_t = t^{1-alpha}/(1-alpha)``,
    ``eta = 1/2`` and hence ``delta_t = -(alpha/2) t^{alpha-1}``, which decays
    more slowly than ``A_t^{-3/2}``. ``variant="exact"`` declares
    ``a*_t = 2 v_t'/v_t`` instead (so ``delta = 0``), valid on
    ``[t0, inf)`` with ``t0 = (2 alpha)^{1/(1-alpha)}``.
    """

    name = "weighted_exp"
    scalar = True

    def __init__(self, alpha: float, dim: int = 1, variant: str = "declared"):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if variant not in ("declared", "exact"):
            raise ValueError("variant must be 'declared' or 'exact'")
        self.alpha = float(alpha)
        self.dim = int(dim)
        self.variant = variant
        # v is increasing once t^{1-alpha} > alpha
        self.s0 = alpha ** (1.0 / (1.0 - alpha))
        self.t0 = (2.0 * alpha) ** (1.0 / (1.0 - alpha))
        if variant == "exact":
            # a* = t^{-alpha} - alpha/t is decreasing only for t > 1
            self.s0 = max(self.t0, 1.0)

    def params(self):
        return {"alpha": self.alpha, "variant": self.variant}

    @property
    def U(self):
        return 0.5 * np.eye(self.dim)

    def _clock(self, t):
        return np.power(np.asarray(t, dtype=float), 1.0 - self.alpha) / (1.0 - self.alpha)

    def log_v(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return -0.5 * self.alpha * np.log(t) - math.log(1.0 - self.alpha) + 0.5 * self._clock(t)

    def dlog_v(self, t):
        t = np.asarray(t, dtype=float)
        return -0.5 * self.alpha / t + 0.5 * t ** (-self.alpha)

    def a(self, t):
        t = np.asarray(t, dtype=float)
        if self.variant == "exact":
            return 2.0 * self.dlog_v(t)
        return t ** (-self.alpha)

    def A(self, t):
        if self.variant == "exact":
            t = np.maximum(np.asarray(t, dtype=float), self.t0)
            return 2.0 * (self.log_v(t) - self.log_v(self.t0))
        return self._clock(t)

    def delta(self, t):
        if self.variant == "exact":
            return np.zeros((self.dim, self.dim))
        t = float(t)
        return -0.5 * self.alpha * t ** (self.alpha - 1.0) * np.eye(self.dim)


class ExpScale(NormalizationFamily):
    """``v_t = scale * exp(t^{1-alpha} / (2(1-alpha)))``.

    This is the normalizer under which the weighted process is stored and
    under which the weighted estimators are written; ``a_t = t^{-alpha}``,
    ``A_t = t^{1-alpha}/(1-alpha) = log v_t^2 - log scale^2`` and ``delta = 0``.
    """

    name = "exp_scale"
    scalar = True

    def __init__(self, alpha: float, dim: int = 1, scale: float = 1.0):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.alpha = float(alpha)
        self.dim = int(dim)
        self.scale = float(scale)

    def params(self):
        return {"alpha": self.alpha, "scale": self.scale}

    @property
    def U(self):
        return 0.5 * np.eye(self.dim)

    def A(self, t):
        return np.power(np.asarray(t, dtype=float), 1.0 - self.alpha) / (1.0 - self.alpha)

    def log_v(self, t):
        return math.log(self.scale) + 0.5 * self.A(t)

    def dlog_v(self, t):
        return 0.5 * np.asarray(t, dtype=float) ** (-self.alpha)

    def a(self, t):
        return np.asarray(t, dtype=float) ** (-self.alpha)

    def delta(self, t):
        return np.zeros((self.dim, self.dim))


class CustomFamily(NormalizationFamily):
    """User-supplied family through the same explicit-witness interface."""

    name = "custom"

    def __init__(self, V: Callable, dV: Callable, a: Callable, A: Callable, U, delta: Callable | None = None,
                 s0: float = 0.0, label: str = "custom"):
        self._V, self._dV, self._a, self._A = V, dV, a, A
        self._U = linalg.as_square(U)
        self._delta = delta
        self.dim = self._U.shape[0]
        self.s0 = s0
        self.name = label

    @property
    def U(self):
        return self._U

    def V(self, t):
        return linalg.as_square(self._V(t))

    def dV(self, t):
        return linalg.as_square(self._dV(t))

    def a(self, t):
        t = np.asarray(t, dtype=float)
        return np.vectorize(self._a, otypes=[float])(t) if t.ndim else float(self._a(float(t)))

    def A(self, t):
        t = np.asarray(t, dtype=float)
        return np.vectorize(self._A, otypes=[float])(t) if t.ndim else float(self._A(float(t)))

    def delta(self, t):
        if self._delta is not None:
            return linalg.as_square(self._delta(t))
        return super().delta(t)


# --------------------------------------------------------------------------
# condition checks


@dataclass
class ConditionReport:
    """Outcome of :func:`check_conditions`.

    ``rate_ok`` tracks the extra CLT hypothesis ``||Delta_t|| = O(A_t^{-3/2})``
    through the growth of ``||Delta_t|| A_t^{3/2}`` across the tail; it is
    reported but does not enter :attr:`passed`.
    """

    family: dict
    c2_violations: list
    delta_tail: float
    pd_ok: bool
    equiv_ratio: float
    deriv_err: float
    delta_consistency: float
    a_decreasing: bool
    A_increasing: bool
    delta_decreasing: bool
    rate_statistic: float
    rate_ok: bool
    sample_range: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (not self.c2_violations and self.pd_ok and self.deriv_err <= 1e-4
                and self.delta_consistency <= 1e-6 and self.a_decreasing
                and self.A_increasing and self.delta_decreasing)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _fd_error(family: NormalizationFamily, t: float) -> float:
    h = 1e-5 * max(t, 1e-3)
    if family.scalar:
        fd = (float(family.log_v(t + h)) - float(family.log_v(t - h))) / (2 * h)
        declared = float(family.dlog_v(t))
        return abs(fd - declared) / max(abs(declared), 1e-300)
    fd = (family.V(t + h) - family.V(t - h)) / (2 * h)
    declared = family.dV(t)
    return float(np.linalg.norm(fd - declared) / max(np.linalg.norm(declared), 1e-300))


def check_conditions(family: NormalizationFamily, sample_times, tol: float = 1e-10) -> ConditionReport:
    """Verify smoothness, Loewner monotonicity, the ``a``/``A``/``U``/``Delta``
    witnesses and the log-det equivalence on ``sample_times``.

    Failures are recorded in the report; nothing is raised.
    """
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or ts.size < 10 or np.any(np.diff(ts) <= 0):
        raise ValueError("sample_times must be strictly increasing with at least 10 points")

    active = ts[ts >= family.s0]
    violations = []
    if family.scalar:
        lv = np.asarray(family.log_v(active), dtype=float)
        for i in range(active.size):
            bad = np.flatnonzero(lv[i + 1:] < lv[i] - tol * max(1.0, abs(lv[i])))
            violations.extend([[float(active[i]), float(active[i + 1 + j])] for j in bad])
    else:
        grams = [family.V(s) @ family.V(s).T for s in active]
        for i in range(len(grams)):
            for j in range(i + 1, len(grams)):
                scale = max(1.0, np.linalg.norm(grams[j]))
                if not linalg.psd_order_leq(grams[i], grams[j], tol * scale):
                    violations.append([float(active[i]), float(active[j])])

    tail = ts[ts >= np.quantile(ts, 0.75)]
    delta_norms = np.array([np.linalg.norm(family.delta(s)) for s in tail])
    # declared Delta against its definition a^{-1} V^{-1} V' - U
    consistency = max(
        float(np.linalg.norm(family.rel_derivative(s) / float(family.a(s)) - family.U - family.delta(s)))
        for s in ts[ts >= family.s0]
    )

    a_vals = np.asarray(family.a(active), dtype=float)
    A_vals = np.asarray(family.A(active), dtype=float)
    S = family.S
    last = float(ts[-1])
    equiv = float(family.logdet(last)) / (float(family.A(last)) * float(np.trace(S)))

    A_tail = np.asarray(family.A(tail), dtype=float)
    rate = delta_norms * np.power(np.maximum(A_tail, 0.0), 1.5)
    if np.all(rate == 0):
        rate_ok = True
    else:
        rate_ok = bool(rate[-1] <= 2.0 * rate[0])

    return ConditionReport(
        family=family.describe(),
        c2_violations=violations,
        delta_tail=float(delta_norms.max()),
        pd_ok=linalg.is_positive_definite(S),
        equiv_ratio=equiv,
        deriv_err=max(_fd_error(family, float(s)) for s in ts[ts > 0]),
        delta_consistency=consistency,
        a_decreasing=bool(np.all(np.diff(a_vals) < 0)),
        A_increasing=bool(np.all(np.diff(A_vals) >= 0)),
        delta_decreasing=bool(delta_norms[-1] <= delta_norms[0] + 1e-12),
        rate_statistic=float(rate[-1]),
        rate_ok=rate_ok,
        sample_range=[float(ts[0]), last],
    )


def logdet_identity_residual(family: NormalizationFamily, t_end: float, quad_step: float = 0.01) -> float:
    """``|int_0^T 2 tr(V^{-1} V') ds - (log det V_T^2 - log det V_0^2)|``
    with composite Simpson on a uniform grid of spacing ``quad_step``."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    n = max(2, int(math.ceil(t_end / quad_step)))
    n += n % 2
    s = np.linspace(0.0, t_end, n + 1)
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            integrand = 2.0 * np.asarray(family.trace_rel_derivative(s), dtype=float)
            lhs = integrate.simpson(integrand, x=s)
            rhs = float(family.logdet(t_end)) - float(family.logdet(0.0))
    except np.linalg.LinAlgError as exc:
        raise Singular(str(exc)) from exc
    if not (np.isfinite(lhs) and np.isfinite(rhs)):
        raise Singular("V_s is not invertible on [0, t_end]")
    return abs(lhs - rhs)


def lemma_norm_bound_margin(family: NormalizationFamily, rho: float, r: float, n0: int) -> float:
    """``d^n0 (det V_rho / det V_r)^{2/d} - ||V_r^{-1} V_rho||_F^2``.

    A non-negative value certifies the norm bound at ``(rho, r, n0)``.
    """
    if rho > r:
        raise ValueError("need rho <= r")
    d = family.dim
    ratio = math.exp((float(family.logdet(rho)) - float(family.logdet(r))) / d)
    if family.scalar:
        norm_sq = d * math.exp(2.0 * (float(family.log_v(rho)) - float(family.log_v(r))))
    else:
        try:
            norm_sq = float(np.linalg.norm(np.linalg.solve(family.V(r), family.V(rho))) ** 2)
        except np.linalg.LinAlgError as exc:
            raise Singular(str(exc)) from exc
    return d ** n0 * ratio - norm_sq


def smallest_certifying_n0(family, rho, r, max_n0: int = 6):
    for n0 in range(1, max_n0 + 1):
        if lemma_norm_bound_margin(family, rho, r, n0) >= 0:
            return n0
    return None


def first_admissible_time(family: NormalizationFamily, level: float = math.e, t_max: float = 1e12) -> float:
    """Smallest ``t`` with ``log det V_t^2 >= level`` (by bracketing)."""
    start = max(family.s0, 1e-12)
    f = lambda t: float(family.logdet(t)) - level  # noqa: E731
    if f(start) >= 0:
        return start
    if f(t_max) < 0:
        raise ValueError(f"log det V_t^2 stays below {level} up to t = {t_max}")
    return optimize.brentq(f, start, t_max, xtol=1e-12, rtol=1e-14)
