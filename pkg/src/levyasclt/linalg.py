"""Dense small-dimension matrix kernels.

Everything here works on plain ``numpy`` arrays of shape ``(d, d)`` with
``d`` small (the experiments never exceed 8), so clarity wins over
asymptotic cost.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotStabilizable, Singular

__all__ = [
    "as_square",
    "symmetrize",
    "lyapunov_solve",
    "logdet_sq",
    "is_positive_definite",
    "psd_order_leq",
]

_DET_FLOOR = np.log(1e-300)
PD_RTOL = 1e-10


def as_square(a) -> np.ndarray:
    """Coerce to a finite float ``(d, d)`` array, promoting scalars to 1x1."""
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def symmetrize(a) -> np.ndarray:
    arr = as_square(a)
    return 0.5 * (arr + arr.T)


def _pivoted_cholesky_pivots(a: np.ndarray) -> np.ndarray:
    # Diagonal pivoting: at every step eliminate the largest remaining diagonal entry.
    work = a.copy()
    n = work.shape[0]
    perm = np.arange(n)
    pivots = np.empty(n)
    for k in range(n):
        j = k + int(np.argmax(np.diag(work)[k:]))
        if j != k:
            work[[k, j], :] = work[[j, k], :]
            work[:, [k, j]] = work[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        piv = work[k, k]
        pivots[k] = piv
        if piv <= 0.0:
            pivots[k + 1:] = -np.inf
            break
        col = work[k + 1:, k] / piv
        work[k + 1:, k + 1:] -= np.outer(col, work[k, k + 1:])
    return pivots


def is_positive_definite(a, tol: float = PD_RTOL) -> bool:
    """Return True when every pivot of a diagonally pivoted Cholesky
    elimination exceeds ``tol * ||a||_F``.

    A breakdown (non-positive pivot, non-finite input) yields False rather
    than an exception.
    """
    try:
        arr = symmetrize(a)
    except (ValueError, DimensionMismatch):
        return False
    scale = np.linalg.norm(arr, "fro")
    if scale == 0.0:
        return False
    pivots = _pivoted_cholesky_pivots(arr)
    return bool(np.all(pivots > tol * scale))


def psd_order_leq(a, b, tol: float = 1e-10) -> bool:
    """Loewner order test ``a <= b``: true iff ``b - a`` has smallest
    eigenvalue at least ``-tol``."""
    a = symmetrize(a)
    b = symmetrize(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return bool(np.linalg.eigvalsh(b - a)[0] >= -tol)


def lyapunov_solve(u) -> np.ndarray:
    """Solve ``R U + U^T R = I`` for the symmetric positive definite ``R``.

    The equation is vectorized into a ``d^2 x d^2`` Kronecker system and
    handed to a dense solver.

    Raises
    ------
    NotStabilizable
        If ``U + U^T`` is not positive definite.
    """
    u = as_square(u)
    d = u.shape[0]
    if not is_positive_definite(u + u.T):
        raise NotStabilizable("U + U^T is not positive definite")
    eye = np.eye(d)
    # column-major vec: vec(R U) = (U^T kron I) vec R, vec(U^T R) = (I kron U^T) vec R
    op = np.kron(u.T, eye) + np.kron(eye, u.T)
    vec_r = np.linalg.solve(op, eye.reshape(-1, order="F"))
    r = symmetrize(vec_r.reshape(d, d, order="F"))
    if not is_positive_definite(r):
        raise NotStabilizable("Lyapunov solution is not positive definite")
    return r


def logdet_sq(v) -> float:
    """``log(det(V)^2)`` from the diagonal of a pivoted LU factorization."""
    v = as_square(v)
    with warnings.catch_warnings():
        # a zero pivot is reported below as Singular
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(v, check_finite=False)
    diag = np.abs(np.diag(lu))
    if np.any(diag == 0.0):
        raise Singular("LU factorization found a zero pivot")
    log_abs_det = float(np.sum(np.log(diag)))
    if log_abs_det < _DET_FLOOR:
        raise Singular(f"|det V| = exp({log_abs_det:.1f}) is below the 1e-300 guard")
    return 2.0 * log_abs_det
