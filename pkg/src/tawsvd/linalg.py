"""Dense float64 kernels: products, norms, SVD, Cholesky and triangular solves.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64. Every
function here is pure: it never mutates its arguments and returns fresh
arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import DefinitenessError, NumericalError, ShapeError, SingularityError

SYMMETRY_TOL = 1e-9


def as_matrix(a, *, name: str = "matrix", check_finite: bool = True) -> np.ndarray:
    """Coerce ``a`` to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {m.shape}")
    if check_finite and not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} has non-finite entries", shape=m.shape)
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, name="a", check_finite=False)
    b = as_matrix(b, name="b", check_finite=False)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``a = u @ diag(sigma) @ v.T``.

    ``u`` is m x k, ``v`` is n x k, ``sigma`` has length k = min(m, n) and is
    sorted descending.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def full_rank(self) -> int:
        return self.sigma.shape[0]

    def reconstruct(self, sigma=None) -> np.ndarray:
        s = self.sigma if sigma is None else np.asarray(sigma, dtype=np.float64)
        return (self.u * s) @ self.v.T


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    # first entry of each u column that is nonzero at working precision is made positive
    for j in range(u.shape[1]):
        col = u[:, j]
        tol = 1e-12 * np.max(np.abs(col))
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            vt[j, :] = -vt[j, :]


def svd(a) -> SvdFactors:
    a = as_matrix(a, name="svd input")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for {a.shape[0]}x{a.shape[1]} matrix",
                             shape=a.shape) from exc
    # LAPACK already returns descending values; a stable sort pins tie order anyway
    order = np.argsort(-s, kind="stable")
    u, s, vt = u[:, order], s[order], vt[order, :]
    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)
    _fix_signs(u, vt)
    return SvdFactors(u=u, sigma=np.maximum(s, 0.0), v=np.ascontiguousarray(vt.T))


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``l`` with ``l @ l.T`` equal to the factored matrix."""

    l: np.ndarray

    @property
    def dim(self) -> int:
        return self.l.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.l @ self.l.T


def _check_symmetric(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got {a.shape[0]}x{a.shape[1]}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ShapeError(f"{name} is not symmetric within {SYMMETRY_TOL:g}")


def cholesky(a) -> CholeskyFactor:
    """Lower Cholesky factor; raises :class:`DefinitenessError` with the failing pivot."""
    a = as_matrix(a, name="cholesky input")
    _check_symmetric(a, "cholesky input")
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise DefinitenessError(f"matrix is not positive definite (pivot {info - 1})",
                                pivot=info - 1, shape=a.shape)
    if info < 0:
        raise NumericalError(f"dpotrf rejected argument {-info}", shape=a.shape)
    l = np.ascontiguousarray(np.tril(c))
    diag = np.diag(l)
    if not np.all(diag > 0) or not np.all(np.isfinite(l)):
        bad = int(np.flatnonzero(~(diag > 0))[0]) if not np.all(diag > 0) else None
        raise DefinitenessError("Cholesky produced a non-positive pivot", pivot=bad, shape=a.shape)
    return CholeskyFactor(l=l)


def solve_triangular(l: CholeskyFactor | np.ndarray, b, side: Literal["left", "right"] = "left",
                     transpose: bool = False) -> np.ndarray:
    """Solve with the lower-triangular factor without forming its inverse.

    ``side="left"`` returns ``y`` with ``op(l) @ y = b``; ``side="right"``
    returns ``y`` with ``y @ op(l) = b``; ``op`` transposes when asked.
    """
    lm = l.l if isinstance(l, CholeskyFactor) else as_matrix(l, name="l")
    b = as_matrix(b, name="b", check_finite=False)
    n = lm.shape[0]
    if np.any(np.diag(lm) == 0):
        raise SingularityError(f"triangular factor ({n}x{n}) has a zero diagonal entry")
    if side == "left":
        if b.shape[0] != n:
            raise ShapeError(f"left solve needs {n} rows, got {b.shape[0]}x{b.shape[1]}")
        return scipy.linalg.solve_triangular(lm, b, lower=True, trans=1 if transpose else 0,
                                             check_finite=False)
    if side == "right":
        if b.shape[1] != n:
            raise ShapeError(f"right solve needs {n} columns, got {b.shape[0]}x{b.shape[1]}")
        # y op(l) = b  <=>  op(l)^T y^T = b^T
        y_t = scipy.linalg.solve_triangular(lm, b.T, lower=True, trans=0 if transpose else 1,
                                            check_finite=False)
        return np.ascontiguousarray(y_t.T)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def solve_regularized(a, b, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(a + ridge * mean(diag(a)) * I) y = b`` through a Cholesky factor."""
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    _check_symmetric(a, "a")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"cannot solve {a.shape[0]}x{a.shape[1]} system with rhs {b.shape[0]}x{b.shape[1]}")
    shifted = a
    if ridge > 0:
        shifted = a + ridge * float(np.mean(np.diag(a))) * np.eye(a.shape[0])
    try:
        f = cholesky(shifted)
    except DefinitenessError as exc:
        raise NumericalError(f"regularized solve failed with ridge={ridge:g}: {exc}",
                             shape=a.shape) from exc
    return solve_triangular(f, solve_triangular(f, b), transpose=True)
