"""Cholesky whitening of layer inputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefinitenessError, ShapeError
from .linalg import CholeskyFactor, as_matrix, cholesky, solve_triangular

MAX_ESCALATIONS = 8


@dataclass(frozen=True)
class WhiteningTransform:
    """``factor.l @ factor.l.T == gram + damping_used * I``."""

    factor: CholeskyFactor
    damping_used: float = 0.0
    source_columns: int = 0

    @property
    def dim(self) -> int:
        return self.factor.dim

    @property
    def s(self) -> np.ndarray:
        return self.factor.l

    @classmethod
    def identity(cls, n: int) -> "WhiteningTransform":
        return cls(CholeskyFactor(np.eye(n)), 0.0, 0)


def whitening_from_gram(gram, damping_rel: float = 1e-6, *, source_columns: int = 0,
                        layer=None) -> WhiteningTransform:
    """Cholesky-factor ``gram``, escalating a relative ridge until it succeeds.

    The first attempt is undamped. Retries use
    ``damping_rel * mean(diag(gram)) * 10**k`` for k = 0 .. MAX_ESCALATIONS - 1.
    """
    if damping_rel < 0:
        raise ValueError(f"damping_rel must be >= 0, got {damping_rel}")
    gram = as_matrix(gram, name="gram")
    try:
        return WhiteningTransform(cholesky(gram), 0.0, source_columns)
    except DefinitenessError as first:
        last = first
    base = damping_rel * float(np.mean(np.diag(gram)))
    eps = 0.0
    eye = np.eye(gram.shape[0])
    for k in range(MAX_ESCALATIONS):
        eps = base * 10.0 ** k
        if eps <= 0:
            break
        try:
            return WhiteningTransform(cholesky(gram + eps * eye), eps, source_columns)
        except DefinitenessError as exc:
            last = exc
    where = f" in layer {layer}" if layer is not None else ""
    raise DefinitenessError(f"Cholesky failed{where} after damping escalation (last eps={eps:g})",
                            pivot=last.pivot, epsilon=eps, layer=layer, shape=gram.shape)


def whitening_from_activations(x, damping_rel: float = 1e-6, *, layer=None) -> WhiteningTransform:
    x = as_matrix(x, name="activations")
    return whitening_from_gram(x @ x.T, damping_rel, source_columns=x.shape[1], layer=layer)


def whiten_weight(w, s: WhiteningTransform) -> np.ndarray:
    """Return ``w @ S``."""
    w = as_matrix(w, name="weight")
    if w.shape[1] != s.dim:
        raise ShapeError(f"weight has {w.shape[1]} columns but whitening is {s.dim}x{s.dim}")
    return w @ s.s


def unwhiten_weight(ws, s: WhiteningTransform) -> np.ndarray:
    """Inverse of :func:`whiten_weight`: ``ws @ S^-1`` via a right triangular solve."""
    return solve_triangular(s.factor, ws, side="right")


def whiten_activations(x, s: WhiteningTransform) -> np.ndarray:
    """Return ``S^-1 @ x``."""
    x = as_matrix(x, name="activations")
    if x.shape[0] != s.dim:
        raise ShapeError(f"activations have {x.shape[0]} rows but whitening is {s.dim}x{s.dim}")
    return solve_triangular(s.factor, x)


def orthogonality_defect(x, s: WhiteningTransform) -> float:
    """Max-abs deviation of ``(S^-1 x)(S^-1 x)^T`` from the identity."""
    z = whiten_activations(x, s)
    return float(np.max(np.abs(z @ z.T - np.eye(s.dim))))
