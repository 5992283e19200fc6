"""Rank selection, whitened truncated SVD and the factored layer it produces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import SvdFactors, as_matrix, frobenius_norm, solve_triangular, svd
from .whitening import WhiteningTransform, whiten_weight


@dataclass(frozen=True)
class FactoredLayer:
    """``u_factor @ v_factor`` stands in for a dense ``out_dim x in_dim`` weight."""

    u_factor: np.ndarray
    v_factor: np.ndarray

    def __post_init__(self):
        if self.u_factor.shape[1] != self.v_factor.shape[0]:
            raise ShapeError(f"factor shapes {self.u_factor.shape} and {self.v_factor.shape} do not chain")

    @property
    def rank(self) -> int:
        return self.u_factor.shape[1]

    @property
    def out_dim(self) -> int:
        return self.u_factor.shape[0]

    @property
    def in_dim(self) -> int:
        return self.v_factor.shape[1]

    @property
    def param_count(self) -> int:
        return self.rank * (self.out_dim + self.in_dim)

    def cached_state(self, x) -> np.ndarray:
        return self.v_factor @ x

    def apply(self, x) -> np.ndarray:
        # two thin products; u @ v is never formed
        return self.u_factor @ (self.v_factor @ x)

    def dense(self) -> np.ndarray:
        return self.u_factor @ self.v_factor


@dataclass(frozen=True)
class TruncationPlan:
    rank: int
    kept_sigma: np.ndarray
    cut_sigma: np.ndarray
    predicted_loss: float


def raw_rank(out_dim: int, in_dim: int, ratio: float) -> int:
    """Largest r with r * (out_dim + in_dim) <= (1 - ratio) * out_dim * in_dim, before clamping."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    return int(np.floor((1.0 - ratio) * out_dim * in_dim / (out_dim + in_dim)))


def rank_from_ratio(out_dim: int, in_dim: int, ratio: float) -> int:
    r = raw_rank(out_dim, in_dim, ratio)
    return max(1, min(r, out_dim, in_dim))


def truncate(factors: SvdFactors, rank: int) -> TruncationPlan:
    """Keep the ``rank`` largest singular values; loss is the root-sum-square of the rest."""
    k = factors.full_rank
    if not 1 <= rank <= k:
        raise IndexError(f"rank {rank} outside [1, {k}]")
    kept = factors.sigma[:rank].copy()
    cut = factors.sigma[rank:].copy()
    return TruncationPlan(rank, kept, cut, float(np.sqrt(np.sum(cut * cut))))


def split_factors(u_kept, sigma_kept, right) -> FactoredLayer:
    """Share ``sqrt(sigma)`` between the two sides: ``(u sqrt(s), sqrt(s) right)``."""
    root = np.sqrt(sigma_kept)
    return FactoredLayer(np.ascontiguousarray(u_kept * root),
                         np.ascontiguousarray(root[:, None] * right))


def compress_layer(w, s: WhiteningTransform, rank: int):
    """Truncated SVD of ``w @ S``, mapped back through ``S^-1``.

    Returns ``(FactoredLayer, TruncationPlan, SvdFactors)``; the factors are
    those of the whitened weight and are reused by the closed-form update.
    """
    w = as_matrix(w, name="weight")
    factors = svd(whiten_weight(w, s))
    plan = truncate(factors, rank)
    v_kept_t = factors.v[:, :rank].T
    right = solve_triangular(s.factor, v_kept_t, side="right")
    return split_factors(factors.u[:, :rank], plan.kept_sigma, right), plan, factors


def measured_loss(w, w_approx, x) -> float:
    """``||(w - w_approx) x||_F``."""
    w = np.asarray(w, dtype=np.float64)
    w_approx = np.asarray(w_approx, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != w_approx.shape:
        raise ShapeError(f"weights differ in shape: {w.shape} vs {w_approx.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weight {w.shape} cannot act on activations {x.shape}")
    return frobenius_norm((w - w_approx) @ x)


def drop_components(factors: SvdFactors, drop, s: WhiteningTransform | None = None) -> np.ndarray:
    """Dense weight with the singular values at indices ``drop`` zeroed.

    With ``s`` given the result is mapped back from the whitened space.
    """
    sigma = factors.sigma.copy()
    sigma[list(drop)] = 0.0
    ws = factors.reconstruct(sigma)
    return ws if s is None else solve_triangular(s.factor, ws, side="right")
