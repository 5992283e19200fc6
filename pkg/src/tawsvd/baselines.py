"""Reference compressors: plain truncated SVD and diagonal activation scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compressor import FactoredLayer, drop_components, measured_loss, split_factors, truncate
from .errors import ShapeError
from .linalg import SvdFactors, as_matrix, svd
from .whitening import WhiteningTransform, whiten_weight, whitening_from_activations

SCALING_FLOOR = 1e-12


@dataclass(frozen=True)
class DiagonalScaling:
    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=np.float64)
        if d.ndim != 1 or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ValueError("diagonal scaling entries must be finite and strictly positive")
        object.__setattr__(self, "diag", d)

    @classmethod
    def from_activations(cls, x, floor: float = SCALING_FLOOR) -> "DiagonalScaling":
        """Per-channel mean absolute activation, floored away from zero."""
        x = as_matrix(x, name="activations")
        return cls(np.maximum(np.mean(np.abs(x), axis=1), floor))

    @classmethod
    def ones(cls, n: int) -> "DiagonalScaling":
        return cls(np.ones(n))


def vanilla_svd_compress(w, rank: int) -> FactoredLayer:
    w = as_matrix(w, name="weight")
    factors = svd(w)
    plan = truncate(factors, rank)
    return split_factors(factors.u[:, :rank], plan.kept_sigma, factors.v[:, :rank].T)


def asvd_compress(w, scaling: DiagonalScaling, rank: int):
    """SVD of ``w @ diag(scaling)``; the inverse scaling is folded into ``v_factor``."""
    w = as_matrix(w, name="weight")
    if scaling.diag.shape[0] != w.shape[1]:
        raise ShapeError(f"scaling has {scaling.diag.shape[0]} entries, weight has {w.shape[1]} columns")
    factors = svd(w * scaling.diag[None, :])
    plan = truncate(factors, rank)
    right = factors.v[:, :rank].T / scaling.diag[None, :]
    return split_factors(factors.u[:, :rank], plan.kept_sigma, right), factors


def scaled_loss_terms(factors: SvdFactors, scaling: DiagonalScaling, x) -> np.ndarray:
    """Per-component loss ``sigma_i * ||v_i^T S0^-1 X||_F`` for every index."""
    x = as_matrix(x, name="activations")
    proj = factors.v.T @ (x / scaling.diag[:, None])
    return factors.sigma * np.sqrt(np.sum(proj * proj, axis=1))


def asvd_predicted_loss(factors: SvdFactors, scaling: DiagonalScaling, x, rank: int) -> float:
    """Root of ``sum_{i > rank} sigma_i^2 ||v_i^T S0^-1 X||_F^2``.

    The cross terms vanish because the left singular vectors are orthonormal,
    but the per-term weights depend on ``X``, unlike the whitened case.
    """
    terms = scaled_loss_terms(factors, scaling, x)[rank:]
    return float(np.sqrt(np.sum(terms * terms)))


def loss_dropping(w, factors: SvdFactors, scaling: DiagonalScaling, x, drop) -> float:
    """Measured loss after zeroing the scaled singular values at ``drop``."""
    sigma = factors.sigma.copy()
    sigma[list(drop)] = 0.0
    w_approx = factors.reconstruct(sigma) / scaling.diag[None, :]
    return measured_loss(w, w_approx, x)


@dataclass(frozen=True)
class NonMonotonicityWitness:
    seed: int
    w: np.ndarray
    x: np.ndarray
    asvd_sigma: np.ndarray
    asvd_losses: np.ndarray
    whitened_sigma: np.ndarray
    whitened_losses: np.ndarray


def single_drop_losses(w, x, s: WhiteningTransform | DiagonalScaling):
    """Loss of dropping each singular value alone, for whitening or diagonal scaling."""
    if isinstance(s, DiagonalScaling):
        factors = svd(w * s.diag[None, :])
        losses = [loss_dropping(w, factors, s, x, [i]) for i in range(factors.full_rank)]
    else:
        factors = svd(whiten_weight(w, s))
        losses = [measured_loss(w, drop_components(factors, [i], s), x) for i in range(factors.full_rank)]
    return factors.sigma, np.array(losses)


def find_asvd_witness(start_seed: int = 0, max_tries: int = 1000, n: int = 3,
                      columns: int = 64) -> NonMonotonicityWitness | None:
    """Search seeded ``n x n`` instances where dropping the smallest scaled
    singular value is not the cheapest single drop, while whitened tail
    truncation is (up to round-off) the cheapest on the same instance."""
    for seed in range(start_seed, start_seed + max_tries):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((n, n))
        # correlated channels make diagonal scaling a poor whitener
        x = rng.standard_normal((n, n)) @ rng.standard_normal((n, columns))
        a_sigma, a_loss = single_drop_losses(w, x, DiagonalScaling.from_activations(x))
        if np.argmin(a_loss) == n - 1:
            continue
        w_sigma, w_loss = single_drop_losses(w, x, whitening_from_activations(x, 0.0))
        if w_loss[-1] <= np.min(w_loss) * (1 + 1e-9):
            return NonMonotonicityWitness(seed, w, x, a_sigma, a_loss, w_sigma, w_loss)
    return None
