"""Layer-wise least-squares refit of the left factor after truncation.

For layer i with original weight ``W``, whitening ``S``, kept singular
values ``sigma`` and right vectors ``V_k``, and the input ``X'`` that now
reaches the layer through the already-compressed layers before it, the left
factor is replaced by::

    U' = argmin_U ||W X' - U D||_F,   D = diag(sigma) V_k^T S^-1 X'

while ``sigma`` and ``V_k`` stay fixed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .calibration import capture_activations
from .compressor import FactoredLayer
from .errors import NumericalError, ShapeError
from .linalg import as_matrix, frobenius_norm, solve_regularized, solve_triangular
from .model import SequentialModel
from .whitening import WhiteningTransform

log = logging.getLogger(__name__)

FALLBACK_RIDGE = 1e-10


@dataclass(frozen=True)
class UpdateContext:
    layer_index: int
    x_prime: np.ndarray
    d_matrix: np.ndarray
    ridge: float = 0.0


def design_matrix(x_prime, s: WhiteningTransform, v_kept, sigma_kept) -> np.ndarray:
    """``D = diag(sigma_kept) @ v_kept.T @ S^-1 @ x_prime``."""
    z = solve_triangular(s.factor, as_matrix(x_prime, name="x_prime"))
    return np.asarray(sigma_kept)[:, None] * (np.asarray(v_kept).T @ z)


def _solve_gram(gram, rhs, ridge, layer):
    gram = 0.5 * (gram + gram.T)
    try:
        return solve_regularized(gram, rhs, ridge)
    except NumericalError as exc:
        hint = " (try a positive ridge)" if ridge == 0 else ""
        raise NumericalError(f"D D^T is singular{hint}: {exc}", layer=layer, shape=gram.shape) from exc


def closed_form_u(w, ctx: UpdateContext) -> np.ndarray:
    """``W X' D^T (D D^T + ridge * mean(diag) * I)^-1``."""
    w = as_matrix(w, name="weight")
    d = ctx.d_matrix
    if w.shape[1] != ctx.x_prime.shape[0] or d.shape[1] != ctx.x_prime.shape[1]:
        raise ShapeError(f"weight {w.shape}, X' {ctx.x_prime.shape} and D {d.shape} do not conform")
    target = (w @ ctx.x_prime) @ d.T
    # U' G = target with G symmetric  <=>  G U'^T = target^T
    return np.ascontiguousarray(_solve_gram(d @ d.T, target.T, ctx.ridge, ctx.layer_index).T)


def closed_form_u_expanded(w, x_prime, s: WhiteningTransform, v_kept, sigma_kept,
                           ridge: float = 0.0) -> np.ndarray:
    """Same minimiser, assembled from the input Gram matrix ``X' X'^T``.

    ``U' = W C S^-T V Sig (Sig V^T S^-1 C S^-T V Sig)^-1`` with ``C = X' X'^T``.
    """
    w = as_matrix(w, name="weight")
    x_prime = as_matrix(x_prime, name="x_prime")
    c = x_prime @ x_prime.T
    c = 0.5 * (c + c.T)
    sinv_c = solve_triangular(s.factor, c)                       # S^-1 C
    c_sinv_t = sinv_c.T                                          # C S^-T (C symmetric)
    whitened_gram = solve_triangular(s.factor, sinv_c, side="right", transpose=True)  # S^-1 C S^-T
    vs = np.asarray(v_kept) * np.asarray(sigma_kept)[None, :]    # V Sig
    numer = w @ c_sinv_t @ vs
    denom = vs.T @ whitened_gram @ vs
    return np.ascontiguousarray(_solve_gram(denom, numer.T, ridge, None).T)


@dataclass(frozen=True)
class LayerCompression:
    """Everything the update needs about one compressed layer."""

    layer: FactoredLayer
    plan: object
    factors: object
    whitening: WhiteningTransform


@dataclass(frozen=True)
class LayerUpdate:
    layer_index: int
    ridge_used: float
    loss_before: float
    loss_after: float


def update_layer(w, x_prime, comp: LayerCompression, ridge: float = 0.0, layer_index: int = 0):
    """Refit one layer's left factor; falls back to a tiny ridge if ``D D^T`` is singular."""
    rank = comp.plan.rank
    v_kept = comp.factors.v[:, :rank]
    sigma = comp.plan.kept_sigma
    d = design_matrix(x_prime, comp.whitening, v_kept, sigma)
    ctx = UpdateContext(layer_index, x_prime, d, ridge)
    try:
        u_new = closed_form_u(w, ctx)
    except NumericalError:
        if ridge > 0:
            raise
        log.warning("layer %d: D D^T singular, retrying with ridge %g", layer_index, FALLBACK_RIDGE)
        ctx = UpdateContext(layer_index, x_prime, d, FALLBACK_RIDGE)
        u_new = closed_form_u(w, ctx)
    # v_factor is untouched: it already carries sqrt(sigma) V^T S^-1
    root = np.sqrt(sigma)
    new_layer = FactoredLayer(np.ascontiguousarray(u_new * root), comp.layer.v_factor)
    target = w @ x_prime
    before = frobenius_norm(target - comp.layer.apply(x_prime))
    after = frobenius_norm(target - new_layer.apply(x_prime))
    return new_layer, LayerUpdate(layer_index, ctx.ridge, before, after)


def update_model(model: SequentialModel, plans, calib, ridge: float = 0.0):
    """Walk the layers in order, refitting each against the drifted input ``X'``.

    ``model`` is the original dense model; ``plans`` holds one
    :class:`LayerCompression` per layer. Returns the updated factored model and
    one :class:`LayerUpdate` per layer.
    """
    if len(plans) != model.depth:
        raise ValueError(f"need one plan per layer ({model.depth}), got {len(plans)}")
    current = SequentialModel(tuple(p.layer for p in plans), model.activation, model.names)
    records = []
    for i, comp in enumerate(plans):
        x_prime = capture_activations(current, calib, i)
        try:
            new_layer, rec = update_layer(model.layers[i].dense(), x_prime, comp, ridge, i)
        except NumericalError as exc:
            exc.layer = i
            raise
        current = current.with_layer(i, new_layer)
        records.append(rec)
    return current, records

