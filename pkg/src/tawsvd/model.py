"""Synthetic sequential network used as a desk-scale stand-in for a language model."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .compressor import FactoredLayer
from .errors import NumericalError, ShapeError
from .linalg import as_matrix, frobenius_norm


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        if self is Activation.TANH:
            return np.tanh(x)
        return x


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def param_count(self) -> int:
        return self.weight.size

    def apply(self, x) -> np.ndarray:
        return self.weight @ x

    def dense(self) -> np.ndarray:
        return self.weight


Layer = Union[DenseLayer, FactoredLayer]


@dataclass(frozen=True)
class SequentialModel:
    """Linear layers with ``activation`` between them (not after the last)."""

    layers: tuple
    activation: Activation = Activation.RELU
    names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "activation", Activation(self.activation))
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"layer{i}" for i in range(len(self.layers))))
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(f"layer {i} expects {self.layers[i].in_dim} inputs but layer {i - 1} "
                                 f"produces {self.layers[i - 1].out_dim}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def with_layer(self, index: int, layer: Layer) -> "SequentialModel":
        layers = list(self.layers)
        layers[index] = layer
        return replace(self, layers=tuple(layers))

    def layer_inputs(self, x, upto: int | None = None) -> list:
        """Inputs reaching layers ``0 .. upto`` (``upto`` = depth gives the output last)."""
        upto = self.depth if upto is None else upto
        if not 0 <= upto <= self.depth:
            raise IndexError(f"layer index {upto} outside [0, {self.depth}]")
        x = as_matrix(x, name="input")
        if x.shape[0] != self.input_dim:
            raise ShapeError(f"input has {x.shape[0]} rows, model expects {self.input_dim}")
        out = [x]
        for i in range(upto):
            y = self.layers[i].apply(out[-1])
            if i < self.depth - 1:
                y = self.activation(y)
            out.append(y)
        return out

    def forward(self, x) -> np.ndarray:
        return self.layer_inputs(x)[-1]


def forward(model: SequentialModel, x) -> np.ndarray:
    return model.forward(x)


def generate_toy_model(depth: int, dims: Sequence[int], activation="relu", seed: int = 0) -> SequentialModel:
    """Gaussian weights scaled by ``1/sqrt(in_dim)``."""
    dims = [int(d) for d in dims]
    if depth < 1 or len(dims) != depth + 1:
        raise ValueError(f"need depth >= 1 and depth + 1 dims, got depth={depth}, dims={dims}")
    rng = np.random.default_rng(seed)
    layers = [DenseLayer(rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]))
              for i in range(depth)]
    return SequentialModel(tuple(layers), Activation(activation))


def output_deviation(original: SequentialModel, compressed: SequentialModel, probe) -> float:
    """Relative Frobenius deviation of the compressed model's output on ``probe``."""
    if (original.input_dim, original.output_dim) != (compressed.input_dim, compressed.output_dim):
        raise ShapeError("models differ in input/output dimensions")
    ref = original.forward(probe)
    norm = frobenius_norm(ref)
    if norm == 0:
        raise NumericalError("original output is zero; relative deviation undefined")
    return frobenius_norm(ref - compressed.forward(probe)) / norm


@dataclass(frozen=True)
class LayerCache:
    layer: int
    full_dim: int
    rank: int
    columns: int
    recovery_error: float

    @property
    def ratio(self) -> float:
        return self.rank / self.full_dim


@dataclass(frozen=True)
class CacheAccounting:
    full_state_elements: int
    factored_state_elements: int
    layers: tuple

    @property
    def ratio(self) -> float:
        return self.factored_state_elements / self.full_state_elements

    @property
    def max_recovery_error(self) -> float:
        return max(c.recovery_error for c in self.layers)


def cache_accounting(model: SequentialModel, columns: int, probe=None, seed: int = 0) -> CacheAccounting:
    """Compare storing ``v_factor @ x`` (rank x L) against the full ``W x`` (M x L).

    Recovery ``u_factor @ cached`` is checked against the materialised
    product ``(u_factor @ v_factor) @ x`` on the actual layer inputs.
    """
    factored = [i for i, layer in enumerate(model.layers) if isinstance(layer, FactoredLayer)]
    if not factored:
        raise ValueError("model has no factored layers; cache accounting does not apply")
    if probe is None:
        probe = np.random.default_rng(seed).standard_normal((model.input_dim, columns))
    probe = as_matrix(probe, name="probe")
    if probe.shape[1] != columns:
        raise ShapeError(f"probe has {probe.shape[1]} columns, expected {columns}")
    inputs = model.layer_inputs(probe)
    records = []
    for i in factored:
        layer = model.layers[i]
        cached = layer.cached_state(inputs[i])
        full = layer.dense() @ inputs[i]
        err = float(np.max(np.abs(layer.u_factor @ cached - full)))
        records.append(LayerCache(i, layer.out_dim, layer.rank, columns, err))
    return CacheAccounting(sum(c.full_dim * columns for c in records),
                           sum(c.rank * columns for c in records), tuple(records))
