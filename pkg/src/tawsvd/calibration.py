"""Calibration inputs and streaming Gram accumulation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError
from .linalg import as_matrix


class CalibrationSource(str, Enum):
    GAUSSIAN = "synthetic-gaussian"
    HEAVYTAIL = "synthetic-heavytail"
    FILE = "file"


@dataclass(frozen=True)
class CalibrationSet:
    """``inputs`` holds one calibration sample per column."""

    inputs: np.ndarray
    seed: int = 0
    source: CalibrationSource = CalibrationSource.GAUSSIAN

    @property
    def dim(self) -> int:
        return self.inputs.shape[0]

    @property
    def count(self) -> int:
        return self.inputs.shape[1]


def generate_calibration(dim: int, count: int, seed: int = 0, source="synthetic-gaussian") -> CalibrationSet:
    """Seeded synthetic calibration columns.

    The heavy-tailed source draws Student-t(3) entries and multiplies each
    channel by a scale from a log-uniform grid over [1, 1000], shuffled, so a
    few channels dominate the way activation outliers do.
    """
    if dim < 1 or count < 1:
        raise ValueError(f"dim and count must be >= 1, got {dim}, {count}")
    source = CalibrationSource(source)
    rng = np.random.default_rng(seed)
    if source is CalibrationSource.GAUSSIAN:
        x = rng.standard_normal((dim, count))
    elif source is CalibrationSource.HEAVYTAIL:
        scales = rng.permutation(np.logspace(0.0, 3.0, dim)) if dim > 1 else np.ones(1)
        x = scales[:, None] * rng.standard_t(3.0, size=(dim, count))
    else:
        raise ValueError("file-backed calibration sets are loaded, not generated")
    return CalibrationSet(np.ascontiguousarray(x), seed, source)


@dataclass(frozen=True)
class GramAccumulator:
    gram: np.ndarray
    columns_seen: int = 0

    @classmethod
    def empty(cls, n: int) -> "GramAccumulator":
        return cls(np.zeros((n, n)), 0)


def accumulate(acc: GramAccumulator, x_batch) -> GramAccumulator:
    x = as_matrix(x_batch, name="batch")
    if x.shape[0] != acc.gram.shape[0]:
        raise ShapeError(f"batch has {x.shape[0]} rows, accumulator is {acc.gram.shape[0]}x{acc.gram.shape[0]}")
    g = x @ x.T
    # exact symmetry keeps downstream Cholesky checks quiet
    g = 0.5 * (g + g.T)
    return GramAccumulator(acc.gram + g, acc.columns_seen + x.shape[1])


def gram_in_batches(x, batch_size: int = 64) -> GramAccumulator:
    x = as_matrix(x, name="activations")
    acc = GramAccumulator.empty(x.shape[0])
    for start in range(0, x.shape[1], batch_size):
        acc = accumulate(acc, x[:, start:start + batch_size])
    return acc


def capture_activations(model, calib, upto_layer: int) -> np.ndarray:
    """Input to layer ``upto_layer`` after running ``calib`` through the current model."""
    inputs = calib.inputs if isinstance(calib, CalibrationSet) else calib
    return model.layer_inputs(inputs, upto_layer)[upto_layer]
