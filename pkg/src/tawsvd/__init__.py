"""Truncation-aware whitened SVD compression of linear layers."""

__version__ = "0.1.0"

from .calibration import CalibrationSet, GramAccumulator, accumulate, capture_activations, generate_calibration
from .compressor import FactoredLayer, TruncationPlan, compress_layer, measured_loss, rank_from_ratio, truncate
from .config import CompressionConfig
from .linalg import CholeskyFactor, SvdFactors, cholesky, frobenius_norm, matmul, solve_regularized, solve_triangular, svd
from .model import DenseLayer, SequentialModel, cache_accounting, forward, generate_toy_model, output_deviation
from .whitening import WhiteningTransform, orthogonality_defect, whiten_weight, whitening_from_gram
