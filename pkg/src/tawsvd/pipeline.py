"""End-to-end compression of a sequential model and the method comparison sweep."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .baselines import DiagonalScaling, asvd_compress, asvd_predicted_loss, vanilla_svd_compress
from .calibration import CalibrationSet, generate_calibration, gram_in_batches
from .compressor import compress_layer, measured_loss, raw_rank, rank_from_ratio
from .config import CompressionConfig
from .errors import NumericalError
from .linalg import svd
from .model import SequentialModel, cache_accounting, generate_toy_model, output_deviation
from .updater import LayerCompression, update_model
from .whitening import whitening_from_gram

log = logging.getLogger(__name__)


@dataclass
class LayerRecord:
    name: str
    in_dim: int
    out_dim: int
    rank: int
    rank_clamped: bool = False
    predicted_loss: float | None = None
    predicted_exact: bool = True
    measured_loss: float | None = None
    propagated_loss: float | None = None
    epsilon_used: float = 0.0
    ridge_used: float = 0.0
    updated: bool = False
    status: str = "ok"
    error: str | None = None


@dataclass
class ModelRecord:
    output_deviation_calib: float | None = None
    output_deviation_holdout: float | None = None
    param_count_before: int = 0
    param_count_after: int | None = None
    param_ratio_slack: float = 0.0
    cache_ratio: float | None = None


@dataclass
class CompressionReport:
    config: dict
    layers: list = field(default_factory=list)
    model: ModelRecord = field(default_factory=ModelRecord)
    status: str = "ok"
    error: str | None = None
    tool: str = "tawsvd"
    version: str = __version__

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("tool", "version", "status", "error", "config", "model", "layers")}


class CompressionFailed(NumericalError):
    """Raised with the partially filled report attached."""

    def __init__(self, message, report: CompressionReport, layer=None):
        super().__init__(message, layer=layer)
        self.report = report


@dataclass
class CompressionResult:
    model: SequentialModel
    report: CompressionReport
    whitenings: list
    original_inputs: list


def _unit_predicted_loss(factors, x, rank):
    return asvd_predicted_loss(factors, DiagonalScaling.ones(x.shape[0]), x, rank)


def compress_model(model: SequentialModel, calib: CalibrationSet, config: CompressionConfig,
                   probe=None) -> CompressionResult:
    """Compress every layer at a uniform ratio with the configured method.

    Whitening and scaling statistics come from the original model's
    activations; the optional refit then walks the compressed model layer by
    layer.
    """
    report = CompressionReport(config=config.to_dict())
    report.model.param_count_before = model.param_count
    original_inputs = model.layer_inputs(calib.inputs)
    layers, comps, whitenings = [], [], []
    for i, (name, layer) in enumerate(zip(model.names, model.layers)):
        w = layer.dense()
        x = original_inputs[i]
        rank = rank_from_ratio(layer.out_dim, layer.in_dim, config.ratio)
        rec = LayerRecord(name, layer.in_dim, layer.out_dim, rank,
                          rank_clamped=raw_rank(layer.out_dim, layer.in_dim, config.ratio) < 1)
        if rec.rank_clamped:
            log.warning("%s: ratio %.3f leaves no rank; clamped to 1", name, config.ratio)
        report.layers.append(rec)
        try:
            if config.method == "svdllm":
                acc = gram_in_batches(x)
                s = whitening_from_gram(acc.gram, config.damping_rel,
                                        source_columns=acc.columns_seen, layer=i)
                factored, plan, factors = compress_layer(w, s, rank)
                comps.append(LayerCompression(factored, plan, factors, s))
                whitenings.append(s)
                rec.epsilon_used = s.damping_used
                rec.predicted_loss = plan.predicted_loss
                rec.predicted_exact = s.damping_used == 0.0
            elif config.method == "asvd":
                scaling = DiagonalScaling.from_activations(x)
                factored, factors = asvd_compress(w, scaling, rank)
                rec.predicted_loss = asvd_predicted_loss(factors, scaling, x, rank)
            else:
                factored = vanilla_svd_compress(w, rank)
                rec.predicted_loss = _unit_predicted_loss(svd(w), x, rank)
        except NumericalError as exc:
            rec.status, rec.error = "failed", str(exc)
            report.status, report.error = "failed", f"layer {i} ({name}): {exc}"
            raise CompressionFailed(report.error, report, layer=i) from exc
        rec.measured_loss = measured_loss(w, factored.dense(), x)
        layers.append(factored)

    compressed = SequentialModel(tuple(layers), model.activation, model.names)
    if config.update_enabled:
        try:
            compressed, updates = update_model(model, comps, calib, config.ridge)
        except NumericalError as exc:
            i = exc.layer if exc.layer is not None else 0
            report.layers[i].status, report.layers[i].error = "failed", str(exc)
            report.status, report.error = "failed", f"update of layer {i}: {exc}"
            raise CompressionFailed(report.error, report, layer=i) from exc
        for rec, upd, layer, w_layer, x in zip(report.layers, updates, compressed.layers,
                                               model.layers, original_inputs):
            rec.updated = True
            rec.predicted_exact = False
            rec.ridge_used = upd.ridge_used
            rec.measured_loss = measured_loss(w_layer.dense(), layer.dense(), x)

    drifted = compressed.layer_inputs(calib.inputs)
    for rec, w_layer, layer, x in zip(report.layers, model.layers, compressed.layers, drifted):
        rec.propagated_loss = measured_loss(w_layer.dense(), layer.dense(), x)

    m = report.model
    m.param_count_after = compressed.param_count
    m.param_ratio_slack = max(0.0, m.param_count_after / m.param_count_before - (1.0 - config.ratio))
    m.output_deviation_calib = output_deviation(model, compressed, calib.inputs)
    if probe is None:
        probe = generate_calibration(model.input_dim, calib.count, config.seed + 1).inputs
    m.output_deviation_holdout = output_deviation(model, compressed, probe)
    m.cache_ratio = cache_accounting(compressed, probe.shape[1], probe).ratio
    return CompressionResult(compressed, report, whitenings, original_inputs)


@dataclass(frozen=True)
class ExperimentConfig:
    depth: int = 3
    width: int = 32
    activation: str = "relu"
    ratios: tuple = (0.2, 0.4, 0.6)
    calib_count: int = 256
    calib_source: str = "synthetic-gaussian"
    damping_rel: float = 1e-6
    ridge: float = 0.0
    seed: int = 0


COMPARE_METHODS = ("svd", "asvd", "svdllm-W", "svdllm-W+U")
_METHOD_CONFIG = {"svd": ("svd", "off"), "asvd": ("asvd", "off"),
                  "svdllm-W": ("svdllm", "off"), "svdllm-W+U": ("svdllm", "on")}


def run_trial(cfg: ExperimentConfig, trial: int, method: str, ratio: float):
    seed = cfg.seed + trial
    model = generate_toy_model(cfg.depth, [cfg.width] * (cfg.depth + 1), cfg.activation, seed)
    calib = generate_calibration(cfg.width, cfg.calib_count, seed, cfg.calib_source)
    probe = generate_calibration(cfg.width, cfg.calib_count, seed + 10_000, cfg.calib_source).inputs
    kind, update = _METHOD_CONFIG[method]
    config = CompressionConfig(ratio=ratio, method=kind, update=update, damping_rel=cfg.damping_rel,
                               ridge=cfg.ridge, seed=seed, calib_count=cfg.calib_count)
    return compress_model(model, calib, config, probe=probe)


def compare_methods(cfg: ExperimentConfig, trials: int = 1, methods=COMPARE_METHODS) -> list:
    """One row per (trial, ratio, method, layer) with losses, deviations and wall time."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for trial in range(trials):
        for ratio in cfg.ratios:
            for method in methods:
                t0 = time.perf_counter()
                result = run_trial(cfg, trial, method, ratio)
                elapsed = time.perf_counter() - t0
                m = result.report.model
                for idx, rec in enumerate(result.report.layers):
                    rows.append({
                        "trial": trial, "seed": cfg.seed + trial, "ratio": ratio, "method": method,
                        "layer": idx, "rank": rec.rank,
                        "calib_loss": rec.measured_loss, "propagated_loss": rec.propagated_loss,
                        "deviation_calib": m.output_deviation_calib,
                        "deviation_holdout": m.output_deviation_holdout,
                        "seconds": elapsed,
                    })
    return rows


def summarize(rows) -> list:
    """Median over trials of each metric, per (ratio, method)."""
    groups = {}
    for row in rows:
        groups.setdefault((row["ratio"], row["method"]), []).append(row)
    out = []
    for (ratio, method), group in groups.items():
        by_trial = {}
        for r in group:
            by_trial.setdefault(r["trial"], []).append(r)
        out.append({
            "ratio": ratio, "method": method, "trials": len(by_trial),
            "median_calib_loss": float(np.median([r["calib_loss"] for r in group])),
            "median_propagated_loss": float(np.median([r["propagated_loss"] for r in group])),
            "median_deviation_calib": float(np.median([g[0]["deviation_calib"] for g in by_trial.values()])),
            "median_deviation_holdout": float(np.median([g[0]["deviation_holdout"] for g in by_trial.values()])),
        })
    return out

