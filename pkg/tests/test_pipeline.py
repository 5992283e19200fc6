import numpy as np
import pytest

from tawsvd.calibration import CalibrationSet, generate_calibration
from tawsvd.config import CompressionConfig
from tawsvd.model import generate_toy_model
from tawsvd.pipeline import CompressionFailed, ExperimentConfig, compare_methods, compress_model, summarize


@pytest.mark.parametrize("ratio, update, expected", [
    (0.2, "auto", False), (0.39, "auto", False), (0.4, "auto", True), (0.6, "auto", True),
    (0.2, "on", True), (0.6, "off", False),
])
def test_update_resolution(ratio, update, expected):
    assert CompressionConfig(ratio=ratio, update=update).update_enabled is expected
    assert CompressionConfig(ratio=ratio, update=update, method="svd").update_enabled is False


def test_config_round_trip_and_validation():
    cfg = CompressionConfig(ratio=0.45, method="asvd", update="off", damping_rel=1e-5, ridge=1e-9,
                            seed=3, calib_count=128)
    assert CompressionConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"ratio": 0.0}, {"method": "fwsvd"}, {"update": "maybe"}, {"ridge": -1.0}):
        with pytest.raises(ValueError):
            CompressionConfig(**bad)
    with pytest.raises(ValueError):
        CompressionConfig.from_dict({"ratio": 0.5, "bogus": 1})


@pytest.mark.parametrize("method", ["svd", "asvd", "svdllm"])
def test_predicted_matches_measured_without_update(method):
    model = generate_toy_model(3, [16, 12, 12, 8], "relu", seed=1)
    calib = generate_calibration(16, 256, seed=1)
    res = compress_model(model, calib, CompressionConfig(ratio=0.3, method=method, update="off"))
    for rec in res.report.layers:
        assert rec.epsilon_used == 0.0 and not rec.updated
        assert abs(rec.predicted_loss - rec.measured_loss) / rec.measured_loss < 1e-5


def test_report_accounting():
    model = generate_toy_model(2, [20, 20, 20], "relu", seed=2)
    calib = generate_calibration(20, 256, seed=2)
    res = compress_model(model, calib, CompressionConfig(ratio=0.5))
    m = res.report.model
    assert m.param_count_before == 800
    assert m.param_count_after == sum(l.param_count for l in res.model.layers)
    assert m.param_count_after / m.param_count_before <= 0.5 + m.param_ratio_slack
    assert m.param_ratio_slack == 0.0
    assert m.cache_ratio == pytest.approx(sum(l.rank for l in res.model.layers) / 40)
    assert all(rec.updated for rec in res.report.layers)


def test_rank_clamp_reported():
    model = generate_toy_model(1, [4, 4], seed=0)
    res = compress_model(model, generate_calibration(4, 32, seed=0), CompressionConfig(ratio=0.95))
    assert res.report.layers[0].rank == 1 and res.report.layers[0].rank_clamped
    assert res.report.model.param_ratio_slack == pytest.approx(8 / 16 - 0.05)


def test_damped_whitening_marks_prediction_approximate():
    model = generate_toy_model(1, [16, 8], seed=0)
    calib = generate_calibration(16, 8, seed=0)  # fewer samples than channels: singular Gram
    res = compress_model(model, calib, CompressionConfig(ratio=0.3, update="off"))
    rec = res.report.layers[0]
    assert rec.epsilon_used > 0 and rec.predicted_exact is False


def test_failure_attaches_report():
    model = generate_toy_model(2, [4, 4, 4], seed=0)
    calib = CalibrationSet(np.zeros((4, 10)))
    with pytest.raises(CompressionFailed) as info:
        compress_model(model, calib, CompressionConfig(ratio=0.3, damping_rel=0.0))
    report = info.value.report
    assert report.status == "failed"
    assert report.layers[0].status == "failed"


def test_unit_scale_calibration_asvd_equals_svd():
    rng = np.random.default_rng(0)
    model = generate_toy_model(1, [6, 5], seed=4)
    calib = CalibrationSet(rng.choice([-1.0, 1.0], size=(6, 64)))
    a = compress_model(model, calib, CompressionConfig(ratio=0.3, method="asvd")).model.layers[0]
    b = compress_model(model, calib, CompressionConfig(ratio=0.3, method="svd")).model.layers[0]
    assert a.u_factor.tobytes() == b.u_factor.tobytes()
    assert a.v_factor.tobytes() == b.v_factor.tobytes()


def test_compare_methods_deterministic():
    cfg = ExperimentConfig(depth=2, width=12, ratios=(0.2,), calib_count=64)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    a, b = compare_methods(cfg, trials=1), compare_methods(cfg, trials=1)
    assert strip(a) == strip(b)
    assert {r["method"] for r in a} == {"svd", "asvd", "svdllm-W", "svdllm-W+U"}
    assert len(summarize(a)) == 4


def test_compare_whitened_dominates_on_calibration():
    cfg = ExperimentConfig(depth=3, width=16, ratios=(0.2, 0.3, 0.4, 0.5, 0.6), calib_count=128)
    rows = compare_methods(cfg, trials=2, methods=("svd", "svdllm-W"))
    index = {(r["trial"], r["ratio"], r["method"], r["layer"]): r["calib_loss"] for r in rows}
    for (trial, ratio, method, layer), loss in index.items():
        if method == "svdllm-W":
            assert loss <= index[(trial, ratio, "svd", layer)] * (1 + 1e-9)


def test_compare_rejects_zero_trials():
    with pytest.raises(ValueError):
        compare_methods(ExperimentConfig(), trials=0)


@pytest.mark.parametrize("seed", range(5))
def test_update_lowers_propagated_loss_downstream(seed):
    cfg = ExperimentConfig(depth=3, width=24, ratios=(0.4, 0.6), calib_count=256, seed=seed)
    rows = compare_methods(cfg, trials=1, methods=("svdllm-W", "svdllm-W+U"))
    loss = {(r["ratio"], r["method"], r["layer"]): r["propagated_loss"] for r in rows}
    for ratio in cfg.ratios:
        for layer in (1, 2):
            assert loss[(ratio, "svdllm-W+U", layer)] <= loss[(ratio, "svdllm-W", layer)]
