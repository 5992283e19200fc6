import numpy as np
import pytest

from tawsvd.calibration import (CalibrationSet, GramAccumulator, accumulate, capture_activations,
                                generate_calibration, gram_in_batches)
from tawsvd.errors import ShapeError
from tawsvd.model import DenseLayer, SequentialModel, generate_toy_model


def test_generation_is_deterministic():
    a = generate_calibration(4, 8, seed=7)
    b = generate_calibration(4, 8, seed=7)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.inputs.shape == (4, 8)
    assert generate_calibration(4, 8, seed=8).inputs.tobytes() != a.inputs.tobytes()


def test_gaussian_mean_vanishes():
    x = generate_calibration(8, 4096, seed=3).inputs
    assert np.linalg.norm(x.mean(axis=1)) < 0.2


def test_heavytail_channel_spread():
    x = generate_calibration(16, 512, seed=3, source="synthetic-heavytail").inputs
    rms = np.sqrt(np.mean(x * x, axis=1))
    assert rms.max() / rms.min() >= 100


def test_file_source_cannot_be_generated():
    with pytest.raises(ValueError):
        generate_calibration(2, 2, source="file")


def test_accumulate_examples(rng):
    acc = accumulate(GramAccumulator.empty(2), np.eye(2))
    np.testing.assert_array_equal(acc.gram, np.eye(2))
    assert acc.columns_seen == 2
    same = accumulate(acc, np.zeros((2, 5)))
    np.testing.assert_array_equal(same.gram, acc.gram)
    x = rng.standard_normal((8, 64))
    whole = accumulate(GramAccumulator.empty(8), x).gram
    halves = accumulate(accumulate(GramAccumulator.empty(8), x[:, :32]), x[:, 32:]).gram
    assert np.linalg.norm(whole - halves) / np.linalg.norm(whole) < 1e-10


@pytest.mark.parametrize("batch", [1, 7, 64, 1000])
def test_batch_invariance_matches_one_shot(rng, batch):
    x = rng.standard_normal((6, 150))
    acc = gram_in_batches(x, batch)
    ref = x @ x.T
    assert acc.columns_seen == 150
    assert np.linalg.norm(acc.gram - ref) / np.linalg.norm(ref) < 1e-10
    assert np.max(np.abs(acc.gram - acc.gram.T)) < 1e-9


def test_accumulate_shape_error():
    with pytest.raises(ShapeError):
        accumulate(GramAccumulator.empty(3), np.ones((2, 4)))


def test_capture_boundary_and_identity(rng):
    calib = generate_calibration(5, 20, seed=1)
    model = generate_toy_model(3, [5, 4, 6, 3], "relu", seed=2)
    np.testing.assert_array_equal(capture_activations(model, calib, 0), calib.inputs)
    ident = SequentialModel((DenseLayer(np.eye(5)), DenseLayer(np.eye(5))), "identity")
    for i in range(3):
        np.testing.assert_array_equal(capture_activations(ident, calib, i), calib.inputs)


def test_capture_matches_hand_chain(rng):
    calib = CalibrationSet(rng.standard_normal((4, 10)))
    w0, w1 = rng.standard_normal((6, 4)), rng.standard_normal((3, 6))
    model = SequentialModel((DenseLayer(w0), DenseLayer(w1)), "tanh")
    np.testing.assert_allclose(capture_activations(model, calib, 1), np.tanh(w0 @ calib.inputs), atol=1e-12)
    np.testing.assert_allclose(capture_activations(model, calib, 2),
                               w1 @ np.tanh(w0 @ calib.inputs), atol=1e-12)
    np.testing.assert_array_equal(capture_activations(model, calib, 2), model.forward(calib.inputs))
