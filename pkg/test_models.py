#!/usr/bin/env python3
"""
Tests for Model-A/B/C: parameter counts, forward contracts and end-to-end gradients
"""

import numpy as np
import pytest

from src.core.errors import InvalidModelError, ShapeMismatchError
from src.core.gradcheck import GradcheckSettings, model_gradcheck
from src.core.models import (
    EXPECTED_PARAM_COUNTS,
    MODEL_IDS,
    PUBLISHED_PARAM_COUNTS,
    build_model,
    expected_param_counts,
    forward,
    model_spec,
)
from src.core.rng import RngStream
from src.core.tensor import Tensor


@pytest.mark.parametrize("model_id,expected", [("A", 315_969), ("B", 70_817), ("C", 277_601)])
def test_parameter_counts(model_id, expected):
    model = build_model(model_id, RngStream(seed=0))
    assert model.param_count() == expected
    assert sum(count for _, count in model.layer_param_counts()) == expected


def test_counts_match_published_rounding():
    assert round(EXPECTED_PARAM_COUNTS["C"] / 1000) == 278
    assert PUBLISHED_PARAM_COUNTS["C"] == "278K"
    assert expected_param_counts() == EXPECTED_PARAM_COUNTS


def test_unknown_model_id():
    with pytest.raises(InvalidModelError):
        model_spec("D")
    with pytest.raises(InvalidModelError):
        build_model("a", RngStream(seed=0))


def test_same_seed_same_weights():
    first = build_model("B", RngStream(seed=3))
    second = build_model("B", RngStream(seed=3))
    for (name, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
        assert np.array_equal(a.data, b.data), name


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_forward_shape(model_id):
    model = build_model(model_id, RngStream(seed=0)).eval()
    x = Tensor(RngStream(seed=1).generator().uniform(0, 1, (2, 4, 16, 16, 3)).astype(np.float32))
    assert forward(model, x).shape == (2, 1)


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_zero_input_with_zero_head_predicts_offset(model_id):
    model = build_model(model_id, RngStream(seed=0)).eval()
    model.head.weights.data[...] = 0.0
    x = Tensor(np.zeros((1, 2, 8, 8, 3), dtype=np.float32))
    assert np.array_equal(model(x).data, [[0.0]])
    model.calibrate_head(np.array([100.0, 100.0]))
    assert np.allclose(model(x).data, [[100.0]])


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_identical_samples_identical_outputs(model_id):
    model = build_model(model_id, RngStream(seed=0)).eval()
    sample = RngStream(seed=2).generator().uniform(0, 1, (1, 3, 8, 8, 3)).astype(np.float32)
    out = model(Tensor(np.concatenate([sample, sample]))).data
    assert out[0, 0] == out[1, 0]


def test_only_model_a_ignores_frame_order():
    """Model-A pools frames independently; 3D convolution and ConvLSTM see order"""
    x = RngStream(seed=4).generator().uniform(0, 1, (1, 4, 16, 16, 3)).astype(np.float32)
    shuffled = x[:, [2, 0, 3, 1]]
    for model_id in MODEL_IDS:
        model = build_model(model_id, RngStream(seed=0)).eval()
        model.calibrate_head(np.array([40.0, 190.0]))
        a, b = model(Tensor(x)).item(), model(Tensor(shuffled)).item()
        if model_id == "A":
            assert abs(a - b) < 1e-3
        else:
            assert abs(a - b) > 1e-6


def test_wrong_input_shapes():
    model = build_model("C", RngStream(seed=0))
    with pytest.raises(ShapeMismatchError):
        model(Tensor(np.zeros((1, 2, 16, 16, 1), dtype=np.float32)))
    with pytest.raises(ShapeMismatchError):
        model(Tensor(np.zeros((2, 16, 16, 3), dtype=np.float32)))
    with pytest.raises(ShapeMismatchError):
        model(Tensor(np.zeros((1, 2, 4, 16, 3), dtype=np.float32)))


def test_calibrate_head_sets_buffers_only():
    model = build_model("A", RngStream(seed=0))
    before = model.param_count()
    model.calibrate_head(np.array([40.0, 80.0, 120.0]))
    assert model.target_offset.item() == pytest.approx(80.0)
    assert model.target_scale.item() == pytest.approx(np.std([40.0, 80.0, 120.0]), rel=1e-6)
    assert model.param_count() == before


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_end_to_end_gradcheck(model_id):
    name, error = model_gradcheck(model_id, GradcheckSettings())
    assert error < 1e-4, name
