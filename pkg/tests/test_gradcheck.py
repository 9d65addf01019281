import numpy as np
import pytest

from mlnet import tensor as T
from mlnet.gradcheck import check_model_gradients, nudge_off_kinks, rel_error, unit_scale
from mlnet.network import ModelConfig, build_model
from mlnet.tensor import RngState

TINY = dict(stage_channels=(2, 2, 2, 2, 2), encode_channels=2, input_size=(16, 8))


def tiny_problem(seed=0):
    g = np.random.default_rng(seed)
    x = g.standard_normal((2, 3, 8, 16))
    y = g.uniform(0.1, 1, (2, 1, 1, 2))
    y /= y.max(axis=(2, 3), keepdims=True)
    model = build_model(ModelConfig(seed=seed, **TINY))
    nudge_off_kinks(model, RngState(seed + 1))
    unit_scale(model, x)
    return model, x, y


def test_rel_error():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert rel_error(1e-12, 0.0, floor=1e-6) == pytest.approx(1e-6)


def test_unit_scale_normalizes_layers_and_keeps_peaks_positive():
    model, x, _ = tiny_problem()
    model.record = {}
    with T.no_grad():
        pre, _ = __import__("mlnet.network", fromlist=["forward"]).forward(model, T.Tensor(x))
    record, model.record = model.record, None
    for name, act in record.items():
        if name != "readout":
            assert np.sqrt(np.mean(act ** 2)) == pytest.approx(1.0, rel=1e-12)
    assert pre.data.reshape(2, -1).max(axis=1).min() >= 1.0 - 1e-12


def test_every_entry_of_a_tiny_model():
    model, x, y = tiny_problem()
    res = check_model_gradients(model, x, y, eps=1e-4, probes=None)
    assert res.passed, res.unresolved
    assert res.checks == model.parameter_count() + len(model.named_parameters())
    assert res.max_rel_error < 1e-4


def test_detects_a_wrong_backward_rule(monkeypatch):
    model, x, y = tiny_problem(1)
    real_relu = T.relu

    def leaky_backward_relu(t):
        out = real_relu(t)
        if out._backward is not None:
            mask = t.data > 0
            out._backward = lambda g: (g * np.where(mask, 1.0, 0.1),)
        return out

    monkeypatch.setattr(T, "relu", leaky_backward_relu)
    res = check_model_gradients(model, x, y, eps=1e-4, probes=4)
    assert res.max_rel_error > 1e-2
