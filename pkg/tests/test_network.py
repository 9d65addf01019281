import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlnet import tensor as T
from mlnet.network import (CONVS_PER_STAGE, ModelConfig, build_model, conv_plan, forward)
from mlnet.tensor import RngState, Tensor

# VGG-16 conv layers: (in, out) channels, 3x3 kernels, with bias
VGG16_CONV = [(3, 64), (64, 64), (64, 128), (128, 128), (128, 256), (256, 256), (256, 256),
              (256, 512), (512, 512), (512, 512), (512, 512), (512, 512), (512, 512)]


@pytest.fixture(scope="module")
def desk():
    return build_model(ModelConfig.desk(seed=3))


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(0).uniform(-0.5, 0.5, (3, 3, 48, 64))


def test_thirteen_extraction_convs_matching_vgg16_counts():
    model = build_model(ModelConfig(input_size=(32, 24)))
    counts = model.layer_parameter_counts()
    extraction = [n for n, *_ in conv_plan(model.config)][:13]
    assert sum(CONVS_PER_STAGE) == 13 and len(extraction) == 13
    for name, (cin, cout) in zip(extraction, VGG16_CONV):
        assert counts[name] == cin * cout * 9 + cout
    assert sum(counts[n] for n in extraction) == 14_714_688


def test_parameter_count_is_function_of_config():
    a = build_model(ModelConfig.desk(seed=0)).parameter_count()
    b = build_model(ModelConfig.desk(seed=9)).parameter_count()
    assert a == b
    chans = (8, 16, 32, 64, 64)
    cin = 3
    expected = 0
    for c, reps in zip(chans, CONVS_PER_STAGE):
        for _ in range(reps):
            expected += cin * c * 9 + c
            cin = c
    expected += 160 * 8 * 9 + 8 + 8 * 1 + 1 + 1  # encode, readout, 1x1 prior mask
    assert a == expected


def test_fresh_model_biases_zero_prior_ones_glorot_bounds(desk):
    for name, cin, cout, k in conv_plan(desk.config):
        assert np.all(desk.params[f"{name}.bias"].data == 0)
        bound = np.sqrt(6.0 / ((cin + cout) * k * k))
        assert np.abs(desk.params[f"{name}.weight"].data).max() <= bound
    assert np.all(desk.prior.data == 1) and desk.prior.shape == (1, 1, 1, 1)


def test_desk_shapes(desk, images):
    pre, taps = forward(desk, Tensor(images))
    assert pre.shape == (3, 1, 6, 8)
    assert [t.shape for t in taps] == [(3, 32, 6, 8), (3, 64, 6, 8), (3, 64, 6, 8)]
    assert sum(desk.config.tap_channels) == 160


@settings(max_examples=8)
@given(st.integers(1, 5), st.integers(1, 5))
def test_downsampling_factor_is_eight(kw, kh):
    cfg = ModelConfig(stage_channels=(1, 1, 1, 1, 1), encode_channels=1, input_size=(8 * kw, 8 * kh))
    model = build_model(cfg)
    pre, taps = forward(model, Tensor(np.ones((1, 3, 8 * kh, 8 * kw))))
    assert pre.shape[2:] == (kh, kw)
    assert all(t.shape[2:] == (kh, kw) for t in taps)


def test_inference_is_deterministic(desk, images):
    a, _ = forward(desk, Tensor(images))
    b, _ = forward(desk, Tensor(images))
    np.testing.assert_array_equal(a.data, b.data)


def test_training_mode_dropout_depends_on_rng_only(desk, images):
    a, _ = forward(desk, Tensor(images), training=True, rng=RngState(1))
    b, _ = forward(desk, Tensor(images), training=True, rng=RngState(1))
    c, _ = forward(desk, Tensor(images), training=True, rng=RngState(2))
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_zero_encoder_gives_zero_map(images):
    model = build_model(ModelConfig.desk(seed=1))
    for name in ("encode", "readout"):
        model.params[f"{name}.weight"].data[:] = 0
        model.params[f"{name}.bias"].data[:] = 0
    pre, _ = forward(model, Tensor(images))
    assert np.all(pre.data == 0)


def test_batch_independence(desk, images):
    whole, _ = forward(desk, Tensor(images))
    for i in range(len(images)):
        single, _ = forward(desk, Tensor(images[i:i + 1]))
        np.testing.assert_allclose(single.data[0], whole.data[i], rtol=0, atol=1e-15)


def test_tap_order_is_conv3_conv4_conv5(desk, images):
    """Feeding the taps in another order changes the map; channel slices recover each tap."""
    _, taps = forward(desk, Tensor(images))
    cat = T.concat_channels(list(taps))
    start = 0
    for t in taps:
        np.testing.assert_array_equal(T.slice_channels(cat, start, start + t.shape[1]).data, t.data)
        start += t.shape[1]
    ref = desk.encode(taps).data
    swapped = desk.encode((taps[0], taps[2], taps[1])).data  # same widths (64, 64)
    assert not np.allclose(ref, swapped)


def test_final_conv_has_no_relu(images):
    model = build_model(ModelConfig.desk(seed=2))
    model.params["readout.bias"].data[:] = -10.0
    pre, _ = forward(model, Tensor(images))
    assert np.all(pre.data < 0)


@pytest.mark.parametrize("size", [(60, 48), (64, 44), (0, 48)])
def test_rejects_sizes_not_divisible_by_eight(size):
    with pytest.raises(ValueError, match="divisible by 8"):
        ModelConfig.desk(input_size=size)


def test_rejects_wrong_channel_count(desk):
    with pytest.raises(ValueError, match="3"):
        forward(desk, Tensor(np.zeros((1, 1, 48, 64))))
    with pytest.raises(ValueError, match="divisible by 8"):
        forward(desk, Tensor(np.zeros((1, 3, 44, 64))))
