import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlnet import tensor as T
from mlnet.network import ModelConfig, build_model
from mlnet.tensor import RngState, Tensor
from mlnet.training import (LossConfig, OptimizerState, TrainingError, compute_loss,
                            dataset_loss, sgd_nesterov_step, train)
from oracles import loss_direct


def loss_value(phi, y, U, alpha=1.1, lam=0.0, flow=True):
    ones = Tensor(np.ones((1, 1) + np.shape(phi)[2:]))
    return compute_loss(Tensor(phi), ones, Tensor(y), Tensor(U),
                        LossConfig(alpha=alpha, lam=lam, flow_through_max=flow)).item()


def test_zero_at_perfect_prediction():
    y = np.random.default_rng(0).uniform(0, 1, (3, 1, 4, 5))
    y /= y.max(axis=(2, 3), keepdims=True)
    assert loss_value(4.0 * y, y, np.ones((1, 1, 2, 2)), lam=0.3) == 0.0


def test_single_pixel_hand_value():
    assert abs(loss_value(np.full((1, 1, 1, 1), 2.0), np.full((1, 1, 1, 1), 0.5), np.ones((1, 1, 1, 1)))
               - 25 / 36) < 1e-12


def test_regularizer_alone():
    y = np.ones((1, 1, 2, 2))
    assert loss_value(y, y, np.full((1, 1, 2, 2), 0.5), lam=0.25) == 0.25


def test_default_lambda_is_inverse_mask_area():
    assert LossConfig().resolved_lambda((1, 1, 3, 4)) == 1 / 12
    assert LossConfig(lam=0.0).resolved_lambda((1, 1, 3, 4)) == 0.0


@given(st.integers(0, 2**31), st.integers(1, 4), st.floats(1.01, 3.0), st.floats(0, 2))
def test_matches_explicit_sums(seed, n, alpha, lam):
    g = np.random.default_rng(seed)
    phi = g.uniform(0.01, 2, (n, 1, 3, 4))
    y = g.uniform(0, 1, (n, 1, 3, 4))
    U = g.uniform(0, 2, (1, 1, 2, 2))
    ref = loss_direct(phi, y, U, alpha, lam)
    assert abs(loss_value(phi, y, U, alpha, lam) - ref) <= 1e-12 * max(1.0, ref)


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_invariant_to_positive_rescaling(seed, c):
    g = np.random.default_rng(seed)
    phi = g.uniform(0.01, 2, (2, 1, 3, 4))
    y = g.uniform(0, 1, (2, 1, 3, 4))
    U = np.ones((1, 1, 1, 1))
    a, b = loss_value(phi, y, U), loss_value(c * phi, y, U)
    assert abs(a - b) <= 1e-12 * max(1.0, a)


def test_regularizer_gradient_is_exact():
    U = Tensor(np.random.default_rng(1).uniform(0, 2, (1, 1, 2, 3)), requires_grad=True)
    y = np.ones((1, 1, 4, 6))
    loss = compute_loss(Tensor(y), Tensor(np.ones((1, 1, 4, 6))), Tensor(y), U, LossConfig(lam=0.7))
    T.backward(loss, inputs=[U])
    np.testing.assert_array_equal(U.grad, 2 * 0.7 * (U.data - 1))


def test_gradient_flows_through_max_unless_toggled():
    g = np.random.default_rng(2)
    phi0 = g.uniform(0.1, 1, (1, 1, 2, 3))
    y = g.uniform(0, 1, (1, 1, 2, 3))
    peak = np.unravel_index(np.argmax(phi0), phi0.shape)
    grads = {}
    for flow in (True, False):
        phi = Tensor(phi0, requires_grad=True)
        loss = compute_loss(phi, Tensor(np.ones((1, 1, 2, 3))), Tensor(y), Tensor(np.ones((1, 1, 1, 1))),
                            LossConfig(lam=0.0, flow_through_max=flow))
        T.backward(loss, inputs=[phi])
        grads[flow] = phi.grad
    # off the argmax the two agree; at the argmax only the flowing version sees the max term
    mask = np.ones_like(phi0, dtype=bool)
    mask[peak] = False
    np.testing.assert_allclose(grads[True][mask], grads[False][mask], rtol=1e-14)
    assert grads[True][peak] != grads[False][peak]
    # the flowing gradient is exact: scale invariance makes it orthogonal to phi
    assert abs(np.sum(grads[True] * phi0)) < 1e-12


def test_non_positive_max_names_sample():
    phi = np.ones((3, 1, 2, 2))
    phi[1] = -1.0
    with pytest.raises(TrainingError, match="sample 1"):
        loss_value(phi, np.ones((3, 1, 2, 2)), np.ones((1, 1, 1, 1)))


def test_alpha_must_exceed_one():
    with pytest.raises(ValueError):
        LossConfig(alpha=1.0)


# optimizer ------------------------------------------------------------------

def param(v, g):
    p = Tensor(np.array(v, dtype=float), requires_grad=True)
    p.grad = np.array(g, dtype=float)
    return p


def test_plain_sgd_when_momentum_and_decay_are_zero():
    p = param([1.0, -2.0], [0.5, 0.25])
    sgd_nesterov_step({"w": p}, OptimizerState(0.1, 0.0, 0.0, max_grad_norm=None))
    np.testing.assert_array_equal(p.data, [1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25])


def test_zero_gradient_zero_velocity_is_a_no_op():
    p = param([1.0, -2.0], [0.0, 0.0])
    sgd_nesterov_step({"w": p}, OptimizerState(0.1, 0.9, 0.0))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_two_nesterov_steps_on_quadratic():
    lr, mu = 0.1, 0.9
    x, v = 1.0, 0.0
    for _ in range(2):  # f = x^2 / 2, so g = x
        v = mu * v - lr * x
        x = x + mu * v - lr * x
    # written out by hand: v1 = -0.1, x1 = 0.81, v2 = -0.171, x2 = 0.5751
    assert abs(x - 0.5751) < 1e-15

    p = Tensor(np.array(1.0), requires_grad=True)
    state = OptimizerState(lr, mu, 0.0, max_grad_norm=None)
    for _ in range(2):
        p.grad = p.data.copy()
        sgd_nesterov_step({"x": p}, state)
    assert p.data == x
    assert state.step == 2


def test_prior_mask_is_never_decayed():
    outs = {}
    for wd in (0.0, 0.5):
        U = param([[0.3, 2.0]], [[0.1, -0.2]])
        W = param([[0.3, 2.0]], [[0.1, -0.2]])
        sgd_nesterov_step({"prior.U": U, "w": W}, OptimizerState(0.1, 0.9, wd, max_grad_norm=None))
        outs[wd] = (U.data, W.data)
    np.testing.assert_array_equal(outs[0.0][0], outs[0.5][0])
    assert not np.array_equal(outs[0.0][1], outs[0.5][1])


def test_non_finite_gradient_aborts_without_update():
    p = param([1.0], [np.nan])
    q = param([1.0], [1.0])
    with pytest.raises(TrainingError, match="non-finite"):
        sgd_nesterov_step({"q": q, "p": p}, OptimizerState())
    assert q.data[0] == 1.0


def test_global_norm_clip():
    p = param([0.0, 0.0], [30.0, 40.0])
    sgd_nesterov_step({"w": p}, OptimizerState(1.0, 0.0, 0.0, max_grad_norm=10.0))
    np.testing.assert_allclose(p.data, [-6.0, -8.0], rtol=1e-15)


# training loop --------------------------------------------------------------

@pytest.fixture(scope="module")
def small_set():
    from mlnet.synthetic import training_set
    return training_set(n=3)


def test_zero_learning_rate_leaves_parameters(small_set):
    X, Y = small_set
    model = build_model(ModelConfig.desk(seed=0))
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    train(model, X, Y, LossConfig(batch_size=2), OptimizerState(learning_rate=0.0, weight_decay=0.0),
          steps=3, rng=RngState(0))
    for k, v in model.named_parameters().items():
        np.testing.assert_array_equal(v.data, before[k])


def test_same_seed_same_log(small_set):
    X, Y = small_set
    logs = []
    for _ in range(2):
        model = build_model(ModelConfig.desk(seed=0))
        logs.append(train(model, X, Y, LossConfig(batch_size=2), OptimizerState(), steps=4,
                          rng=RngState(9)).lines())
    assert logs[0] == logs[1]
    assert logs[0][0].startswith("step 1 loss ")


def test_epoch_length_and_log_stream(small_set, capsys):
    import sys
    X, Y = small_set
    model = build_model(ModelConfig.desk(seed=0))
    log = train(model, X, Y, LossConfig(batch_size=2), OptimizerState(), epochs=2,
                rng=RngState(0), log=sys.stdout)
    assert log.steps == [1, 2, 3, 4]  # ceil(3 / 2) = 2 steps per epoch
    assert capsys.readouterr().out.splitlines() == log.lines()


def test_empty_dataset_rejected():
    model = build_model(ModelConfig.desk(seed=0))
    with pytest.raises(ValueError, match="empty"):
        train(model, np.zeros((0, 3, 48, 64)), np.zeros((0, 1, 6, 8)), LossConfig(), OptimizerState())


def test_dataset_loss_is_inference_mode(small_set):
    X, Y = small_set
    model = build_model(ModelConfig.desk(seed=1))
    assert dataset_loss(model, X, Y, LossConfig()) == dataset_loss(model, X, Y, LossConfig())
