import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, max_rel_error
from imuda.errors import DimensionError, StateError
from imuda.ndcore import make_rng
from imuda.netcore import (
    AdamState,
    GradientSet,
    Layer,
    NetworkParams,
    adam_step,
    backward,
    cross_entropy,
    cross_entropy_logit_grad,
    forward_classifier,
    forward_encoder,
    init_network,
)


def linear_net(w_enc, k=2):
    f = w_enc.shape[1]
    return NetworkParams(
        [Layer(w_enc, np.zeros(f), "linear")],
        [Layer(np.zeros((f, k)), np.zeros(k), "softmax")],
    )


def test_zero_network_gives_zero_embedding():
    net = init_network(make_rng(0), 3, [4, 2], 2)
    zero = net.with_arrays([np.zeros_like(a) for _, a in net.arrays()])
    x = make_rng(1).standard_normal((5, 3))
    assert not np.any(forward_encoder(zero, x))


def test_identity_layer():
    x = make_rng(2).standard_normal((4, 3))
    np.testing.assert_array_equal(forward_encoder(linear_net(np.eye(3)), x), x)


def test_two_layer_tanh_matches_straight_line_version():
    net = init_network(make_rng(3), 3, [5, 4], 2)
    for layer in net.encoder:
        layer.bias[:] = make_rng(4).standard_normal(layer.fan_out)
    x = make_rng(5).standard_normal((6, 3))
    (w1, b1), (w2, b2) = [(l.weight, l.bias) for l in net.encoder]
    expected = np.empty((6, 4))
    for i in range(6):
        h = [math.tanh(sum(x[i, a] * w1[a, j] for a in range(3)) + b1[j]) for j in range(5)]
        expected[i] = [math.tanh(sum(h[a] * w2[a, j] for a in range(5)) + b2[j]) for j in range(4)]
    np.testing.assert_allclose(forward_encoder(net, x), expected, atol=1e-12, rtol=0)


def test_encoder_shape_error():
    net = init_network(make_rng(0), 3, [4], 2)
    with pytest.raises(DimensionError, match="expects 3"):
        forward_encoder(net, np.zeros((2, 5)))


def _identity_classifier(k):
    return NetworkParams([Layer(np.eye(k), np.zeros(k), "linear")], [Layer(np.eye(k), np.zeros(k), "softmax")])


def test_softmax_examples():
    net = _identity_classifier(4)
    np.testing.assert_allclose(forward_classifier(net, np.zeros((2, 4))), 0.25, atol=1e-15)
    p = forward_classifier(_identity_classifier(3), np.array([[10.0, 0.0, 0.0]]))
    assert np.argmax(p) == 0 and p[0, 0] > 0.99


def test_softmax_matches_direct_formula():
    logits = make_rng(6).standard_normal((3, 5)) * 4
    p = forward_classifier(_identity_classifier(5), logits)
    e = np.exp(logits)
    np.testing.assert_allclose(p, e / e.sum(axis=1, keepdims=True), atol=1e-12, rtol=0)


@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 500.0))
@settings(max_examples=100, deadline=None)
def test_softmax_rows_sum_to_one(seed, scale):
    logits = make_rng(seed).standard_normal((4, 6)) * scale
    p = forward_classifier(_identity_classifier(6), logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0.0)


def test_cross_entropy_examples():
    labels = np.eye(3)[[0, 2, 1]]
    assert cross_entropy(labels, labels) == 0.0
    k10 = np.full((4, 10), 0.1)
    assert abs(cross_entropy(k10, np.eye(10)[[1, 2, 3, 4]]) - math.log(10)) < 1e-12
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.3, 0.4, 0.3]])
    y = np.eye(3)[[0, 2, 0]]
    hand = -(math.log(0.7) + math.log(0.8) + math.log(0.3)) / 3
    assert abs(cross_entropy(probs, y) - hand) < 1e-12


def test_cross_entropy_clamps_zero_probability():
    loss = cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert math.isfinite(loss) and loss == pytest.approx(-math.log(1e-300))


def test_backward_zero_upstream():
    net = init_network(make_rng(0), 3, [4, 2], 2)
    _, tr = forward_encoder(net, np.ones((2, 3)), keep=True)
    g = backward(net, tr, dembed=np.zeros((2, 2)))
    assert all(not np.any(a) for a in g.arrays())
    assert all(not np.any(a) for a in backward(net).arrays())


def test_backward_linear_squared_loss_closed_form():
    rng = make_rng(8)
    x, y = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    w = rng.standard_normal((3, 2))
    net = linear_net(w)
    z, tr = forward_encoder(net, x, keep=True)
    g = backward(net, tr, dembed=2 * (z - y) / 7)
    np.testing.assert_allclose(g.encoder[0][0], 2 * x.T @ (x @ w - y) / 7, atol=1e-10, rtol=0)


def test_backward_without_trace_is_state_error():
    net = init_network(make_rng(0), 2, [2], 2)
    with pytest.raises(StateError):
        backward(net, None, None, dlogits=np.zeros((1, 2)))
    with pytest.raises(StateError):
        backward(net, None, None, dembed=np.zeros((1, 2)))


def _flat_loss_and_grad(net, x, y, dz_weight):
    """CE(h(phi(x)), y) + <dz_weight, phi(x)>, a scalar that exercises both gradient inlets."""
    z, enc = forward_encoder(net, x, keep=True)
    p, cls = forward_classifier(net, z, keep=True)
    loss = cross_entropy(p, y) + float(np.sum(dz_weight * z))
    g = backward(net, enc, cls, dlogits=cross_entropy_logit_grad(p, y), dembed=dz_weight)
    return loss, g


@given(
    seed=st.integers(0, 10_000),
    n_layers=st.integers(1, 3),
    width=st.integers(1, 8),
    act=st.sampled_from(["tanh", "linear"]),
)
@settings(max_examples=40, deadline=None)
def test_random_network_gradients(seed, n_layers, width, act):
    rng = make_rng(seed)
    d, k, n = 3, 3, 5
    sizes = [width] * (n_layers - 1) + [max(2, width)]
    net = init_network(rng, d, sizes, k, act, classifier_hidden=[4], classifier_activation="tanh")
    x = rng.standard_normal((n, d))
    y = np.eye(k)[rng.integers(0, k, n)]
    dz = rng.standard_normal((n, sizes[-1])) * 0.1
    _, g = _flat_loss_and_grad(net, x, y, dz)
    names = [name for name, _ in net.arrays()]
    for idx, analytic in enumerate(g.arrays()):
        base = [a.copy() for _, a in net.arrays()]

        def f(v, idx=idx):
            arrays = list(base)
            arrays[idx] = v
            return _flat_loss_and_grad(net.with_arrays(arrays), x, y, dz)[0]

        numeric = central_difference(f, base[idx], 1e-5)
        assert max_rel_error(analytic, numeric) < 1e-4, names[idx]


def test_forward_is_pure():
    net = init_network(make_rng(1), 2, [6, 3], 2)
    x = make_rng(2).standard_normal((9, 2))
    assert np.array_equal(forward_encoder(net, x), forward_encoder(net, x))


def _scalar_net(value):
    return NetworkParams([Layer(np.array([[value]]), np.zeros(1), "linear")],
                         [Layer(np.zeros((1, 2)), np.zeros(2), "softmax")])


def _grads(net, g):
    gs = GradientSet.zeros_like(net)
    gs.encoder[0] = (np.array([[g]]), np.zeros(1))
    return gs


def test_adam_zero_gradient_is_fixed_point():
    net = init_network(make_rng(0), 2, [3], 2)
    new, state = adam_step(net, GradientSet.zeros_like(net), AdamState.for_params(net))
    for (_, a), (_, b) in zip(net.arrays(), new.arrays()):
        assert np.array_equal(a, b)
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    net = _scalar_net(0.5)
    new, _ = adam_step(net, _grads(net, 1.0), AdamState.for_params(net, lr=0.001))
    delta = net.encoder[0].weight[0, 0] - new.encoder[0].weight[0, 0]
    assert delta == pytest.approx(0.001 / (1 + 1e-8), abs=1e-15)


def test_adam_matches_scalar_reimplementation():
    p, m, v = 0.3, 0.0, 0.0
    b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
    net, state = _scalar_net(0.3), None
    state = AdamState.for_params(net, lr=lr)
    for t in (1, 2):
        g = 2.0 * p  # gradient of p^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        net, state = adam_step(net, _grads(net, 2.0 * net.encoder[0].weight[0, 0]), state)
    assert abs(net.encoder[0].weight[0, 0] - p) <= 1e-12
    assert state.step == 2


def test_adam_rejects_non_finite_gradient():
    net = _scalar_net(1.0)
    with pytest.raises(ValueError, match=r"encoder\[0\].weight"):
        adam_step(net, _grads(net, float("nan")), AdamState.for_params(net))


def test_network_shape_validation():
    with pytest.raises(DimensionError):
        NetworkParams([Layer(np.zeros((2, 3)), np.zeros(3), "tanh")],
                      [Layer(np.zeros((4, 2)), np.zeros(2), "softmax")])
    with pytest.raises(ValueError):
        NetworkParams([Layer(np.zeros((2, 3)), np.zeros(3), "tanh")],
                      [Layer(np.zeros((3, 2)), np.zeros(2), "tanh")])
