import math

import numpy as np
import pytest

from decgan.nn_core import (
    AdamState,
    DenseNetwork,
    LayerSpec,
    NetworkError,
    adam_step,
    backward,
    bce_grad,
    bce_loss,
    forward,
    gradcheck_suite,
    gradient_check,
    init_network,
    load_checkpoint,
    random_network,
    save_checkpoint,
    sigmoid,
)


def _linear(w, b):
    return DenseNetwork([LayerSpec(1, 1, "linear")], [np.array([[w]])], [np.array([b])])


def test_init_deterministic_and_bounded():
    layers = [LayerSpec(6, 10, "relu"), LayerSpec(10, 1, "sigmoid")]
    a = init_network(layers, 3)
    b = init_network(layers, 3)
    for p, q in zip(a.params, b.params):
        assert np.array_equal(p, q)
    limit = math.sqrt(6 / 16)
    assert abs(limit - 0.6124) < 1e-4
    assert np.all(np.abs(a.weights[0]) <= limit)
    assert np.all(a.biases[0] == 0)


def test_init_rejects_broken_chain():
    with pytest.raises(NetworkError):
        init_network([LayerSpec(6, 10), LayerSpec(8, 1)], 0)


def test_layer_spec_validation():
    with pytest.raises(NetworkError):
        LayerSpec(0, 1)
    with pytest.raises(NetworkError):
        LayerSpec(1, 1, dropout=1.0)
    with pytest.raises(NetworkError):
        LayerSpec(1, 1, "tanh")


def test_forward_zero_weights_sigmoid():
    net = init_network([LayerSpec(6, 4, "relu"), LayerSpec(4, 1, "sigmoid")], 0)
    for p in net.params:
        p[...] = 0
    out, _ = forward(net, np.random.default_rng(0).standard_normal((5, 6)))
    assert np.all(out == 0.5)


def test_forward_affine():
    out, _ = forward(_linear(2.0, 1.0), [3.0])
    assert out.tolist() == [[7.0]]


def test_leaky_relu_slope():
    net = DenseNetwork([LayerSpec(1, 1, "leaky_relu", slope=0.2)], [np.array([[1.0]])], [np.array([0.0])])
    out, _ = forward(net, [-1.0])
    assert out[0, 0] == pytest.approx(-0.2, abs=1e-15)


def test_forward_width_mismatch():
    with pytest.raises(NetworkError):
        forward(_linear(1, 0), [1.0, 2.0])


def test_sigmoid_stable():
    v = sigmoid(np.array([-1000.0, -700.5, 0.0, 700.5, 1000.0]))
    assert np.all(np.isfinite(v))
    assert v[2] == 0.5 and v[0] == 0.0 and v[-1] == 1.0


def test_bce_loss_values():
    assert bce_loss(1 - 1e-7, 1) <= 1.2e-7
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(0.0, 1) == pytest.approx(-math.log(1e-7), rel=1e-12)
    assert abs(bce_loss(0.0, 1) - 16.118) < 1e-3
    assert np.isfinite(bce_loss(1.0, 0))


def test_bce_grad_matches_difference():
    for p, y in [(0.3, 1), (0.8, 0), (0.5, 1)]:
        h = 1e-6
        num = (bce_loss(p + h, y) - bce_loss(p - h, y)) / (2 * h)
        assert bce_grad(p, y) == pytest.approx(num, rel=1e-6)


def test_backward_linear_chain_rule():
    net = _linear(0.7, -0.1)
    _, trace = forward(net, [3.0])
    grads, dx = backward(net, trace, [[1.0]])
    assert grads[0].tolist() == [[3.0]]
    assert grads[1].tolist() == [1.0]
    assert dx.tolist() == [[0.7]]


def test_backward_zero_upstream():
    net = random_network(np.random.default_rng(1))
    _, trace = forward(net, np.ones(net.in_width))
    grads, _ = backward(net, trace, np.zeros((1, 1)))
    assert all(np.all(g == 0) for g in grads)


def test_backward_rejects_foreign_trace():
    a = init_network([LayerSpec(2, 3, "relu"), LayerSpec(3, 1, "sigmoid")], 0)
    b = init_network([LayerSpec(2, 4, "relu"), LayerSpec(4, 1, "sigmoid")], 0)
    _, trace = forward(a, [1.0, 2.0])
    with pytest.raises(NetworkError):
        backward(b, trace, [[1.0]])


def test_relu_derivative_at_zero():
    net = DenseNetwork([LayerSpec(1, 1, "relu")], [np.array([[1.0]])], [np.array([0.0])])
    _, trace = forward(net, [0.0])
    grads, dx = backward(net, trace, [[1.0]])
    assert dx[0, 0] == 0.0
    leaky = DenseNetwork([LayerSpec(1, 1, "leaky_relu", slope=0.2)], [np.array([[1.0]])], [np.array([0.0])])
    _, trace = forward(leaky, [0.0])
    _, dx = backward(leaky, trace, [[1.0]])
    assert dx[0, 0] == 0.2


def test_backward_matches_finite_differences_6_10_1():
    rng = np.random.default_rng(7)
    net = init_network([LayerSpec(6, 10, "relu"), LayerSpec(10, 1, "sigmoid")], rng)
    for b in net.biases:
        b[...] = rng.normal(0, 0.1, b.shape)
    assert gradient_check(net, rng.standard_normal(6), 1.0, 1e-5) < 1e-4


def test_backward_honours_dropout_mask():
    rng = np.random.default_rng(0)
    net = init_network([LayerSpec(3, 8, "relu", dropout=0.5), LayerSpec(8, 1, "sigmoid")], rng)
    x = rng.standard_normal((4, 3))
    y = np.array([[1.0], [0.0], [1.0], [0.0]])
    out, trace = forward(net, x, training=True, rng=5)
    grads, _ = backward(net, trace, bce_grad(out, y))

    def loss():
        o, _ = forward(net, x, training=True, rng=5)  # same masks
        return float(bce_loss(o, y).sum())

    w = net.weights[0]
    h = 1e-6
    for idx in [(0, 0), (1, 3), (2, 7)]:
        orig = w[idx]
        w[idx] = orig + h
        up = loss()
        w[idx] = orig - h
        down = loss()
        w[idx] = orig
        assert grads[0][idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-10)


def test_gradient_check_cases():
    rng = np.random.default_rng(2)
    small = random_network(rng, max_width=5, max_depth=3)
    assert gradient_check(small, rng.standard_normal(small.in_width), 0.0) < 1e-4

    zero = init_network([LayerSpec(4, 4, "relu"), LayerSpec(4, 1, "sigmoid")], 0)
    for p in zero.params:
        p[...] = 0
    r = gradient_check(zero, np.ones(4), 1.0)
    assert np.isfinite(r)

    lin = DenseNetwork([LayerSpec(1, 1, "sigmoid")], [np.array([[0.4]])], [np.array([0.1])])
    assert gradient_check(lin, [0.5], 1.0) < 1e-9


def test_linear_1_to_1_gradient_check():
    # affine forward, but -ln p still leaves central-difference truncation of
    # about h^2 / (3 p^2); at p = 0.9 that is ~4e-11
    net = _linear(0.2, 0.8)
    assert gradient_check(net, [0.5], 1.0) < 1e-10


def test_gradient_suite_all_activations():
    errors = gradcheck_suite(100, seed=123)
    assert max(errors) < 1e-4


def test_dropout_expectation():
    net = DenseNetwork([LayerSpec(1, 10000, "linear", dropout=0.3)],
                       [np.ones((1, 10000))], [np.zeros(10000)])
    out, trace = forward(net, [2.0], training=True, rng=0)
    vals = out[0]
    mean = vals.mean()
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(mean - 2.0) < 5 * se
    assert set(np.unique(trace.masks[0])) <= {0.0, 1 / 0.7}


def test_eval_mode_deterministic():
    net = init_network([LayerSpec(3, 5, "relu", dropout=0.5), LayerSpec(5, 1, "sigmoid")], 4)
    x = np.ones((2, 3))
    a, ta = forward(net, x)
    b, _ = forward(net, x)
    assert np.array_equal(a, b)
    assert ta.masks == [None, None]


def test_adam_first_step():
    p = [np.array([1.0])]
    state = AdamState.for_params(p, lr=0.0002)
    adam_step(p, [np.array([1.0])], state)
    assert abs((p[0][0] - 1.0) - (-0.0002)) < 1e-9
    assert state.step == 1


def test_adam_zero_gradient_fixed_point():
    p = [np.array([[0.5, -0.5]])]
    state = AdamState.for_params(p)
    adam_step(p, [np.zeros((1, 2))], state)
    assert p[0].tolist() == [[0.5, -0.5]]


def test_adam_deterministic_and_shape_checked():
    def run():
        p = [np.array([1.0, 2.0])]
        s = AdamState.for_params(p, lr=0.1)
        for g in ([0.3, -1.0], [2.0, 0.5]):
            adam_step(p, [np.array(g)], s)
        return p[0], s
    (a, sa), (b, sb) = run(), run()
    assert np.array_equal(a, b) and sa.step == sb.step == 2
    assert all(np.all(np.isfinite(m)) for m in sa.m + sa.v)
    with pytest.raises(NetworkError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.for_params([np.zeros(2)]))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    net = random_network(rng)
    opt = AdamState.for_params(net.params, lr=0.01)
    out, trace = forward(net, np.ones(net.in_width))
    grads, _ = backward(net, trace, np.ones_like(out))
    adam_step(net.params, grads, opt)
    path = tmp_path / "ck.json"
    save_checkpoint(path, {"net": net}, {"net": opt}, {"seed": 17})
    nets, opts, extra = load_checkpoint(path)
    for p, q in zip(net.params, nets["net"].params):
        assert np.array_equal(p, q)
    for p, q in zip(opt.m + opt.v, opts["net"].m + opts["net"].v):
        assert np.array_equal(p, q)
    assert opts["net"].step == 1 and extra == {"seed": 17}
    assert nets["net"].layers == net.layers
