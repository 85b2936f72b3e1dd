import numpy as np
import numpy.testing as npt
import pytest

from md2i.errors import DimensionError, ParameterError, StateError
from md2i.nn import Layer, MlpNet, SgdConfig, grad_check, numeric_grad, rel_error, sgd_step


def sq_loss(target):
    def f(out):
        r = out - target
        return float(np.sum(r * r)), 2.0 * r
    return f


def test_identity_linear_layer():
    net = MlpNet([Layer(np.eye(3), np.zeros(3), "linear")])
    x = np.array([[1.0, -2.0, 3.5]])
    npt.assert_array_equal(net.forward(x), x)


def test_relu_layer():
    net = MlpNet([Layer(np.eye(2), np.zeros(2), "relu")])
    npt.assert_array_equal(net.forward(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])


def test_two_layer_hand_evaluation():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.5, -1.0])
    W2 = np.array([[2.0], [-3.0]])
    b2 = np.array([0.25])
    net = MlpNet([Layer(W1, b1, "relu"), Layer(W2, b2, "linear")])
    x = np.array([[1.0, 2.0]])
    # h = relu([1+4+0.5, -1+1-1]) = [5.5, 0]; out = 11 + 0.25
    npt.assert_allclose(net.forward(x), [[11.25]])


def test_shape_errors():
    with pytest.raises(DimensionError):
        MlpNet([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((2, 1)), np.zeros(1))])
    net = MlpNet([Layer(np.ones((2, 3)), np.zeros(3))])
    with pytest.raises(DimensionError):
        net.forward(np.ones((1, 4)))


def test_backward_before_forward():
    net = MlpNet([Layer(np.ones((2, 3)), np.zeros(3))])
    with pytest.raises(StateError):
        net.backward(np.ones((1, 3)))


def test_zero_output_grad_gives_zero_grads(rng):
    net = MlpNet.build([4, 5, 3], ["relu", "sigmoid"], rng)
    out = net.forward(rng.normal(size=(6, 4)))
    net.backward(np.zeros_like(out))
    for g in net.grads():
        assert not g.any()


def test_linear_squared_error_closed_form(rng):
    W = rng.normal(size=(3, 2))
    net = MlpNet([Layer(W, np.zeros(2), "linear")])
    x = rng.normal(size=(1, 3))
    y = rng.normal(size=(1, 2))
    out = net.forward(x)
    net.backward(2.0 * (out - y))
    # stored input-major, so dL/dW = x^T 2(xW - y)
    npt.assert_allclose(net.layers[0].gW, x.T @ (2.0 * (x @ W - y)), rtol=1e-12)


@pytest.mark.parametrize("acts", [["linear"], ["relu", "linear"], ["relu", "sigmoid"],
                                  ["sigmoid", "relu", "linear"]])
def test_grad_check_random_nets(rng, acts):
    sizes = [4] + [5] * (len(acts) - 1) + [3]
    net = MlpNet.build(sizes, acts, rng)
    for layer in net.layers:
        layer.b[...] = rng.normal(scale=0.3, size=layer.b.shape)
    X = rng.normal(size=(6, 4))
    assert grad_check(net, sq_loss(rng.normal(size=(6, 3))), X) < 1e-4


def test_grad_check_constant_loss(rng):
    net = MlpNet.build([3, 4, 2], ["relu", "linear"], rng)
    out_shape = (5, 2)

    def const(out):
        return 3.0, np.zeros(out_shape)

    assert grad_check(net, const, rng.normal(size=(5, 3))) < 1e-4


def test_input_gradient_matches_fd(rng):
    net = MlpNet.build([4, 6, 2], ["relu", "sigmoid"], rng)
    X = rng.normal(size=(3, 4))
    T = rng.normal(size=(3, 2))
    out = net.forward(X)
    gx = net.backward(2.0 * (out - T), accumulate=False)
    fd = numeric_grad(lambda: float(np.sum((net.forward(X) - T) ** 2)), X)
    assert rel_error(gx, fd) < 1e-4


def test_backward_without_accumulate_leaves_buffers(rng):
    net = MlpNet.build([3, 2], ["sigmoid"], rng)
    out = net.forward(rng.normal(size=(4, 3)))
    net.backward(np.ones_like(out), accumulate=False)
    assert all(not g.any() for g in net.grads())


def test_sgd_zero_grad_is_identity(rng):
    net = MlpNet.build([3, 4, 2], ["relu", "linear"], rng)
    before = [p.copy() for p in net.params()]
    sgd_step(net, SgdConfig(0.1, 0.0, 1))
    for a, b in zip(before, net.params()):
        npt.assert_array_equal(a, b)


def test_sgd_plain_step():
    net = MlpNet([Layer(np.array([[1.0]]), np.array([0.0]))])
    net.layers[0].gW[...] = 2.0
    sgd_step(net, SgdConfig(0.1, 0.0, 1))
    npt.assert_allclose(net.layers[0].W, [[0.8]])
    assert net.layers[0].gW[0, 0] == 0.0


def test_sgd_momentum_two_steps():
    cfg = SgdConfig(0.1, 0.9, 1)
    net = MlpNet([Layer(np.array([[0.0]]), np.array([0.0]))])
    g = 0.5
    net.layers[0].gW[...] = g
    sgd_step(net, cfg)
    w1 = net.layers[0].W[0, 0]
    net.layers[0].gW[...] = g
    sgd_step(net, cfg)
    npt.assert_allclose(w1, -0.1 * g)
    npt.assert_allclose(net.layers[0].W[0, 0] - w1, -0.1 * 1.9 * g)


def test_sgd_config_validation():
    with pytest.raises(ParameterError):
        SgdConfig(0.0)
    with pytest.raises(ParameterError):
        SgdConfig(0.1, 1.0)


def test_determinism():
    def run():
        rng = np.random.default_rng(7)
        net = MlpNet.build([3, 4, 1], ["relu", "linear"], rng)
        X = rng.normal(size=(8, 3))
        for _ in range(20):
            out = net.forward(X)
            net.backward(out - 1.0)
            sgd_step(net, SgdConfig())
        return [p.copy() for p in net.params()]

    for a, b in zip(run(), run()):
        assert a.tobytes() == b.tobytes()


def test_glorot_range(rng):
    net = MlpNet.build([10, 30], ["relu"], rng)
    lim = np.sqrt(6.0 / 40)
    assert np.abs(net.layers[0].W).max() <= lim
    assert not net.layers[0].b.any()
