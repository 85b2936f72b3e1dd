import math

import numpy as np
import numpy.testing as npt
import pytest

from md2i.data import one_hot
from md2i.errors import DimensionError, ParameterError
from md2i.mtl import ClassifierHead, TaskSlice, loss_mtl, loss_mtl_grad, task_width
from md2i.nn import SgdConfig, numeric_grad, rel_error, sgd_step


def head(rng, specs, d_e=4, rho0=1.0, rho_l2=0.1):
    return ClassifierHead.build(d_e, specs, rng, rho0, rho_l2)


def test_slice_widths(rng):
    h = head(rng, [("classification", 4), ("classification", 12), ("regression", 0)])
    assert [t.width for t in h.tasks] == [10, 12, 10]
    assert [t.offset for t in h.tasks] == [0, 10, 22]
    assert h.W.shape == (4, 32)
    with pytest.raises(ParameterError):
        task_width("ranking")
    with pytest.raises(ParameterError):
        ClassifierHead(np.zeros((2, 10)), [TaskSlice(1, 10, "regression")])


def test_zero_weights_uniform(rng):
    h = head(rng, [("classification", 4)])
    h.W[...] = 0.0
    p = h.predict(rng.normal(size=(3, 4)), 0)
    npt.assert_allclose(p, 0.25)
    npt.assert_array_equal(h.predict_labels(rng.normal(size=(3, 4)), 0), 0)


def test_softmax_rows_sum_to_one(rng):
    h = head(rng, [("classification", 10)])
    p = h.predict(rng.normal(size=(20, 4)) * 5, 0)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12


def test_hand_logits():
    W = np.zeros((2, 10))
    W[:, :3] = [[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]]
    h = ClassifierHead(W, [TaskSlice(0, 10, "classification", 3)])
    E = np.array([[2.0, 1.0]])
    npt.assert_allclose(h.logits(E, 0)[:, :3], [[1.0, 4.5, 10.0]])


def test_regression_readout_is_mean():
    W = np.arange(20, dtype=float).reshape(2, 10)
    h = ClassifierHead(W, [TaskSlice(0, 10, "regression")])
    E = np.array([[1.0, 0.5]])
    npt.assert_allclose(h.predict(E, 0), [[np.mean(E @ W)]])


def test_unknown_task(rng):
    with pytest.raises(ParameterError):
        head(rng, [("regression", 0)]).predict(np.zeros((1, 4)), 3)
    with pytest.raises(DimensionError):
        head(rng, [("regression", 0)]).predict(np.zeros((1, 5)), 0)


def test_penalty_values():
    W = np.zeros((1, 10))
    W[0, :2] = [1.0, -2.0]
    h = ClassifierHead(W, [TaskSlice(0, 10, "regression")], rho0=1.0, rho_l2=0.1)
    assert math.isclose(h.penalty(), 3.5)
    h.W[...] = 0.0
    h.rho_l2 = 1.0
    assert h.penalty() == 0.0


def test_uniform_cross_entropy(rng):
    h = head(rng, [("classification", 4)], rho0=0.0, rho_l2=0.0)
    h.W[...] = 0.0
    n = 7
    Y = one_hot(rng.integers(0, 4, n), 4)
    assert math.isclose(loss_mtl(h, [rng.normal(size=(n, 4))], [Y]), n * math.log(4))


def test_plain_single_task_losses(rng):
    E = rng.normal(size=(5, 4))
    h = head(rng, [("classification", 3)], rho0=0.0, rho_l2=0.0)
    Y = one_hot([0, 2, 1, 1, 0], 3)
    z = E @ h.W[:, :3]
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    npt.assert_allclose(loss_mtl(h, [E], [Y]), -np.sum(Y * np.log(p)), rtol=1e-12)
    hr = head(rng, [("regression", 0)], rho0=0.0, rho_l2=0.0)
    y = rng.normal(size=(5, 1))
    npt.assert_allclose(loss_mtl(hr, [E], [y]), np.sum(((E @ hr.W).mean(1, keepdims=True) - y) ** 2))


def test_row_mismatch(rng):
    h = head(rng, [("regression", 0)])
    with pytest.raises(DimensionError):
        loss_mtl(h, [np.zeros((3, 4))], [np.zeros((2, 1))])


def _problem(rng):
    h = head(rng, [("classification", 3), ("regression", 0), ("classification", 12)])
    h.W += np.sign(h.W) * 0.05  # keep clear of the L1 kink
    Es = [rng.normal(size=(n, 4)) for n in (5, 4, 6)]
    Ys = [one_hot(rng.integers(0, 3, 5), 3), rng.normal(size=(4, 1)), one_hot(rng.integers(0, 12, 6), 12)]
    return h, Es, Ys


def test_grad_fd(rng):
    h, Es, Ys = _problem(rng)
    _, gW, gEs = loss_mtl_grad(h, Es, Ys)
    assert rel_error(gW, numeric_grad(lambda: loss_mtl(h, Es, Ys), h.W)) < 1e-4
    for E, g in zip(Es, gEs):
        assert rel_error(g, numeric_grad(lambda: loss_mtl(h, Es, Ys), E)) < 1e-4


def test_l1_gradient_is_sign(rng):
    h = head(rng, [("regression", 0)], rho0=0.7, rho_l2=0.0)
    _, gW, _ = loss_mtl_grad(h, [], [])
    npt.assert_array_equal(gW, 0.7 * np.sign(h.W))


def test_e_grad_independent_of_penalty(rng):
    h, Es, Ys = _problem(rng)
    _, _, g1 = loss_mtl_grad(h, Es, Ys)
    h.rho0, h.rho_l2 = 5.0, 3.0
    _, _, g2 = loss_mtl_grad(h, Es, Ys)
    for a, b in zip(g1, g2):
        npt.assert_array_equal(a, b)


def test_task_isolation(rng):
    h, Es, Ys = _problem(rng)
    h.rho0 = h.rho_l2 = 0.0
    _, gW, _ = loss_mtl_grad(h, Es[1:2], Ys[1:2], tasks=[1])
    t = h.tasks[1]
    outside = np.delete(gW, np.arange(t.offset, t.offset + t.width), axis=1)
    assert not outside.any()
    assert gW[:, t.offset:t.offset + t.width].any()


def _train_l1(rho0):
    rng = np.random.default_rng(3)
    h = ClassifierHead.build(6, [("classification", 3)], rng, rho0, 0.1)
    E = rng.normal(size=(40, 6))
    Y = one_hot(rng.integers(0, 3, 40), 3)
    cfg = SgdConfig(0.01, 0.9)
    for _ in range(300):
        _, gW, _ = loss_mtl_grad(h, [E], [Y])
        h.gW += gW / 40
        sgd_step(h, cfg)
    return np.abs(h.W).sum()


def test_l1_monotone():
    assert _train_l1(2.0) <= _train_l1(0.5)
