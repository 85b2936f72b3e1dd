import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from md2i import kernels
from md2i.errors import DimensionError, ParameterError
from md2i.mmd import KernelConfig, mmd2, mmd2_grad, mmd_loss, mmd_loss_grad, rbf_kernel
from md2i.nn import SgdConfig, numeric_grad, rel_error


def brute_k(a, b, sigma):
    return math.exp(-sum((x - y) ** 2 for x, y in zip(a, b)) / (2 * sigma))


def brute_mmd2(A, B, sigma):
    n, m = len(A), len(B)
    saa = sum(brute_k(A[i], A[j], sigma) for i in range(n) for j in range(n))
    sbb = sum(brute_k(B[i], B[j], sigma) for i in range(m) for j in range(m))
    sab = sum(brute_k(A[i], B[j], sigma) for i in range(n) for j in range(m))
    return saa / n ** 2 + sbb / m ** 2 - 2 * sab / (n * m)


def test_rbf_values():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0]) == 1.0
    npt.assert_allclose(rbf_kernel([0.0], [1.0], KernelConfig(0.5)), math.exp(-1.0), rtol=1e-15)
    with pytest.raises(DimensionError):
        rbf_kernel([0.0], [1.0, 2.0])
    with pytest.raises(ParameterError):
        KernelConfig(0.0)


def test_rbf_symmetry(rng):
    for _ in range(20):
        a, b = rng.normal(size=(2, 4))
        assert rbf_kernel(a, b) == rbf_kernel(b, a)


@pytest.mark.parametrize("sigma", [0.3, 1.0, 10.0])
def test_mmd2_matches_brute_force(rng, sigma):
    A = rng.normal(size=(5, 3))
    B = rng.normal(size=(7, 3)) + 0.5
    cfg = KernelConfig(sigma)
    assert abs(mmd2(A, B, cfg) - brute_mmd2(A.tolist(), B.tolist(), sigma)) < 1e-10


def test_mmd2_single_rows():
    sigma = 1.5
    a = np.zeros((1, 2))
    b = np.array([[math.sqrt(2 * sigma), 0.0]])
    npt.assert_allclose(mmd2(a, b, KernelConfig(sigma)), 2 * (1 - math.exp(-1)), rtol=1e-13)


def test_mmd2_identical_is_zero(rng):
    A = rng.normal(size=(9, 4))
    assert abs(mmd2(A, A.copy())) < 1e-12


def test_mmd2_errors():
    with pytest.raises(ParameterError):
        mmd2(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        mmd2(np.zeros((2, 2)), np.zeros((3, 3)))


@pytest.mark.parametrize("impl", [kernels.mmd2_grad_np, kernels.mmd2_grad_nb])
def test_backends_agree_with_brute_force(rng, impl):
    A = rng.normal(size=(6, 3))
    B = rng.normal(size=(4, 3))
    val, gA, gB = impl(A, B, 0.8)
    assert abs(val - brute_mmd2(A.tolist(), B.tolist(), 0.8)) < 1e-10
    fdA = numeric_grad(lambda: impl(A, B, 0.8)[0], A)
    fdB = numeric_grad(lambda: impl(A, B, 0.8)[0], B)
    assert rel_error(gA, fdA) < 1e-4
    assert rel_error(gB, fdB) < 1e-4


def test_sq_dists_backends(rng):
    A = rng.normal(size=(5, 3))
    B = rng.normal(size=(4, 3))
    npt.assert_allclose(kernels.sq_dists_np(A, B), kernels.sq_dists_nb(A, B), atol=1e-12)


def test_mmd_loss_single_domain(rng):
    assert mmd_loss([rng.normal(size=(4, 3))]) == 0.0
    _, grads = mmd_loss_grad([rng.normal(size=(4, 3))])
    assert not grads[0].any()


def test_mmd_loss_identical_domains(rng):
    E = rng.normal(size=(6, 3))
    assert abs(mmd_loss([E, E.copy(), E.copy()])) < 1e-10


def test_mmd_loss_brute_force(rng):
    Es = [rng.normal(size=(n, 3)) + k for k, n in enumerate((4, 5, 6))]
    sigma = 2.0
    expect = sum(math.sqrt(max(brute_mmd2(Es[i].tolist(), Es[j].tolist(), sigma), 0.0))
                 for i in range(3) for j in range(3)) / 9
    assert abs(mmd_loss(Es, KernelConfig(sigma)) - expect) < 1e-10


def test_mmd_loss_width_mismatch(rng):
    with pytest.raises(DimensionError):
        mmd_loss([np.zeros((2, 3)), np.zeros((2, 4))])


def test_mmd_loss_grad_fd(rng):
    cfg = KernelConfig(1.0)
    Es = [rng.normal(size=(n, 3)) + 0.7 * k for k, n in enumerate((4, 5, 3))]
    val, grads = mmd_loss_grad(Es, cfg)
    assert abs(val - mmd_loss(Es, cfg)) < 1e-15
    for E, g in zip(Es, grads):
        assert rel_error(g, numeric_grad(lambda: mmd_loss(Es, cfg), E)) < 1e-4


def test_mmd_loss_grad_at_identical_domains(rng):
    # the loss has a cone at identical domains; the symmetric difference is 0 there
    E = rng.normal(size=(5, 2))
    Es = [E, E.copy()]
    _, grads = mmd_loss_grad(Es)
    for Ei, g in zip(Es, grads):
        fd = numeric_grad(lambda: mmd_loss(Es), Ei)
        npt.assert_allclose(g, fd, atol=1e-4)


def test_mmd_loss_grad_pair_structure(rng):
    # the gradient w.r.t. E_0 is the sum of its own pairs' contributions only
    cfg = KernelConfig(1.0)
    Es = [rng.normal(size=(4, 2)) + k for k in range(3)]
    _, grads = mmd_loss_grad(Es, cfg)
    expect = np.zeros_like(Es[0])
    for j in (1, 2):
        v, g0, _ = mmd2_grad(Es[0], Es[j], cfg)
        expect += 2.0 / 9 * g0 / (2 * math.sqrt(v))
    npt.assert_allclose(grads[0], expect, rtol=1e-12)


def test_mmd_loss_sanity_training(rng):
    A = rng.normal(size=(30, 2))
    B = rng.normal(size=(30, 2)) + 3.0
    cfg = KernelConfig(10.0)
    sgd = SgdConfig(0.5, 0.9)
    vA, vB = np.zeros_like(A), np.zeros_like(B)
    start = mmd_loss([A, B], cfg)
    for _ in range(2000):
        _, (gA, gB) = mmd_loss_grad([A, B], cfg)
        vA = sgd.momentum * vA + gA * A.shape[0]
        vB = sgd.momentum * vB + gB * B.shape[0]
        A -= sgd.learning_rate * vA
        B -= sgd.learning_rate * vB
    assert mmd_loss([A, B], cfg) < 0.1 * start


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite),
       st.floats(0.1, 20.0))
def test_mmd2_properties(A, B, sigma):
    cfg = KernelConfig(sigma)
    v = mmd2(A, B, cfg)
    assert v >= 0.0
    assert abs(v - mmd2(B, A, cfg)) < 1e-12
    assert abs(v - mmd2(A[::-1], B[[2, 0, 1]], cfg)) < 1e-12
