"""Finite-difference verification of every training loss.

Each check builds a small random instance, takes the analytic gradient the
trainer would use, and compares it with central differences of the loss
value. Network losses are checked through the network parameters, so the
backward passes are covered as well as the loss derivatives.
"""
from dataclasses import dataclass

import numpy as np

from .data import BINARY, CONTINUOUS, make_tilde
from .imputer import (Discriminator, Generator, discriminate, discriminator_input_grad, impute,
                      loss_disc, loss_disc_grad, loss_gen_adv, loss_gen_adv_grad, loss_rec,
                      loss_rec_grad, sample_hint)
from .mmd import KernelConfig, mmd_loss, mmd_loss_grad
from .mtl import ClassifierHead, loss_mtl, loss_mtl_grad
from .nn import numeric_grad, rel_error

LOSSES = ("l_rec", "l_m", "l_d", "l_c", "l_mmd")
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    loss: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool(self.max_rel_error <= self.tolerance)


def _instance(rng, n=6, d=5):
    types = tuple(BINARY if j == d - 1 else CONTINUOUS for j in range(d))
    X = rng.uniform(0.05, 0.95, size=(n, d))
    X[:, -1] = rng.integers(0, 2, n)
    M = (rng.uniform(size=(n, d)) > 0.35).astype(np.float64)
    M[:, 0] = 1.0
    X_tilde, M = make_tilde(X, M, rng)
    return X, X_tilde, M, types


def _compare(params, analytic, f, h):
    return max(rel_error(a, numeric_grad(f, p, h)) for p, a in zip(params, analytic))


def check_rec(rng, h, corrupt=1.0):
    X, X_tilde, M, types = _instance(rng)
    G = Generator.build(X.shape[1], rng, d_e=4)
    G.zero_grad()
    X_bar, _ = G.generate(X_tilde, M)
    _, g = loss_rec_grad(X, X_bar, M, types)
    G.backward(grad_xbar=g * corrupt)
    analytic = [a.copy() for a in G.grads()]
    return _compare(G.params(), analytic, lambda: loss_rec(X, G.generate(X_tilde, M)[0], M, types), h)


def check_gen_adv(rng, h, corrupt=1.0):
    _, X_tilde, M, _ = _instance(rng)
    d = M.shape[1]
    G = Generator.build(d, rng, d_e=4)
    D = Discriminator.build(d, rng, hidden=4)
    H = sample_hint(M, rng)

    def value():
        X_bar, _ = G.generate(X_tilde, M)
        return loss_gen_adv(M, discriminate(D, impute(X_tilde, M, X_bar), H))

    G.zero_grad()
    X_bar, _ = G.generate(X_tilde, M)
    _, g_mhat = loss_gen_adv_grad(M, discriminate(D, impute(X_tilde, M, X_bar), H))
    g_xhat = discriminator_input_grad(D, g_mhat)
    G.backward(grad_xbar=(1.0 - M) * g_xhat * corrupt)
    analytic = [a.copy() for a in G.grads()]
    return _compare(G.params(), analytic, value, h)


def check_disc(rng, h, corrupt=1.0):
    _, X_tilde, M, _ = _instance(rng)
    d = M.shape[1]
    X_hat = impute(X_tilde, M, rng.uniform(size=M.shape))
    D = Discriminator.build(d, rng, hidden=4)
    H = sample_hint(M, rng)
    D.zero_grad()
    _, g = loss_disc_grad(M, discriminate(D, X_hat, H), H)
    D.net.backward(g * corrupt)
    analytic = [a.copy() for a in D.grads()]
    return _compare(D.params(), analytic, lambda: loss_disc(M, discriminate(D, X_hat, H), H), h)


def check_mtl(rng, h, corrupt=1.0):
    d_e = 4
    head = ClassifierHead.build(d_e, [("classification", 3), ("regression", 0)], rng, 1.0, 0.1)
    head.W += np.sign(head.W) * 0.05  # keep entries away from the L1 kink
    Es = [rng.normal(size=(5, d_e)), rng.normal(size=(4, d_e))]
    Ys = [np.eye(3)[rng.integers(0, 3, 5)], rng.normal(size=(4, 1))]
    _, gW, gEs = loss_mtl_grad(head, Es, Ys)
    f = lambda: loss_mtl(head, Es, Ys)  # noqa: E731
    return _compare([head.W] + Es, [gW * corrupt] + list(gEs), f, h)


def check_mmd(rng, h, corrupt=1.0):
    d = 5
    G = Generator.build(d, rng, d_e=3)
    parts = []
    for s in range(3):
        _, X_tilde, M, _ = _instance(rng, n=4 + s, d=d)
        parts.append((X_tilde + 0.3 * s, M))
    cfg = KernelConfig(1.0)

    def value():
        return mmd_loss([G.encode(Xt, M) for Xt, M in parts], cfg)

    G.zero_grad()
    inputs = np.vstack([np.hstack(p) for p in parts])
    E_all = G.encoder.forward(inputs)
    encodings = np.split(E_all, np.cumsum([len(p[0]) for p in parts])[:-1])
    _, grads = mmd_loss_grad(encodings, cfg)
    G.encoder.backward(np.vstack(grads) * corrupt)
    return _compare(G.encoder.params(), [a.copy() for a in G.encoder.grads()], value, h)


_CHECKS = {"l_rec": check_rec, "l_m": check_gen_adv, "l_d": check_disc, "l_c": check_mtl, "l_mmd": check_mmd}


def run_gradcheck(seed=0, tolerance=TOLERANCE, h=1e-5, corrupt=None):
    """Check all five losses; ``corrupt`` names a loss whose gradient is scaled by 1.01."""
    results = []
    for i, name in enumerate(LOSSES):
        rng = np.random.default_rng([seed, i])
        err = _CHECKS[name](rng, h, 1.01 if name == corrupt else 1.0)
        results.append(CheckResult(name, err, tolerance))
    return results
