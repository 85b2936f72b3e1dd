"""Adversarial autoencoder pieces: generator G = (encoder, decoder), hinted
discriminator D, and the reconstruction / adversarial losses.

Every loss comes in two forms: ``loss_*`` returns the scalar, ``loss_*_grad``
returns ``(value, gradient)`` w.r.t. the network output it is computed on.
"""
import math

import numpy as np

from .data import BINARY, CONTINUOUS
from .errors import DimensionError, ParameterError
from .nn import MlpNet

LOG_FLOOR = 1e-12


def embed_dim(d):
    """Width of the code layer: floor(d / ln d), never below 2."""
    if d <= 2:
        return 2
    return max(2, int(math.floor(d / math.log(d))))


def _log(p):
    return np.log(np.maximum(p, LOG_FLOOR))


def _dlog(p):
    # derivative of log(max(p, floor)); zero where the floor is active
    return np.where(p > LOG_FLOOR, 1.0 / np.maximum(p, LOG_FLOOR), 0.0)


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {a.shape}")


class Generator:
    def __init__(self, encoder, decoder):
        if encoder.out_dim != decoder.in_dim:
            raise DimensionError("encoder output width must equal decoder input width")
        if encoder.in_dim != 2 * decoder.out_dim:
            raise DimensionError("encoder input must be twice the data width")
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def build(cls, d, rng, d_e=None):
        d_e = d_e or embed_dim(d)
        return cls(MlpNet.build([2 * d, d_e], ["relu"], rng),
                   MlpNet.build([d_e, d], ["sigmoid"], rng))

    @property
    def d(self):
        return self.decoder.out_dim

    @property
    def d_e(self):
        return self.encoder.out_dim

    def _input(self, X_tilde, M):
        X_tilde = np.asarray(X_tilde, dtype=np.float64)
        M = np.asarray(M, dtype=np.float64)
        _same_shape(X_tilde, M)
        if X_tilde.ndim != 2 or X_tilde.shape[1] != self.d:
            raise DimensionError(f"expected width {self.d}, got shape {X_tilde.shape}")
        return np.hstack([X_tilde, M])

    def encode(self, X_tilde, M):
        return self.encoder.forward(self._input(X_tilde, M))

    def generate(self, X_tilde, M):
        """Return ``(X_bar, E)``; caches activations for :meth:`backward`."""
        E = self.encode(X_tilde, M)
        return self.decoder.forward(E), E

    def backward(self, grad_xbar=None, grad_e=None):
        """Backprop through decoder (if ``grad_xbar``) and encoder, accumulating grads."""
        g = np.zeros((self.encoder._cache[-1][2].shape)) if grad_e is None else np.array(grad_e)
        if grad_xbar is not None:
            g = g + self.decoder.backward(grad_xbar)
        self.encoder.backward(g)

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def grads(self):
        return self.encoder.grads() + self.decoder.grads()

    def velocities(self):
        return self.encoder.velocities() + self.decoder.velocities()

    def zero_grad(self):
        self.encoder.zero_grad()
        self.decoder.zero_grad()

    def named_params(self):
        out = self.encoder.named_params("G.encoder")
        out.update(self.decoder.named_params("G.decoder"))
        return out

    def load_named(self, arrays):
        self.encoder.load_named("G.encoder", arrays)
        self.decoder.load_named("G.decoder", arrays)


class Discriminator:
    def __init__(self, net):
        if net.in_dim != 2 * net.out_dim or net.layers[-1].activation != "sigmoid":
            raise DimensionError("discriminator must map 2d inputs to d sigmoid outputs")
        self.net = net

    @classmethod
    def build(cls, d, rng, hidden=None):
        hidden = hidden or embed_dim(d)
        return cls(MlpNet.build([2 * d, hidden, d], ["relu", "sigmoid"], rng))

    @property
    def d(self):
        return self.net.out_dim

    def __call__(self, X_hat, H):
        return discriminate(self, X_hat, H)

    def params(self):
        return self.net.params()

    def grads(self):
        return self.net.grads()

    def velocities(self):
        return self.net.velocities()

    def zero_grad(self):
        self.net.zero_grad()

    def named_params(self):
        return self.net.named_params("D")

    def load_named(self, arrays):
        self.net.load_named("D", arrays)


def impute(X_tilde, M, X_bar):
    """Observed entries from ``X_tilde``, missing ones from ``X_bar``."""
    X_tilde = np.asarray(X_tilde, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    X_bar = np.asarray(X_bar, dtype=np.float64)
    _same_shape(X_tilde, M, X_bar)
    if not np.all((M == 0.0) | (M == 1.0)):
        raise ParameterError("mask entries must be 0 or 1")
    return np.where(M == 1.0, X_tilde, X_bar)


def sample_hint(M, rng):
    """Hide one uniformly drawn column per row: H = M there except H = 0.5."""
    M = np.asarray(M, dtype=np.float64)
    n, d = M.shape
    k = rng.integers(0, d, size=n)
    Z = np.ones_like(M)
    Z[np.arange(n), k] = 0.0
    return Z * M + 0.5 * (1.0 - Z)


def discriminate(D, X_hat, H):
    X_hat = np.asarray(X_hat, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    _same_shape(X_hat, H)
    return D.net.forward(np.hstack([X_hat, H]))


def discriminator_input_grad(D, grad_mhat):
    """Gradient w.r.t. the imputed data half of D's input; D's buffers untouched."""
    g = D.net.backward(grad_mhat, accumulate=False)
    return g[:, :D.d]


# ---------------------------------------------------------------------------
# losses


def loss_rec_grad(X, X_gen, M, col_types):
    """Squared error on continuous, ``-x log x_gen`` on binary, observed entries only."""
    X = np.asarray(X, dtype=np.float64)
    X_gen = np.asarray(X_gen, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    _same_shape(X, X_gen, M)
    binary = np.array([t == BINARY for t in col_types], dtype=bool)
    if binary.shape[0] != X.shape[1]:
        raise DimensionError("one column type per column required")
    diff = X_gen - X
    per = np.where(binary, -X * _log(X_gen), diff * diff)
    dper = np.where(binary, -X * _dlog(X_gen), 2.0 * diff)
    return float(np.sum(M * per)), M * dper


def loss_rec(X, X_gen, M, col_types):
    return loss_rec_grad(X, X_gen, M, col_types)[0]


def loss_gen_adv_grad(M, M_hat):
    """``-sum (1 - m) log m_hat`` over missing entries."""
    M = np.asarray(M, dtype=np.float64)
    M_hat = np.asarray(M_hat, dtype=np.float64)
    _same_shape(M, M_hat)
    miss = 1.0 - M
    return float(-np.sum(miss * _log(M_hat))), -miss * _dlog(M_hat)


def loss_gen_adv(M, M_hat):
    return loss_gen_adv_grad(M, M_hat)[0]


def disc_entries(M, H, variant="hint"):
    """Entries the discriminator is trained on.

    ``"hint"``: the per-row column hidden by the hint (H == 0.5).
    ``"missing"``: every missing entry (M == 0).
    """
    if variant == "hint":
        return (np.asarray(H) == 0.5).astype(np.float64)
    if variant == "missing":
        return 1.0 - np.asarray(M, dtype=np.float64)
    raise ParameterError(f"unknown discriminator loss variant {variant!r}")


def loss_disc_grad(M, M_hat, H=None, variant="hint"):
    """Cross-entropy of D's mask prediction over the selected entries (to be minimised)."""
    M = np.asarray(M, dtype=np.float64)
    M_hat = np.asarray(M_hat, dtype=np.float64)
    _same_shape(M, M_hat)
    if variant == "hint" and H is None:
        raise ParameterError("the hint variant needs H")
    sel = disc_entries(M, H, variant)
    val = -np.sum(sel * (M * _log(M_hat) + (1.0 - M) * _log(1.0 - M_hat)))
    grad = -sel * (M * _dlog(M_hat) - (1.0 - M) * _dlog(1.0 - M_hat))
    return float(val), grad


def loss_disc(M, M_hat, H=None, variant="hint"):
    return loss_disc_grad(M, M_hat, H, variant)[0]
