"""Sequential MLPs with hand-written reverse-mode gradients and momentum SGD."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, StateError

ACTIVATIONS = ("linear", "relu", "sigmoid")


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")


class Layer:
    def __init__(self, W, b, activation="linear"):
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        W = np.array(W, dtype=np.float64, ndmin=2)
        b = np.array(b, dtype=np.float64).reshape(-1)
        if b.shape[0] != W.shape[1]:
            raise DimensionError(f"bias width {b.shape[0]} != weight out-dim {W.shape[1]}")
        self.W = W
        self.b = b
        self.activation = activation
        self.gW = np.zeros_like(W)
        self.gb = np.zeros_like(b)
        self.vW = np.zeros_like(W)
        self.vb = np.zeros_like(b)

    @property
    def shape(self):
        return self.W.shape


class MlpNet:
    """A stack of dense layers ``act(x @ W + b)``.

    Weights are stored input-major, so a layer maps ``(n, in)`` to
    ``(n, out)``. ``backward`` accumulates into the gradient buffers until
    :func:`sgd_step` or :meth:`zero_grad` clears them.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ParameterError("an MlpNet needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError(f"layer shapes do not compose: {a.shape} -> {b.shape}")
        self.layers = layers
        self._cache = None

    @classmethod
    def build(cls, sizes, activations, rng):
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ParameterError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            layers.append(Layer(W, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].shape[1]

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise DimensionError(f"expected input width {self.in_dim}, got shape {X.shape}")
        cache = []
        h = X
        for layer in self.layers:
            z = h @ layer.W + layer.b
            if layer.activation == "relu":
                a = np.maximum(z, 0.0)
            elif layer.activation == "sigmoid":
                a = sigmoid(z)
            else:
                a = z
            cache.append((h, z, a))
            h = a
        self._cache = cache
        return h

    def __call__(self, X):
        return self.forward(X)

    def backward(self, grad_out, accumulate=True):
        """Backpropagate ``grad_out`` and return the gradient w.r.t. the input.

        With ``accumulate=False`` the parameter buffers are left untouched,
        which is how a frozen network passes gradients through.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != self._cache[-1][2].shape:
            raise DimensionError(f"output grad shape {g.shape} != output shape {self._cache[-1][2].shape}")
        for layer, (h, z, a) in zip(reversed(self.layers), reversed(self._cache)):
            if layer.activation == "relu":
                g = g * (z > 0)
            elif layer.activation == "sigmoid":
                g = g * a * (1.0 - a)
            if accumulate:
                layer.gW += h.T @ g
                layer.gb += g.sum(axis=0)
            g = g @ layer.W.T
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.gW[...] = 0.0
            layer.gb[...] = 0.0

    def params(self):
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def grads(self):
        out = []
        for layer in self.layers:
            out += [layer.gW, layer.gb]
        return out

    def velocities(self):
        out = []
        for layer in self.layers:
            out += [layer.vW, layer.vb]
        return out

    def named_params(self, prefix):
        return {f"{prefix}.{i}.{k}": getattr(layer, k)
                for i, layer in enumerate(self.layers) for k in ("W", "b")}

    def load_named(self, prefix, arrays):
        for i, layer in enumerate(self.layers):
            for k in ("W", "b"):
                src = arrays[f"{prefix}.{i}.{k}"]
                dst = getattr(layer, k)
                if src.shape != dst.shape:
                    raise DimensionError(f"{prefix}.{i}.{k}: shape {src.shape} != {dst.shape}")
                dst[...] = src

    def copy(self):
        net = MlpNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])
        return net


def sgd_step(model, cfg):
    """``v <- momentum * v + grad; theta <- theta - lr * v``, then clear grads.

    ``model`` is anything exposing ``params()``, ``grads()`` and
    ``velocities()`` as parallel lists of arrays.
    """
    for p, g, v in zip(model.params(), model.grads(), model.velocities()):
        v *= cfg.momentum
        v += g
        p -= cfg.learning_rate * v
        g[...] = 0.0


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def grad_check(net, loss_fn, X, h=1e-5):
    """Max relative error between backprop and finite-difference gradients.

    ``loss_fn(out)`` must return ``(loss, dloss/dout)``.
    """
    net.zero_grad()
    out = net.forward(X)
    _, gout = loss_fn(out)
    net.backward(gout)
    analytic = [g.copy() for g in net.grads()]
    net.zero_grad()

    def f():
        return loss_fn(net.forward(X))[0]

    err = 0.0
    for p, a in zip(net.params(), analytic):
        err = max(err, rel_error(a, numeric_grad(f, p, h)))
    return err
