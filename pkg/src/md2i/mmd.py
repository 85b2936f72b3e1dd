"""RBF-kernel MMD between encodings and the multi-domain alignment loss."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError



@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 10.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")


def rbf_kernel(a, b, cfg=KernelConfig()):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.size} vs {b.size}")
    diff = a - b
    return float(np.exp(-(diff @ diff) / (2.0 * cfg.sigma)))


def _check_pair(Es, Et):
    Es = np.ascontiguousarray(Es, dtype=np.float64)
    Et = np.ascontiguousarray(Et, dtype=np.float64)
    if Es.ndim != 2 or Et.ndim != 2:
        raise DimensionError("encodings must be 2-D")
    if Es.shape[0] == 0 or Et.shape[0] == 0:
        raise ParameterError("mmd2 needs non-empty samples")
    if Es.shape[1] != Et.shape[1]:
        raise DimensionError(f"encoding widths differ: {Es.shape[1]} vs {Et.shape[1]}")
    return Es, Et


def mmd2(Es, Et, cfg=KernelConfig()):
    """Biased MMD^2 (diagonal kernel terms included)."""
    Es, Et = _check_pair(Es, Et)
    val, _, _ = kernels.mmd2_grad(Es, Et, cfg.sigma)
    return max(float(val), 0.0)


def mmd2_grad(Es, Et, cfg=KernelConfig()):
    Es, Et = _check_pair(Es, Et)
    val, gs, gt = kernels.mmd2_grad(Es, Et, cfg.sigma)
    return max(float(val), 0.0), gs, gt


def _pairs(encodings):
    encodings = [np.ascontiguousarray(E, dtype=np.float64) for E in encodings]
    if not encodings:
        raise ParameterError("need at least one encoding")
    widths = {E.shape[1] for E in encodings}
    if len(widths) != 1:
        raise DimensionError(f"inconsistent encoding widths {sorted(widths)}")
    return encodings


def mmd_loss(encodings, cfg=KernelConfig()):
    """Mean of MMD (not squared) over all ordered domain pairs, i = j included."""
    encodings = _pairs(encodings)
    S = len(encodings)
    total = 0.0
    for i in range(S):
        for j in range(i + 1, S):
            total += 2.0 * np.sqrt(mmd2(encodings[i], encodings[j], cfg))
    return total / (S * S)


def mmd_loss_grad(encodings, cfg=KernelConfig()):
    """Loss value and its gradient w.r.t. every encoding.

    A pair whose mmd2 is exactly zero contributes a zero (sub)gradient; away
    from zero the mmd2 gradient shrinks like sqrt(mmd2), so the ratio stays
    bounded as two domains coincide.
    """
    encodings = _pairs(encodings)
    S = len(encodings)
    grads = [np.zeros_like(E) for E in encodings]
    total = 0.0
    for i in range(S):
        for j in range(i + 1, S):
            val, gi, gj = mmd2_grad(encodings[i], encodings[j], cfg)
            total += 2.0 * np.sqrt(val)
            if val <= 0.0:
                continue
            c = 2.0 / (S * S) / (2.0 * np.sqrt(val))
            grads[i] += c * gi
            grads[j] += c * gj
    return total / (S * S), grads
