"""Shared linear multi-task head over encodings with lasso + ridge penalties."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .imputer import LOG_FLOOR
from .nn import softmax

SINGLE_OUTPUT_UNITS = 10


@dataclass(frozen=True)
class TaskSlice:
    offset: int
    width: int
    kind: str  # "classification" | "regression"
    n_classes: int = 0


def _n_classes(task):
    # units past the class count are allocated but never read
    return task.n_classes or task.width


def task_width(kind, n_classes=0):
    if kind == "classification":
        return max(SINGLE_OUTPUT_UNITS, n_classes)
    if kind == "regression":
        return SINGLE_OUTPUT_UNITS
    raise ParameterError(f"unknown task kind {kind!r}")


class ClassifierHead:
    """Logits ``E @ W``; each task owns a disjoint column slice of ``W``.

    Classification tasks read a softmax over their slice; regression tasks
    average their slice's linear units into one value.
    """

    def __init__(self, W, tasks, rho0=1.0, rho_l2=0.1):
        W = np.array(W, dtype=np.float64)
        offset = 0
        for t in tasks:
            if t.offset != offset:
                raise ParameterError("task slices must be contiguous and disjoint")
            offset += t.width
        if W.shape[1] != offset:
            raise DimensionError(f"W has {W.shape[1]} columns, tasks need {offset}")
        if rho0 < 0 or rho_l2 < 0:
            raise ParameterError("regularization weights must be nonnegative")
        self.W = W
        self.tasks = list(tasks)
        self.rho0 = rho0
        self.rho_l2 = rho_l2
        self.gW = np.zeros_like(W)
        self.vW = np.zeros_like(W)

    @classmethod
    def build(cls, d_e, task_specs, rng, rho0=1.0, rho_l2=0.1):
        """``task_specs`` is a list of ``(kind, n_classes)`` pairs."""
        tasks, offset = [], 0
        for kind, k in task_specs:
            w = task_width(kind, k)
            tasks.append(TaskSlice(offset, w, kind, k))
            offset += w
        lim = np.sqrt(6.0 / (d_e + offset))
        return cls(rng.uniform(-lim, lim, size=(d_e, offset)), tasks, rho0, rho_l2)

    @property
    def d_e(self):
        return self.W.shape[0]

    def _task(self, t):
        if not 0 <= t < len(self.tasks):
            raise ParameterError(f"unknown task index {t}")
        return self.tasks[t]

    def logits(self, E, t):
        task = self._task(t)
        E = np.asarray(E, dtype=np.float64)
        if E.ndim != 2 or E.shape[1] != self.d_e:
            raise DimensionError(f"expected encodings of width {self.d_e}, got {E.shape}")
        return E @ self.W[:, task.offset:task.offset + task.width]

    def predict(self, E, t):
        """Class probabilities (n x n_classes) or regression values (n x 1)."""
        z = self.logits(E, t)
        task = self._task(t)
        if task.kind == "classification":
            return softmax(z[:, :_n_classes(task)])
        return z.mean(axis=1, keepdims=True)

    def predict_labels(self, E, t):
        return np.argmax(self.predict(E, t), axis=1)  # ties go to the lowest index

    def penalty(self):
        return self.rho0 * np.abs(self.W).sum() + self.rho_l2 * np.sum(self.W * self.W)

    def penalty_grad(self):
        return self.rho0 * np.sign(self.W) + 2.0 * self.rho_l2 * self.W

    def params(self):
        return [self.W]

    def grads(self):
        return [self.gW]

    def velocities(self):
        return [self.vW]

    def zero_grad(self):
        self.gW[...] = 0.0


def task_data_loss_grad(head, E, Y, t):
    """Data term of one task and its gradients w.r.t. the task's W slice and E."""
    task = head._task(t)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != E.shape[0]:
        raise DimensionError(f"{Y.shape[0]} labels for {E.shape[0]} encodings")
    z = head.logits(E, t)
    if task.kind == "classification":
        k = _n_classes(task)
        if Y.shape[1] > k:
            raise DimensionError(f"{Y.shape[1]} label columns for {k} classes")
        T = np.zeros((z.shape[0], k))
        T[:, :Y.shape[1]] = Y
        p = softmax(z[:, :k])
        val = -np.sum(T * np.log(np.maximum(p, LOG_FLOOR)))
        dz = np.zeros_like(z)
        dz[:, :k] = p * T.sum(axis=1, keepdims=True) - T
    else:
        pred = z.mean(axis=1, keepdims=True)
        r = pred - Y[:, :1]
        val = float(np.sum(r * r))
        dz = np.repeat(2.0 * r / task.width, task.width, axis=1)
    Wt = head.W[:, task.offset:task.offset + task.width]
    return float(val), E.T @ dz, dz @ Wt.T


def loss_mtl_grad(head, encodings, labels, tasks=None, penalty_scale=1.0):
    """Sum of per-task data losses plus ``rho0 |W|_1 + rho_l2 |W|_F^2``.

    ``tasks[i]`` names the head task for ``encodings[i]``; by default the
    i-th pair belongs to task i. ``penalty_scale`` multiplies the penalty
    (a minibatch carries only its share of it). Returns
    ``(value, grad_W, grads_E)``.
    """
    if len(encodings) != len(labels):
        raise DimensionError("one label matrix per encoding matrix required")
    tasks = list(range(len(encodings))) if tasks is None else list(tasks)
    gW = penalty_scale * head.penalty_grad()
    total = penalty_scale * head.penalty()
    gEs = []
    for E, Y, t in zip(encodings, labels, tasks):
        val, gw, ge = task_data_loss_grad(head, np.asarray(E, dtype=np.float64), Y, t)
        task = head.tasks[t]
        gW[:, task.offset:task.offset + task.width] += gw
        total += val
        gEs.append(ge)
    return float(total), gW, gEs


def loss_mtl(head, encodings, labels, tasks=None, penalty_scale=1.0):
    return loss_mtl_grad(head, encodings, labels, tasks, penalty_scale)[0]
