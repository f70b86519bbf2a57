"""Losses and exact parameter gradients.

Linear architectures use the closed-form expressions in terms of the
propagated representations ``X_(l-1) S^(k-l+1)``; ReLU architectures use
ordinary reverse-mode accumulation. :func:`finite_difference_gradients` is
the independent oracle for both.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .graph import matrix_power
from .linalg import as_matrix, frob_sq
from .model import GnnParams, forward, hidden_states, layer_products


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    CROSS_ENTROPY = "cross_entropy"

    @classmethod
    def _missing_(cls, value):
        aliases = {"sq": cls.SQUARED, "square": cls.SQUARED, "mse": cls.SQUARED,
                   "ce": cls.CROSS_ENTROPY, "crossentropy": cls.CROSS_ENTROPY}
        if isinstance(value, str):
            return aliases.get(value.lower())
        return None


@dataclass(frozen=True)
class ResidualGrad:
    """Loss value and its derivative ``V`` with respect to the model output."""

    loss: float
    V: np.ndarray


@dataclass(frozen=True)
class GradientSet:
    """Gradients laid out like :class:`GnnParams` (``W`` tuple, ``B`` tuple)."""

    W: tuple
    B: tuple

    def matrices(self):
        return list(self.W) + list(self.B)

    def flatten(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.matrices()])

    def norm_sq(self) -> float:
        return float(sum(frob_sq(m) for m in self.matrices()))


def _log_softmax(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))


def check_one_hot(Y) -> np.ndarray:
    """Class index per column; raises if ``Y`` is not one-hot by columns."""
    Y = np.asarray(Y)
    if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=0) == 1)):
        raise ValueError("cross-entropy targets must be one-hot columns")
    return Y.argmax(axis=0)


def loss_and_residual_grad(Y_hat, Y, kind) -> ResidualGrad:
    """Squared: ``||Y_hat - Y||_F^2`` with ``V = 2 (Y_hat - Y)``.

    Cross-entropy is summed over training columns (softmax down each
    column), ``V = softmax(Y_hat) - Y``.
    """
    kind = LossKind(kind)
    Y_hat = as_matrix(Y_hat, "Y_hat")
    Y = as_matrix(Y, "Y")
    if Y_hat.shape != Y.shape:
        raise DimensionError(f"prediction {Y_hat.shape} and target {Y.shape} differ in shape")
    if kind is LossKind.SQUARED:
        R = Y_hat - Y
        return ResidualGrad(frob_sq(R), 2.0 * R)
    classes = check_one_hot(Y)
    logp = _log_softmax(Y_hat)
    cols = np.arange(Y.shape[1])
    loss = -float(np.sum(logp[classes, cols]))
    return ResidualGrad(loss, np.exp(logp) - Y)


def loss_value(params: GnnParams, X, S, idx, Y, kind) -> float:
    return loss_and_residual_grad(forward(params, X, S, idx), Y, kind).loss


def evaluate(params: GnnParams, X, S, idx, Y, kind) -> ResidualGrad:
    return loss_and_residual_grad(forward(params, X, S, idx), Y, kind)


def _linear_gradients(params: GnnParams, X, S, idx, V):
    states, _ = hidden_states(params, X, S)
    H = params.H
    heads = range(H + 1) if params.arch.multiscale else [H]
    dW = [V @ states[l][:, idx].T for l in heads]
    dB = []
    for l in range(1, H + 1):
        g = np.zeros(params.B[l - 1].shape)
        for k in heads:
            if k < l:
                continue
            # X_(l-1) S^(k-l+1) on training columns
            feat = (states[l - 1] @ matrix_power(S, k - l + 1))[:, idx]
            left = params.out_weight(k) @ layer_products(params, l + 1, k)
            g += left.T @ V @ feat.T
        dB.append(g)
    return GradientSet(tuple(dW), tuple(dB))


def _relu_gradients(params: GnnParams, X, S, idx, V):
    states, pre = hidden_states(params, X, S)
    H, n = params.H, states[0].shape[1]
    # V scattered back onto all n columns
    Vfull = np.zeros((params.m_y, n))
    Vfull[:, idx] = V
    if params.arch.multiscale:
        dW = [Vfull @ states[l].T for l in range(H + 1)]
        up = [params.W[l].T @ Vfull for l in range(H + 1)]
    else:
        dW = [Vfull @ states[H].T]
        up = [None] * H + [params.W[0].T @ Vfull]
    dB = [None] * H
    G = up[H]
    for l in range(H, 0, -1):
        dP = G * (pre[l] > 0)
        dB[l - 1] = dP @ (states[l - 1] @ S).T
        G = params.B[l - 1].T @ dP @ S.T
        if up[l - 1] is not None:
            G = G + up[l - 1]
    return GradientSet(tuple(dW), tuple(dB))


def analytic_gradients(params: GnnParams, X, S, idx, rg: ResidualGrad) -> GradientSet:
    """Exact gradients of the configured loss given its output derivative ``rg.V``."""
    X = as_matrix(X, "X")
    S = as_matrix(S, "S")
    idx = np.asarray(idx, dtype=np.int64)
    V = as_matrix(rg.V, "V")
    if V.shape != (params.m_y, idx.size):
        raise DimensionError(f"V has shape {V.shape}, expected {(params.m_y, idx.size)}")
    if params.arch.relu:
        return _relu_gradients(params, X, S, idx, V)
    return _linear_gradients(params, X, S, idx, V)


def loss_and_gradients(params: GnnParams, X, S, idx, Y, kind):
    rg = evaluate(params, X, S, idx, Y, kind)
    return rg, analytic_gradients(params, X, S, idx, rg)


def finite_difference_gradients(params: GnnParams, X, S, idx, Y, kind, eps: float = 1e-5) -> GradientSet:
    """Central differences ``(L(theta + eps e) - L(theta - eps e)) / (2 eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = params.flatten()
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tp[j] += eps
        tm = theta.copy()
        tm[j] -= eps
        lp = loss_value(params.unflatten(tp), X, S, idx, Y, kind)
        lm = loss_value(params.unflatten(tm), X, S, idx, Y, kind)
        g[j] = (lp - lm) / (2.0 * eps)
    shaped = params.unflatten(g)
    return GradientSet(shaped.W, shaped.B)
