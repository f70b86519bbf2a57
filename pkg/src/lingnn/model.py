"""Linear, multiscale (JK-style) and ReLU GNNs with parameter containers."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .linalg import as_matrix

logger = logging.getLogger(__name__)


class Architecture(str, enum.Enum):
    LINEAR = "linear"
    MULTISCALE = "multiscale"
    RELU = "relu"
    MULTISCALE_RELU = "multiscale_relu"

    @property
    def multiscale(self) -> bool:
        return self in (Architecture.MULTISCALE, Architecture.MULTISCALE_RELU)

    @property
    def relu(self) -> bool:
        return self in (Architecture.RELU, Architecture.MULTISCALE_RELU)

    @classmethod
    def build(cls, multiscale: bool, relu: bool) -> "Architecture":
        if multiscale:
            return cls.MULTISCALE_RELU if relu else cls.MULTISCALE
        return cls.RELU if relu else cls.LINEAR


@dataclass(frozen=True)
class GnnParams:
    """Weights of an H-layer GNN.

    ``B[l-1]`` is ``B_(l)`` with shape ``(m_l, m_{l-1})``. ``W`` is a tuple with
    one matrix ``(m_y, m_H)`` for plain architectures and ``H + 1`` matrices
    ``W_(l)`` of shape ``(m_y, m_l)`` for multiscale ones.
    """

    arch: Architecture
    B: tuple
    W: tuple
    dims: tuple = field(init=False)
    m_y: int = field(init=False)

    def __post_init__(self):
        arch = Architecture(self.arch)
        object.__setattr__(self, "arch", arch)
        B = tuple(as_matrix(b, f"B_({i + 1})").copy() for i, b in enumerate(self.B))
        W = tuple(as_matrix(w, f"W_({i})").copy() for i, w in enumerate(self.W))
        if not W:
            raise DimensionError("at least one output matrix W is required")
        H = len(B)
        if B:
            dims = [B[0].shape[1]] + [b.shape[0] for b in B]
        else:
            dims = [W[-1].shape[1]]
        for l, b in enumerate(B, start=1):
            if b.shape != (dims[l], dims[l - 1]):
                raise DimensionError(f"B_({l}) has shape {b.shape}, expected {(dims[l], dims[l - 1])}")
        m_y = W[0].shape[0]
        if arch.multiscale:
            if len(W) != H + 1:
                raise DimensionError(f"multiscale model needs {H + 1} output matrices, got {len(W)}")
            for l, w in enumerate(W):
                if w.shape != (m_y, dims[l]):
                    raise DimensionError(f"W_({l}) has shape {w.shape}, expected {(m_y, dims[l])}")
        else:
            if len(W) != 1:
                raise DimensionError("non-multiscale model takes exactly one W")
            if W[0].shape[1] != dims[H]:
                raise DimensionError(f"W has {W[0].shape[1]} columns, expected m_H={dims[H]}")
        for m in B + W:
            m.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "dims", tuple(dims))
        object.__setattr__(self, "m_y", m_y)

    @property
    def H(self) -> int:
        return len(self.B)

    def out_weight(self, l: int) -> np.ndarray:
        """``W_(l)``; for plain architectures only ``l == H`` is defined."""
        if self.arch.multiscale:
            return self.W[l]
        if l != self.H:
            raise ValueError("non-multiscale model has no output head at depth %d" % l)
        return self.W[0]

    def replace(self, *, B=None, W=None, arch=None) -> "GnnParams":
        return GnnParams(arch if arch is not None else self.arch,
                         self.B if B is None else B,
                         self.W if W is None else W)

    # flat-vector view, used by trainers and finite differences
    def matrices(self) -> list:
        return list(self.W) + list(self.B)

    def flatten(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.matrices()])

    def unflatten(self, theta) -> "GnnParams":
        theta = np.asarray(theta, dtype=np.float64)
        out, pos = [], 0
        for m in self.matrices():
            out.append(theta[pos:pos + m.size].reshape(m.shape))
            pos += m.size
        if pos != theta.size:
            raise DimensionError("parameter vector has wrong length")
        k = len(self.W)
        return GnnParams(self.arch, tuple(out[k:]), tuple(out[:k]))

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "H": self.H,
            "dims": list(self.dims),
            "m_y": self.m_y,
            "B": [b.tolist() for b in self.B],
            "W": [w.tolist() for w in self.W],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GnnParams":
        B = tuple(np.array(b, dtype=np.float64).reshape(len(b), -1) for b in d["B"])
        W = tuple(np.array(w, dtype=np.float64).reshape(len(w), -1) for w in d["W"])
        p = cls(Architecture(d["arch"]), B, W)
        if "H" in d and d["H"] != p.H:
            raise DimensionError(f"declared H={d['H']} but found {p.H} layers")
        if "dims" in d and list(d["dims"]) != list(p.dims):
            raise DimensionError(f"declared dims {d['dims']} do not match matrices {list(p.dims)}")
        if "m_y" in d and d["m_y"] != p.m_y:
            raise DimensionError("declared m_y does not match W")
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GnnParams":
        return cls.from_dict(json.loads(text))


_GAUSS = re.compile(r"^gaussian(?:\(([^)]+)\))?$")


def _parse_scheme(scheme, sigma):
    s = str(scheme).strip().lower()
    m = _GAUSS.match(s)
    if m:
        return "gaussian", float(m.group(1)) if m.group(1) else float(sigma)
    if s in ("uniform_fan_in", "identity", "orthogonal", "zeros"):
        return s, None
    raise ConfigurationError(f"unknown init scheme {scheme!r}")


def _draw(rng, scheme, sigma, rows, cols, what):
    if scheme == "uniform_fan_in":
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))
    if scheme == "gaussian":
        return rng.normal(0.0, sigma, size=(rows, cols))
    if scheme == "zeros":
        return np.zeros((rows, cols))
    if scheme == "identity":
        if rows != cols:
            raise ConfigurationError(f"identity init needs square {what}, got {rows}x{cols}")
        return np.eye(rows)
    # orthogonal: QR of a Gaussian matrix with sign fix (Haar measure)
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_params(arch, H: int, m_x: int, hidden, m_y: int, scheme="uniform_fan_in",
                seed: int = 0, *, sigma: float = 0.1, zero_skip_heads: bool = False,
                theory: bool = False) -> GnnParams:
    """Deterministic initialisation.

    ``hidden`` is an int (all hidden widths equal) or a list of H widths.
    ``zero_skip_heads`` zeroes ``W_(l)`` for ``l < H`` on multiscale models so
    the network starts with the same output as its plain counterpart.
    With ``theory=True`` a warning is logged when some width is below ``m_x``.
    """
    arch = Architecture(arch)
    if H < 0:
        raise ConfigurationError("depth H must be nonnegative")
    if isinstance(hidden, (int, np.integer)):
        hidden = [int(hidden)] * H
    hidden = [int(h) for h in hidden]
    if len(hidden) != H:
        raise ConfigurationError(f"need {H} hidden widths, got {len(hidden)}")
    dims = [int(m_x)] + hidden
    if min(dims + [int(m_y)]) < 1:
        raise ConfigurationError("all dimensions must be positive")
    if theory and any(m < m_x for m in hidden):
        logger.warning("hidden widths %s below input dimension %d; convergence theory assumes m_l >= m_x",
                       hidden, m_x)
    kind, sig = _parse_scheme(scheme, sigma)
    rng = np.random.default_rng(seed)
    B = [_draw(rng, kind, sig, dims[l], dims[l - 1], f"B_({l})") for l in range(1, H + 1)]
    if arch.multiscale:
        if kind == "identity":
            W = [np.zeros((m_y, dims[l])) for l in range(H)]
            W.append(_draw(rng, kind, sig, m_y, dims[H], f"W_({H})"))
        else:
            W = [_draw(rng, kind, sig, m_y, dims[l], f"W_({l})") for l in range(H + 1)]
            if zero_skip_heads:
                W = [np.zeros_like(w) for w in W[:-1]] + [W[-1]]
    else:
        W = [_draw(rng, kind, sig, m_y, dims[H], "W")]
    return GnnParams(arch, tuple(B), tuple(W))


def _check_inputs(params: GnnParams, X, S):
    X = as_matrix(X, "X")
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1] or X.shape[1] != S.shape[0]:
        raise DimensionError(f"X {X.shape} and S {S.shape} do not conform")
    if X.shape[0] != params.dims[0]:
        raise DimensionError(f"X has {X.shape[0]} features but model expects m_x={params.dims[0]}")
    return X, S


def hidden_states(params: GnnParams, X, S):
    """Node representations ``X_(0..H)`` and pre-activations ``B_(l) X_(l-1) S``.

    Pre-activations are ``None`` at index 0 and equal the states for linear
    architectures.
    """
    X, S = _check_inputs(params, X, S)
    states, pre = [X], [None]
    for b in params.B:
        P = b @ states[-1] @ S
        pre.append(P)
        states.append(np.maximum(P, 0.0) if params.arch.relu else P)
    return states, pre


def forward(params: GnnParams, X, S, idx) -> np.ndarray:
    """Model output on the training columns, shape ``(m_y, n_bar)``."""
    idx = np.asarray(idx, dtype=np.int64)
    states, _ = hidden_states(params, X, S)
    if params.arch.multiscale:
        out = params.W[0] @ states[0][:, idx]
        for l in range(1, params.H + 1):
            out = out + params.W[l] @ states[l][:, idx]
        return out
    return params.W[0] @ states[-1][:, idx]


def layer_products(params: GnnParams, l_from: int, l_to: int) -> np.ndarray:
    """``B_(l_to) ... B_(l_from)``; identity of size ``m_{l_to}`` when ``l_from > l_to``.

    ``l_from`` may be ``H + 1`` (empty product at the top of the stack);
    ``l_from == 0`` is treated as 1 since there is no ``B_(0)``.
    """
    H = params.H
    if not (0 <= l_from <= H + 1 and 0 <= l_to <= H):
        raise IndexError(f"layer range ({l_from}, {l_to}) outside 0..{H}")
    l_from = max(l_from, 1)
    if l_from > l_to:
        return np.eye(params.dims[l_to])
    P = params.B[l_from - 1]
    for l in range(l_from + 1, l_to + 1):
        P = params.B[l - 1] @ P
    return P


def prefix_products(params: GnnParams) -> list:
    """``[Bbar^(1:0), Bbar^(1:1), ..., Bbar^(1:H)]``."""
    out = [np.eye(params.dims[0])]
    for b in params.B:
        out.append(b @ out[-1])
    return out


def end_to_end(params: GnnParams) -> list:
    """End-to-end matrices ``Z_(l) = W_(l) Bbar^(1:l)``.

    Multiscale models return all ``H + 1`` of them, plain ones ``[Z_(H)]``.
    """
    pre = prefix_products(params)
    if params.arch.multiscale:
        return [w @ p for w, p in zip(params.W, pre)]
    return [params.W[0] @ pre[-1]]
