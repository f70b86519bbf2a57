"""Simple undirected graphs and the GCN/GIN aggregation operators."""

from __future__ import annotations

import enum
import hashlib
import logging
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import as_matrix

logger = logging.getLogger(__name__)


class AggregationKind(str, enum.Enum):
    GIN = "gin"
    GCN = "gcn"


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    ``edges`` holds each unordered pair once as ``(u, v)`` with ``u < v``.
    Use :meth:`from_edge_list` for raw input that may contain duplicates,
    reversed pairs or self-loops.
    """

    n: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        seen = set()
        canon = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")
            if u == v:
                raise ValueError(f"self-loop ({u}, {u}) not allowed")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @classmethod
    def from_edge_list(cls, n: int, pairs) -> "Graph":
        """Build a graph from possibly directed/duplicated pairs.

        Reversed duplicates are merged; self-loops are dropped. Both are
        logged as warnings since the aggregation adds its own self-loops.
        """
        seen = set()
        loops = dupes = 0
        for u, v in pairs:
            u, v = int(u), int(v)
            if u == v:
                loops += 1
                continue
            key = (min(u, v), max(u, v))
            if key in seen:
                dupes += 1
                continue
            seen.add(key)
        if dupes:
            logger.warning("symmetrized edge list: merged %d duplicate/reversed pairs", dupes)
        if loops:
            logger.warning("dropped %d self-loops from edge list", loops)
        return cls(n, tuple(seen))

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for u, v in self.edges:
            A[u, v] = 1.0
            A[v, u] = 1.0
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)


def train_index(indices, n: int) -> np.ndarray:
    """Validate a training index set: sorted, unique, within ``[0, n)``."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("training index set is empty")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError("training indices must be strictly increasing")
    if idx[0] < 0 or idx[-1] >= n:
        raise ValueError(f"training indices out of range for n={n}")
    return idx


def aggregation_matrix(g: Graph, kind) -> np.ndarray:
    """GIN: ``A + I``. GCN: ``D^-1/2 (A + I) D^-1/2`` with D the degrees of A + I.

    Isolated nodes have degree 1 in ``A + I``, so GCN never divides by zero.
    """
    kind = AggregationKind(kind)
    A_hat = g.adjacency() + np.eye(g.n)
    if kind is AggregationKind.GIN:
        return A_hat
    d = A_hat.sum(axis=1)
    r = 1.0 / np.sqrt(d)
    return r[:, None] * A_hat * r[None, :]


class _PowerCache:
    """Memoized S^l, keyed by the bytes of S. Thread-safe."""

    def __init__(self, max_entries=16):
        self._lock = threading.Lock()
        self._store: dict[bytes, list[np.ndarray]] = {}
        self._max = max_entries

    def powers(self, S: np.ndarray, l: int) -> list[np.ndarray]:
        key = hashlib.sha1(S.tobytes() + repr(S.shape).encode()).digest()
        with self._lock:
            pw = self._store.get(key)
            if pw is None:
                if len(self._store) >= self._max:
                    self._store.pop(next(iter(self._store)))
                pw = [np.eye(S.shape[0])]
                self._store[key] = pw
            while len(pw) <= l:
                pw.append(pw[-1] @ S)
            return pw[: l + 1]


_cache = _PowerCache()


def matrix_power(S, l: int) -> np.ndarray:
    """``S**l`` by repeated multiplication (memoized)."""
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"S must be square, got {S.shape}")
    if l < 0:
        raise ValueError("power must be nonnegative")
    return _cache.powers(S, l)[l]


def _check_xs(X, S):
    X = as_matrix(X, "X")
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1] or X.shape[1] != S.shape[0]:
        raise DimensionError(f"X {X.shape} and S {S.shape} do not conform")
    return X, S


def propagated_features(X, S, l: int, idx) -> np.ndarray:
    """``X S^l`` restricted to the columns in ``idx``."""
    X, S = _check_xs(X, S)
    idx = np.asarray(idx, dtype=np.int64)
    if l == 0:
        return X[:, idx]
    return (X @ matrix_power(S, l))[:, idx]


def stacked_features(X, S, H: int, idx) -> np.ndarray:
    """Vertical stack ``[X; XS; ...; XS^H]`` restricted to ``idx``."""
    if H < 0:
        raise ValueError("H must be nonnegative")
    return np.vstack([propagated_features(X, S, l, idx) for l in range(H + 1)])
