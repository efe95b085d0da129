"""Dense/sparse arithmetic, activations, a counter-based RNG and a gradient oracle.

Dense matrices are plain ``float64`` numpy arrays. Adjacency matrices are held
in :class:`SparseAdj`, a sorted coordinate list with a row pointer built on
demand.
"""

from __future__ import annotations

from functools import cached_property
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "SparseAdj",
    "Rng",
    "as_dense",
    "normalize_adjacency",
    "row_sums",
    "spmm",
    "segment_sum",
    "finite_diff_grad",
    "relu",
    "relu_grad",
    "sigmoid",
    "rel_error",
]


def as_dense(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class SparseAdj:
    """Sparse n x n matrix stored as coordinates sorted by (row, col).

    By default the matrix must be symmetric with non-negative finite weights,
    which is what every adjacency in this package is. ``symmetric=False`` is
    used for derived operators such as partition-scaled propagation matrices.
    """

    def __init__(self, n: int, rows, cols, vals, *, symmetric: bool = True):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and vals must have equal length")
        n = int(n)
        if n < 0:
            raise ValueError("node count must be non-negative")
        if rows.size:
            if rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n:
                raise ValueError("entry index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("adjacency weights must be finite")
        if np.any(vals < 0):
            raise ValueError("adjacency weights must be non-negative")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if np.any(dup):
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry ({rows[k]}, {cols[k]})")
        self.n = n
        self.rows = rows
        self.cols = cols
        self.vals = vals
        self.symmetric = symmetric
        for arr in (rows, cols, vals):
            arr.flags.writeable = False
        if symmetric and not self._is_symmetric():
            raise ValueError("adjacency is not symmetric")

    @classmethod
    def from_entries(cls, n: int, entries: Iterable[tuple[int, int, float]], **kw) -> "SparseAdj":
        entries = list(entries)
        if not entries:
            return cls(n, [], [], [], **kw)
        r, c, w = zip(*entries)
        return cls(n, r, c, w, **kw)

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "SparseAdj":
        """Symmetric matrix from undirected ``edges`` (pairs, i != j, each listed once)."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("from_edges does not accept self-loops")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        return cls(n, rows, cols, np.concatenate([weights, weights]))

    @classmethod
    def from_dense(cls, m, *, symmetric: bool = True) -> "SparseAdj":
        m = np.asarray(m, dtype=np.float64)
        r, c = np.nonzero(m)
        return cls(m.shape[0], r, c, m[r, c], symmetric=symmetric)

    def _is_symmetric(self) -> bool:
        if self.rows.size == 0:
            return True
        order = np.lexsort((self.rows, self.cols))
        return bool(
            np.array_equal(self.rows, self.cols[order])
            and np.array_equal(self.cols, self.rows[order])
            and np.array_equal(self.vals, self.vals[order])
        )

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @cached_property
    def indptr(self) -> np.ndarray:
        """Compressed row index: entries of row i live in ``indptr[i]:indptr[i+1]``."""
        counts = np.bincount(self.rows, minlength=self.n)
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        return ptr

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.vals)]

    def neighbors(self, i: int) -> np.ndarray:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.cols[lo:hi]

    def edge_list(self) -> np.ndarray:
        """Undirected edges (i < j) as an (m, 2) array in sorted order."""
        keep = self.rows < self.cols
        return np.stack([self.rows[keep], self.cols[keep]], axis=1)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = self.vals
        return out

    def __repr__(self) -> str:
        return f"SparseAdj(n={self.n}, nnz={self.nnz})"


def normalize_adjacency(a: SparseAdj) -> SparseAdj:
    """Return D^-1/2 (A + I) D^-1/2, the renormalized adjacency with self-loops."""
    n = a.n
    diag = np.arange(n)
    off = a.rows != a.cols
    self_w = np.ones(n)
    on = ~off
    np.add.at(self_w, a.rows[on], a.vals[on])
    rows = np.concatenate([a.rows[off], diag])
    cols = np.concatenate([a.cols[off], diag])
    vals = np.concatenate([a.vals[off], self_w])
    deg = np.bincount(rows, weights=vals, minlength=n)
    # d_i * d_j is commutative, so mirrored entries stay bit-identical
    vals = vals / np.sqrt(deg[rows] * deg[cols])
    return SparseAdj(n, rows, cols, vals, symmetric=a.symmetric)


def row_sums(a: SparseAdj) -> np.ndarray:
    """Vector of sum_j A[i, j]."""
    return np.bincount(a.rows, weights=a.vals, minlength=a.n)


def segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Sum consecutive row blocks of ``values`` delimited by ``indptr``.

    Empty segments produce zero rows. Summation order inside a segment is the
    storage order, so results do not depend on any threading.
    """
    n = indptr.size - 1
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    counts = np.diff(indptr)
    nonempty = np.flatnonzero(counts > 0)
    if nonempty.size:
        out[nonempty] = np.add.reduceat(values, indptr[nonempty], axis=0)
    return out


def spmm(a: SparseAdj, h) -> np.ndarray:
    """Sparse-dense product A @ H."""
    h = as_dense(h, "h")
    if h.shape[0] != a.n:
        raise ValueError(f"dimension mismatch: adjacency is {a.n}x{a.n}, h has {h.shape[0]} rows")
    contrib = a.vals[:, None] * h[a.cols]
    return segment_sum(contrib, a.indptr)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x))
        flat[k] = orig - eps
        fm = float(f(x))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value when probing coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * eps)
    return grad


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def rel_error(a, b, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||), zero when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    if scale < floor:
        return float(diff)
    return float(diff / scale)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class Rng:
    """SplitMix64 generator.

    Output k is a pure function of (seed, k), so streams are reproducible on
    any platform and draws can be generated in vectorized blocks.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
        self._counter += n
        z = np.uint64(self.seed) + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def random(self, size=None) -> np.ndarray:
        """Uniform doubles in [0, 1) built from the top 53 bits."""
        shape = () if size is None else size
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return u.reshape(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size=None) -> np.ndarray:
        shape = () if size is None else size
        n = int(np.prod(shape))
        u1 = 1.0 - self.random(n)  # (0, 1]
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in [low, high); modulo bias is negligible for small ranges."""
        shape = () if size is None else size
        n = int(np.prod(shape))
        span = np.uint64(high - low)
        return (self.next_u64(n) % span).astype(np.int64).reshape(shape) + low

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def glorot(self, fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(-limit, limit, (fan_in, fan_out))
