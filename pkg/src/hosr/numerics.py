"""Dense/sparse kernels and the seeded random stream used across the package.

Dense matrices are plain float64 ``numpy`` arrays. Sparse matrices use a small
CSR container whose multiply is delegated to ``scipy.sparse``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ConfigurationError(ValueError):
    """Shapes or settings that cannot be combined."""


def as_dense(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ConfigurationError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix with float64 values."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if len(self.indptr) != self.rows + 1:
            raise ConfigurationError("row pointer length must be rows + 1")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ConfigurationError("row pointers must start at 0 and be nondecreasing")
        nnz = int(self.indptr[-1])
        if len(self.indices) != nnz or len(self.data) != nnz:
            raise ConfigurationError("nnz must equal the last row pointer")
        if nnz and (self.indices.min() < 0 or self.indices.max() >= self.cols):
            raise ConfigurationError("column index out of range")
        row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        same_row = row_of[1:] == row_of[:-1]
        if np.any(np.diff(self.indices)[same_row] <= 0):
            raise ConfigurationError("column indices must be strictly increasing within a row")

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_coo(cls, rows: int, cols: int, r, c, v) -> "SparseMatrix":
        """Build from coordinate triples; duplicate coordinates are summed."""
        m = sp.coo_matrix(
            (np.asarray(v, dtype=np.float64), (np.asarray(r), np.asarray(c))),
            shape=(rows, cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls.from_scipy(m)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = as_dense(a)
        r, c = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], r, c, a[r, c])

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sort_indices()
        return cls(
            rows=m.shape[0],
            cols=m.shape[1],
            indptr=np.asarray(m.indptr, dtype=np.int64),
            indices=np.asarray(m.indices, dtype=np.int64),
            data=np.asarray(m.data, dtype=np.float64),
        )

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        empty = np.zeros(0, dtype=np.int64)
        return cls(rows, cols, np.zeros(rows + 1, dtype=np.int64), empty, np.zeros(0))

    def to_scipy(self) -> sp.csr_matrix:
        cached = self.__dict__.get("_scipy")
        if cached is None:
            cached = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
            object.__setattr__(self, "_scipy", cached)
        return cached

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        out[row_of, self.indices] = self.data
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T.tocsr())

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)


def spmm(L: SparseMatrix, X) -> np.ndarray:
    """Sparse-dense product ``L @ X``; cost is O(nnz(L) * X.cols)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or L.cols != X.shape[0]:
        raise ConfigurationError(
            f"spmm dimension mismatch: {L.shape} @ {np.shape(X)}"
        )
    return np.asarray(L.to_scipy() @ X)


def spmm_t(L: SparseMatrix, X) -> np.ndarray:
    """``L.T @ X`` without materialising the transpose."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or L.rows != X.shape[0]:
        raise ConfigurationError(
            f"spmm_t dimension mismatch: {L.shape}^T @ {np.shape(X)}"
        )
    return np.asarray(L.to_scipy().T @ X)


def gemm(A, B) -> np.ndarray:
    A = as_dense(A)
    B = as_dense(B)
    if A.shape[1] != B.shape[0]:
        raise ConfigurationError(f"gemm dimension mismatch: {A.shape} @ {B.shape}")
    return A @ B


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


_ELEMENTWISE = {"tanh": np.tanh, "relu": relu, "sigmoid": sigmoid}


def elementwise(kind: str, X) -> np.ndarray:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ConfigurationError(f"unknown nonlinearity {kind!r}") from None
    return fn(np.asarray(X, dtype=np.float64))


def softmax_rows(X) -> np.ndarray:
    X = as_dense(X)
    z = X - X.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class RandomStream:
    """Seeded PCG64 stream. Identical seeds give identical draws on every platform.

    Independent sub-streams for separate consumers come from :meth:`child`,
    so adding draws in one place never shifts another consumer's sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *key: int) -> "RandomStream":
        s = RandomStream.__new__(RandomStream)
        s.seed = self.seed
        s._seq = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        s.gen = np.random.Generator(np.random.PCG64(s._seq))
        return s

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)
