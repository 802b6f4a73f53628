"""Core dense/sparse building blocks for the block Krylov solvers.

Everything here is deliberately small and deterministic: the distributed
executor calls these kernels once per simulated rank, so they must produce
bitwise-identical results for identical inputs no matter how the ranks are
scheduled.  The t x t "small square" matrices (Gram matrices, Cholesky
factors) are plain float64 numpy arrays; block vectors get a thin validating
wrapper because they carry the n-rows-by-t column-major layout contract
through the whole package.

Flop accounting uses exact rational arithmetic (fractions.Fraction) because
the Cholesky and triangular-solve costs are t^3/6 and t^2/2, which are not
integers for most t, and the solver-level cross-check demands exact equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse

__all__ = [
    "BreakdownError",
    "CsrMatrix",
    "BlockVector",
    "cholesky",
    "tri_solve_multi_rhs",
    "gram_product",
    "block_add",
    "block_axpy",
    "flops_spmbv",
    "flops_gram",
    "flops_cholesky",
    "flops_tri_solve",
    "flops_block_update",
]

PIVOT_TOL_FACTOR = 1e-13


class BreakdownError(RuntimeError):
    """Raised when a Gram matrix loses numerical positive definiteness.

    For enlarged CG this happens when the search block becomes rank
    deficient; the solver catches it and reports the best iterate so far.
    """


# ---------------------------------------------------------------------------
# sparse matrices
# ---------------------------------------------------------------------------

@dataclass
class CsrMatrix:
    """Square-or-rectangular CSR matrix with int64 indices, float64 values.

    Column indices must be strictly increasing inside each row; builders
    that start from unsorted/duplicated coordinate data go through
    :meth:`from_coo`, which sorts and sums duplicates.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative matrix dimension")
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise ValueError(
                f"row_offsets has shape {self.row_offsets.shape}, "
                f"expected ({self.n_rows + 1},)"
            )
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.col_indices):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(self.col_indices) != len(self.values):
            raise ValueError("col_indices and values length mismatch")
        if len(self.col_indices):
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing within each row; diffs that straddle a row
            # boundary are exempt (boundaries at 0/nnz have no straddling diff)
            inside_row = np.ones(len(self.col_indices) - 1, dtype=bool)
            boundaries = self.row_offsets[1:-1]
            boundaries = boundaries[(boundaries > 0)
                                    & (boundaries < len(self.col_indices))]
            inside_row[boundaries - 1] = False
            if np.any((np.diff(self.col_indices) <= 0) & inside_row):
                raise ValueError("column indices must be strictly increasing per row")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals) -> "CsrMatrix":
        """Build from coordinate triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("coordinate arrays must have equal length")
        if len(rows):
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise ValueError("column index out of range")
        # lexicographic sort by (row, col), then fold duplicates
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            new_group = np.empty(len(rows), dtype=bool)
            new_group[0] = True
            new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            group_id = np.cumsum(new_group) - 1
            rows = rows[new_group]
            cols = cols[new_group]
            vals = np.bincount(group_id, weights=vals)
        counts = np.bincount(rows, minlength=n_rows) if len(rows) else np.zeros(n_rows, dtype=np.int64)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], rows, cols, a[rows, cols])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for i in range(self.n_rows):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            out[i, self.col_indices[lo:hi]] = self.values[lo:hi]
        return out

    def _scipy(self) -> scipy.sparse.csr_matrix:
        # zero-copy view onto our buffers; scipy only does the multiply
        m = scipy.sparse.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.n_rows, self.n_cols),
        )
        m.has_sorted_indices = True
        return m

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """Sparse times dense block; returns a C-array of shape (n_rows, t)."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim == 1:
            return self._scipy().dot(dense)
        return np.ascontiguousarray(self._scipy().dot(dense))

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def transpose(self) -> "CsrMatrix":
        t = self._scipy().transpose().tocsr()
        t.sort_indices()
        return CsrMatrix(self.n_cols, self.n_rows, t.indptr.astype(np.int64),
                         t.indices.astype(np.int64), t.data.astype(np.float64))

    def is_symmetric(self, tol=0.0) -> bool:
        t = self.transpose()
        if not np.array_equal(t.row_offsets, self.row_offsets):
            return False
        if not np.array_equal(t.col_indices, self.col_indices):
            return False
        return bool(np.max(np.abs(t.values - self.values), initial=0.0) <= tol)


# ---------------------------------------------------------------------------
# block vectors
# ---------------------------------------------------------------------------

class BlockVector:
    """An n-by-t block of column vectors, stored column-major (Fortran order).

    The column-major layout means each of the t vectors is contiguous, which
    is how the communication planners reason about payload bytes (t
    consecutive doubles per matrix row).
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asfortranarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("block vector must be 2-D (n_rows, t)")
        if arr.shape[1] < 1:
            raise ValueError("block vector needs at least one column")
        self.data = arr

    @classmethod
    def zeros(cls, n_rows: int, t: int) -> "BlockVector":
        return cls(np.zeros((n_rows, t), order="F"))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]

    def column_sum(self) -> np.ndarray:
        """Sum of the t columns: the vector the enlarged method is tracking."""
        return self.data.sum(axis=1)

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(order="F"))

    def __repr__(self):
        return f"BlockVector(n_rows={self.n_rows}, t={self.t})"


def _as_block(x) -> np.ndarray:
    if isinstance(x, BlockVector):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected an (n_rows, t) block")
    return arr


# ---------------------------------------------------------------------------
# small dense kernels (hand-rolled: these are the method's inner machinery
# and the executor needs full control over their arithmetic order)
# ---------------------------------------------------------------------------

def cholesky(s: np.ndarray, pivot_tol_factor: float = PIVOT_TOL_FACTOR) -> np.ndarray:
    """Lower-triangular Cholesky factor C of a small SPD matrix, C @ C.T == s.

    Raises BreakdownError as soon as a pivot falls at or below
    pivot_tol_factor * max(diag(s)).  No pivoting: the caller wants to detect
    rank deficiency, not to work around it.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square matrix")
    t = s.shape[0]
    if t == 0:
        return np.zeros((0, 0))
    max_diag = float(np.max(np.diag(s)))
    tol = pivot_tol_factor * max_diag
    if max_diag <= 0.0:
        raise BreakdownError("Gram matrix has non-positive diagonal")
    c = np.zeros((t, t))
    for i in range(t):
        pivot = s[i, i] - np.dot(c[i, :i], c[i, :i])
        if pivot <= tol:
            raise BreakdownError(
                f"Cholesky pivot {pivot:.3e} at index {i} below tolerance {tol:.3e}"
            )
        c[i, i] = np.sqrt(pivot)
        if i + 1 < t:
            c[i + 1:, i] = (s[i + 1:, i] - c[i + 1:, :i] @ c[i, :i]) / c[i, i]
    return c


def tri_solve_multi_rhs(b, c: np.ndarray) -> np.ndarray:
    """Solve X @ C.T = B for X, with C lower triangular and B of shape (n, t).

    This is the normalization step P = Z (C.T)^{-1}: column i of X depends
    only on columns < i, so one forward sweep over the t columns does it,
    vectorized across all n rows.
    """
    b = _as_block(b)
    c = np.asarray(c, dtype=np.float64)
    t = c.shape[0]
    if b.shape[1] != t:
        raise ValueError(f"rhs has {b.shape[1]} columns, factor is {t}x{t}")
    x = np.zeros_like(b, order="F")
    for i in range(t):
        if i:
            x[:, i] = (b[:, i] - x[:, :i] @ c[i, :i]) / c[i, i]
        else:
            x[:, 0] = b[:, 0] / c[0, 0]
    return x


def gram_product(u, v) -> np.ndarray:
    """U.T @ V for two (n, t) blocks; the local half of a fused reduction."""
    u = _as_block(u)
    v = _as_block(v)
    if u.shape[0] != v.shape[0]:
        raise ValueError("row count mismatch")
    return u.T @ v


def block_add(y, x) -> np.ndarray:
    y = _as_block(y)
    x = _as_block(x)
    return y + x


def block_axpy(y, x, coeff: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """y + sign * (x @ coeff) with coeff t-by-t; the X/R update workhorse."""
    y = _as_block(y)
    x = _as_block(x)
    coeff = np.asarray(coeff, dtype=np.float64)
    if sign == 1.0:
        return y + x @ coeff
    return y - x @ coeff


# ---------------------------------------------------------------------------
# flop bookkeeping (exact, per kernel application)
# ---------------------------------------------------------------------------

def flops_spmbv(nnz_local: int, t: int) -> Fraction:
    """One multiply-add per stored entry per column."""
    return Fraction(2 * nnz_local * t)


def flops_gram(n_rows: int, t: int) -> Fraction:
    return Fraction(2 * n_rows * t * t)


def flops_cholesky(t: int) -> Fraction:
    return Fraction(t ** 3, 6)


def flops_tri_solve(t: int) -> Fraction:
    # one t x t triangular solve; the n-fold vectorization across rows is a
    # deliberate omission mirrored by the per-iteration cost model
    return Fraction(t * t, 2)


def flops_block_update(n_rows: int, t: int) -> Fraction:
    # add or axpy over an (n, t) block; coefficient application is counted
    # separately (it never shows up in the per-iteration budget)
    return Fraction(2 * n_rows * t)
