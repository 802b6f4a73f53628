"""Test-problem generators and Matrix Market I/O.

Generators build the finite-difference Laplacians used throughout the
benchmarks (1D three-point, 2D five-point, 2D nine-point), always with
rhs = all ones.  The Matrix Market reader is hand-rolled so that malformed
files fail with the offending line number and symmetric storage expansion
is under our control; duplicate coordinate entries are summed.
"""

from __future__ import annotations

import numpy as np

from .kernels import CsrMatrix

__all__ = [
    "laplace_1d",
    "laplace_2d",
    "generate_problem",
    "MatrixMarketError",
    "load_matrix_market",
    "save_matrix_market",
    "peek_matrix_market",
]


def laplace_1d(n: int):
    """Tridiagonal [-1, 2, -1] operator with rhs of ones."""
    if n < 1:
        raise ValueError("need at least one grid point")
    rows, cols, vals = [], [], []
    for i in range(n):
        if i > 0:
            rows.append(i); cols.append(i - 1); vals.append(-1.0)
        rows.append(i); cols.append(i); vals.append(2.0)
        if i + 1 < n:
            rows.append(i); cols.append(i + 1); vals.append(-1.0)
    a = CsrMatrix.from_coo(n, n, rows, cols, vals)
    return a, np.ones(n)


def laplace_2d(nx: int, ny: int | None = None, stencil: int = 5):
    """2D grid Laplacian on nx-by-ny points, 5-point or 9-point stencil.

    5-point: 4 on the diagonal, -1 to each axis neighbour.
    9-point: 8 on the diagonal, -1 to all eight neighbours (strict diagonal
    dominance on boundary rows keeps it positive definite).
    """
    if ny is None:
        ny = nx
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be positive")
    if stencil not in (5, 9):
        raise ValueError("stencil must be 5 or 9")
    n = nx * ny
    rows, cols, vals = [], [], []
    if stencil == 5:
        offsets = [(-1, 0), (0, -1), (0, 1), (1, 0)]
        diag = 4.0
    else:
        offsets = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
                   if (di, dj) != (0, 0)]
        diag = 8.0
    for i in range(nx):
        for j in range(ny):
            row = i * ny + j
            rows.append(row); cols.append(row); vals.append(diag)
            for di, dj in offsets:
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    rows.append(row); cols.append(ii * ny + jj); vals.append(-1.0)
    a = CsrMatrix.from_coo(n, n, rows, cols, vals)
    return a, np.ones(n)


def generate_problem(spec: str):
    """Build (matrix, rhs) from a compact spec string.

    Formats: "laplace1d:N", "laplace2d:NXxNY" (or ":N" for square),
    "laplace2d9:NXxNY" for the nine-point stencil.
    """
    name, _, dims = spec.partition(":")
    name = name.strip().lower()
    if not dims:
        raise ValueError(f"problem spec {spec!r} is missing dimensions")
    try:
        sizes = [int(d) for d in dims.lower().split("x")]
    except ValueError:
        raise ValueError(f"bad dimensions in problem spec {spec!r}") from None
    if name == "laplace1d":
        if len(sizes) != 1:
            raise ValueError("laplace1d takes a single dimension")
        return laplace_1d(sizes[0])
    if name in ("laplace2d", "laplace2d9"):
        if len(sizes) == 1:
            sizes = sizes * 2
        if len(sizes) != 2:
            raise ValueError("laplace2d takes NXxNY dimensions")
        return laplace_2d(sizes[0], sizes[1], stencil=9 if name.endswith("9") else 5)
    raise ValueError(f"unknown problem generator {name!r}")


# ---------------------------------------------------------------------------
# Matrix Market (coordinate, real)
# ---------------------------------------------------------------------------

class MatrixMarketError(ValueError):
    pass


def _header_fields(path, line):
    parts = line.strip().split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket":
        raise MatrixMarketError(f"{path}:1: not a Matrix Market header: {line.strip()!r}")
    banner, obj, fmt, field, symmetry = parts
    if obj.lower() != "matrix" or fmt.lower() != "coordinate":
        raise MatrixMarketError(f"{path}:1: only coordinate matrices are supported")
    if field.lower() not in ("real", "integer"):
        raise MatrixMarketError(f"{path}:1: only real-valued matrices are supported")
    if symmetry.lower() not in ("general", "symmetric"):
        raise MatrixMarketError(
            f"{path}:1: only general or symmetric storage is supported")
    return field.lower(), symmetry.lower()


def peek_matrix_market(path) -> dict:
    """Header and size line only: dims, declared entry count, symmetry."""
    with open(path) as fh:
        _, symmetry = _header_fields(path, fh.readline())
        lineno = 1
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise MatrixMarketError(f"{path}:{lineno}: malformed size line {line!r}")
            try:
                n_rows, n_cols, n_entries = (int(x) for x in parts)
            except ValueError:
                raise MatrixMarketError(
                    f"{path}:{lineno}: non-integer size line {line!r}") from None
            return {"n_rows": n_rows, "n_cols": n_cols,
                    "entries": n_entries, "symmetry": symmetry}
    raise MatrixMarketError(f"{path}: missing size line")


def load_matrix_market(path) -> CsrMatrix:
    """Read a coordinate-format real matrix; symmetric storage is expanded.

    Errors carry the 1-based line number.  Square matrices only (the solvers
    have no use for rectangular ones).  Duplicate entries are summed.
    """
    rows, cols, vals = [], [], []
    n_rows = n_cols = n_entries = -1
    seen_entries = 0
    with open(path) as fh:
        _, symmetry = _header_fields(path, fh.readline())
        lineno = 1
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if n_entries < 0:
                if len(parts) != 3:
                    raise MatrixMarketError(
                        f"{path}:{lineno}: malformed size line {line!r}")
                try:
                    n_rows, n_cols, n_entries = (int(x) for x in parts)
                except ValueError:
                    raise MatrixMarketError(
                        f"{path}:{lineno}: non-integer size line {line!r}") from None
                if n_rows != n_cols:
                    raise MatrixMarketError(
                        f"{path}:{lineno}: non-square matrix "
                        f"({n_rows}x{n_cols}) rejected")
                continue
            if len(parts) != 3:
                raise MatrixMarketError(
                    f"{path}:{lineno}: expected 'row col value', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
                v = float(parts[2])
            except ValueError:
                raise MatrixMarketError(
                    f"{path}:{lineno}: malformed entry {line!r}") from None
            if not (1 <= i <= n_rows and 1 <= j <= n_cols):
                raise MatrixMarketError(
                    f"{path}:{lineno}: index ({i}, {j}) outside {n_rows}x{n_cols}")
            seen_entries += 1
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
            if symmetry == "symmetric" and i != j:
                rows.append(j - 1)
                cols.append(i - 1)
                vals.append(v)
    if n_entries < 0:
        raise MatrixMarketError(f"{path}: missing size line")
    if seen_entries != n_entries:
        raise MatrixMarketError(
            f"{path}: header declares {n_entries} entries, file has {seen_entries}")
    return CsrMatrix.from_coo(n_rows, n_cols, rows, cols, vals)


def save_matrix_market(path, a: CsrMatrix):
    """Write in coordinate/real/general form, full storage, 1-based indices."""
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.n_rows} {a.n_cols} {a.nnz}\n")
        for i in range(a.n_rows):
            lo, hi = a.row_offsets[i], a.row_offsets[i + 1]
            for k in range(lo, hi):
                fh.write(f"{i + 1} {a.col_indices[k] + 1} {float(a.values[k])!r}\n")
