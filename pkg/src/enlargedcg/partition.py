"""Row partitioning, node topology, and communication-requirement analysis.

A matrix is split into p contiguous row blocks (one per simulated rank) and
the ranks are packed onto nodes in order, ppn at a time.  The communication
pattern of a sparse matrix times block-vector product is then purely
structural: rank r needs every row whose index appears as a column in r's
row block but is owned by somebody else.  Nothing here depends on the block
width t -- widths only scale payload bytes, which is the planners' business.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import CsrMatrix

__all__ = [
    "Topology",
    "RowPartition",
    "build_row_partition",
    "Requirement",
    "CommPattern",
    "analyze_comm",
    "split_local_blocks",
    "PartitionedMatrix",
]


@dataclass(frozen=True)
class Topology:
    """p ranks packed onto nodes in rank order, ppn per node (last may be short)."""

    p: int
    ppn: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("need at least one rank")
        if self.ppn < 1:
            raise ValueError("need at least one rank per node")

    @property
    def n_nodes(self) -> int:
        return -(-self.p // self.ppn)

    def node_of(self, rank: int) -> int:
        return rank // self.ppn

    def local_index(self, rank: int) -> int:
        return rank % self.ppn

    def ranks_on_node(self, node: int) -> range:
        lo = node * self.ppn
        return range(lo, min(lo + self.ppn, self.p))

    def same_node(self, a: int, b: int) -> bool:
        return self.node_of(a) == self.node_of(b)


@dataclass(frozen=True)
class RowPartition:
    """Contiguous row ranges: rank r owns rows [offsets[r], offsets[r+1])."""

    offsets: np.ndarray  # int64, length p + 1

    def __post_init__(self):
        object.__setattr__(self, "offsets",
                           np.ascontiguousarray(self.offsets, dtype=np.int64))
        if len(self.offsets) < 2 or self.offsets[0] != 0:
            raise ValueError("offsets must start at 0")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")

    @property
    def p(self) -> int:
        return len(self.offsets) - 1

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    def rows_of(self, rank: int):
        return int(self.offsets[rank]), int(self.offsets[rank + 1])

    def owner_of(self, rows) -> np.ndarray:
        """Owning rank for each global row index (vectorized)."""
        rows = np.asarray(rows, dtype=np.int64)
        return np.searchsorted(self.offsets, rows, side="right") - 1


def build_row_partition(n: int, p: int) -> RowPartition:
    """Balanced contiguous split: the first n mod p ranks get the extra row.

    Every rank owns at least one row, so p > n is rejected outright.
    """
    if p < 1:
        raise ValueError("need at least one rank")
    if n < p:
        raise ValueError(f"cannot give {p} ranks at least one of {n} rows")
    base, extra = divmod(n, p)
    sizes = np.full(p, base, dtype=np.int64)
    sizes[:extra] += 1
    offsets = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return RowPartition(offsets)


# ---------------------------------------------------------------------------
# structural communication analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Requirement:
    """Rows that `dst` must fetch from `src` before its off-block multiply."""

    src: int
    dst: int
    rows: tuple          # ascending global row indices
    on_node: bool


@dataclass
class CommPattern:
    """All pairwise row requirements of one (matrix, partition, topology) triple.

    requirements are grouped per destination rank, each group sorted by
    source rank, rows ascending inside each entry -- the executor relies on
    this order to lay out receive buffers identically for every scheme.
    """

    part: RowPartition
    topo: Topology
    requirements: list  # list over ranks: list[Requirement]

    def needed_rows(self, rank: int) -> np.ndarray:
        """All remote rows rank needs, ascending (the receive-buffer order)."""
        chunks = [req.rows for req in self.requirements[rank]]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([np.asarray(c, dtype=np.int64) for c in chunks]))

    def sends_of(self, rank: int) -> list:
        out = []
        for reqs in self.requirements:
            out.extend(r for r in reqs if r.src == rank)
        return out

    def all_requirements(self):
        for reqs in self.requirements:
            yield from reqs


def analyze_comm(a: CsrMatrix, part: RowPartition, topo: Topology) -> CommPattern:
    """Derive who needs which rows from whom.  Purely structural.

    Changing ppn re-tags requirements as on/off node but never changes the
    (src, dst, rows) sets themselves.
    """
    if part.n != a.n_cols or a.n_rows != a.n_cols:
        raise ValueError("partition must cover a square matrix")
    if part.p != topo.p:
        raise ValueError("partition and topology disagree on p")
    requirements = []
    for dst in range(part.p):
        lo, hi = part.rows_of(dst)
        cols = np.unique(a.col_indices[a.row_offsets[lo]:a.row_offsets[hi]])
        remote = cols[(cols < lo) | (cols >= hi)]
        owners = part.owner_of(remote)
        entry = []
        for src in np.unique(owners):
            rows = remote[owners == src]
            entry.append(Requirement(
                src=int(src), dst=dst,
                rows=tuple(int(r) for r in rows),
                on_node=topo.same_node(int(src), dst),
            ))
        requirements.append(entry)
    return CommPattern(part=part, topo=topo, requirements=requirements)


# ---------------------------------------------------------------------------
# local matrix splitting
# ---------------------------------------------------------------------------

def split_local_blocks(a: CsrMatrix, part: RowPartition, rank: int):
    """Split rank's row block into on-block and off-block CSR pieces.

    The on-block is square over the owned rows (local column numbering);
    the off-block's columns are renumbered into the rank's ascending remote
    row list, matching the receive-buffer layout.  Returns
    (on_block, off_block, remote_rows).
    """
    lo, hi = part.rows_of(rank)
    n_local = hi - lo
    offs = a.row_offsets[lo:hi + 1] - a.row_offsets[lo]
    cols = a.col_indices[a.row_offsets[lo]:a.row_offsets[hi]]
    vals = a.values[a.row_offsets[lo]:a.row_offsets[hi]]
    is_on = (cols >= lo) & (cols < hi)

    # per-row counts of on/off entries give the two offset arrays directly
    row_id = np.repeat(np.arange(n_local, dtype=np.int64), np.diff(offs))
    on_counts = np.bincount(row_id[is_on], minlength=n_local) if len(cols) else np.zeros(n_local, dtype=np.int64)
    off_counts = np.bincount(row_id[~is_on], minlength=n_local) if len(cols) else np.zeros(n_local, dtype=np.int64)
    on_offsets = np.zeros(n_local + 1, dtype=np.int64)
    np.cumsum(on_counts, out=on_offsets[1:])
    off_offsets = np.zeros(n_local + 1, dtype=np.int64)
    np.cumsum(off_counts, out=off_offsets[1:])

    remote_rows = np.unique(cols[~is_on])
    on_block = CsrMatrix(n_local, n_local, on_offsets, cols[is_on] - lo, vals[is_on])
    off_cols = np.searchsorted(remote_rows, cols[~is_on])
    off_block = CsrMatrix(n_local, len(remote_rows), off_offsets, off_cols, vals[~is_on])
    return on_block, off_block, remote_rows


@dataclass
class PartitionedMatrix:
    """A CSR matrix pre-split for every rank of a partition."""

    n: int
    nnz: int
    part: RowPartition
    on_blocks: list
    off_blocks: list
    remote_rows: list

    @classmethod
    def build(cls, a: CsrMatrix, part: RowPartition) -> "PartitionedMatrix":
        if part.n != a.n_rows:
            raise ValueError(
                f"partition covers {part.n} rows, matrix has {a.n_rows}")
        on, off, rem = [], [], []
        for r in range(part.p):
            b_on, b_off, rows = split_local_blocks(a, part, r)
            on.append(b_on)
            off.append(b_off)
            rem.append(rows)
        return cls(n=a.n_rows, nnz=a.nnz, part=part,
                   on_blocks=on, off_blocks=off, remote_rows=rem)

    def local_nnz(self, rank: int) -> int:
        return self.on_blocks[rank].nnz + self.off_blocks[rank].nnz
