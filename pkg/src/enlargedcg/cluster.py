"""Deterministic virtual cluster: p simulated ranks moving plan messages.

The executor is intentionally boring.  Ranks run phase-synchronously (every
send of phase k is staged before any delivery of phase k+1 is visible),
received rows are always presented in ascending global-row order, and
reductions sum rank contributions in rank order.  Consequences we rely on
everywhere: results are bitwise identical across communication schemes and
across worker counts, and traces are exact re-statements of the executed
plan.  Time is never simulated here -- wall-clock prediction belongs to the
analytic models.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .kernels import flops_spmbv
from .partition import PartitionedMatrix, RowPartition, Topology, analyze_comm
from .schemes import DEFAULT_THRESHOLD, SCHEMES, CommPlan, plan_by_name, plan_stats

__all__ = [
    "MissingRowError",
    "PhaseTrace",
    "ReduceRecord",
    "ExecutionTrace",
    "VirtualCluster",
    "distribute",
    "collect",
    "execute_plan",
    "spmbv",
    "fused_allreduce",
    "tune_scheme",
]


class MissingRowError(RuntimeError):
    """A plan under-delivered: some rank never received a row it needs."""


@dataclass
class PhaseTrace:
    label: str
    n_messages: int
    bytes_on_node: int
    bytes_off_node: int


@dataclass
class ReduceRecord:
    floats: int
    ranks: int


def _fraction_json(value: Fraction):
    return int(value) if value.denominator == 1 else float(value)


class ExecutionTrace:
    """Exact record of everything the virtual cluster did.

    Per-rank counters let tests compare maxima against plan statistics; flop
    counters are exact rationals keyed by kernel name.
    """

    def __init__(self, p: int):
        self.p = p
        self.phases = []        # list[PhaseTrace]
        self.collectives = []   # list[ReduceRecord]
        self.flops = [{} for _ in range(p)]
        self.sent_messages = [0] * p
        self.sent_internode_messages = [0] * p
        self.sent_internode_bytes = [0] * p

    def record_flops(self, rank: int, kernel: str, count: Fraction):
        self.flops[rank][kernel] = self.flops[rank].get(kernel, Fraction(0)) + count

    def add_phase(self, label: str, messages):
        on = off = 0
        for msg in messages:
            self.sent_messages[msg.src] += 1
            if msg.on_node:
                on += msg.n_bytes
            else:
                off += msg.n_bytes
                self.sent_internode_messages[msg.src] += 1
                self.sent_internode_bytes[msg.src] += msg.n_bytes
        self.phases.append(PhaseTrace(label, len(messages), on, off))

    def add_collective(self, floats: int):
        self.collectives.append(ReduceRecord(int(floats), self.p))

    # -- cumulative totals -------------------------------------------------

    @property
    def total_messages(self) -> int:
        return sum(ph.n_messages for ph in self.phases)

    @property
    def total_bytes_on_node(self) -> int:
        return sum(ph.bytes_on_node for ph in self.phases)

    @property
    def total_bytes_off_node(self) -> int:
        return sum(ph.bytes_off_node for ph in self.phases)

    def checkpoint(self) -> tuple:
        """Cumulative counters, for per-iteration diffing by the solvers."""
        return (self.total_messages, self.total_bytes_on_node,
                self.total_bytes_off_node, len(self.collectives),
                [rec.floats for rec in self.collectives])

    def flop_totals(self) -> dict:
        out = {}
        for per_rank in self.flops:
            for kernel, count in per_rank.items():
                out[kernel] = out.get(kernel, Fraction(0)) + count
        return out

    def to_json_dict(self) -> dict:
        return {
            "phases": [
                {"label": ph.label, "msgs": ph.n_messages,
                 "bytes_on_node": ph.bytes_on_node,
                 "bytes_off_node": ph.bytes_off_node}
                for ph in self.phases
            ],
            "collectives": [{"floats": rec.floats} for rec in self.collectives],
            "flops_per_rank": [
                {kernel: _fraction_json(count) for kernel, count in sorted(per_rank.items())}
                for per_rank in self.flops
            ],
        }


class VirtualCluster:
    """Holds the topology and an optional worker pool for per-rank compute.

    Workers only ever map a pure function over ranks and collect results in
    rank order, so the worker count (ECG_THREADS) cannot change any result.
    """

    def __init__(self, topo: Topology, workers: int | None = None):
        if workers is None:
            workers = int(os.environ.get("ECG_THREADS", "1") or "1")
        self.topo = topo
        self.workers = max(1, min(workers, topo.p))
        self._pool = None

    def map_ranks(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def distribute(x: np.ndarray, part: RowPartition) -> list:
    """Slice a global (n,) or (n, t) array into per-rank copies."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return [x[part.rows_of(r)[0]:part.rows_of(r)[1]].copy() for r in range(part.p)]

def collect(slices: list) -> np.ndarray:
    return np.concatenate(slices, axis=0)


# ---------------------------------------------------------------------------
# plan execution
# ---------------------------------------------------------------------------

def execute_plan(plan: CommPlan, part: RowPartition, slices: list,
                 needed_rows: list, trace: ExecutionTrace | None = None) -> list:
    """Move the plan's messages and return each rank's receive buffer.

    slices: per-rank (n_local, t) arrays backing the owned rows.
    needed_rows: per-rank ascending global row indices to present (the
    CommPattern requirement); anything the plan failed to deliver raises
    MissingRowError.  Buffers come back as (len(needed), t) arrays in
    ascending global-row order, which is what makes every scheme produce
    bitwise-identical downstream arithmetic.
    """
    p = part.p
    staging = [dict() for _ in range(p)]
    for label, phase in zip(plan.phase_labels, plan.phases):
        outgoing = []
        for msg in phase:
            lo, hi = part.rows_of(msg.src)
            rows = np.asarray(msg.rows, dtype=np.int64)
            width = slices[msg.src].shape[1]
            buf = np.empty((len(rows), width))
            own = (rows >= lo) & (rows < hi)
            if own.any():
                buf[own] = slices[msg.src][rows[own] - lo]
            if not own.all():
                st = staging[msg.src]
                for i in np.nonzero(~own)[0]:
                    row = int(rows[i])
                    if row not in st:
                        raise MissingRowError(
                            f"rank {msg.src} cannot forward row {row}: never received")
                    buf[i] = st[row]
            outgoing.append((msg.dst, rows, buf))
        if trace is not None:
            trace.add_phase(label, phase)
        # phase barrier: deliveries become visible only after the whole phase
        for dst, rows, buf in outgoing:
            st = staging[dst]
            for i in range(len(rows)):
                st[int(rows[i])] = buf[i]

    received = []
    for r in range(p):
        rows = np.asarray(needed_rows[r], dtype=np.int64)
        width = slices[r].shape[1]
        buf = np.empty((len(rows), width))
        st = staging[r]
        for i, row in enumerate(rows):
            row = int(row)
            if row not in st:
                raise MissingRowError(f"rank {r} never received row {row}")
            buf[i] = st[row]
        received.append(buf)
    return received


def spmbv(apart: PartitionedMatrix, slices: list, plan: CommPlan,
          cluster: VirtualCluster | None = None,
          trace: ExecutionTrace | None = None) -> list:
    """Distributed A times block-vector: local on-block product, exchange
    of remote rows per the plan, then the off-block product.

    Returns per-rank (n_local, t) result slices.  Records 2*nnz_local*t
    flops per rank.
    """
    p = apart.part.p
    t = slices[0].shape[1]

    def on_product(r):
        return apart.on_blocks[r].matmul(slices[r])

    if cluster is not None:
        partial = cluster.map_ranks(on_product, range(p))
    else:
        partial = [on_product(r) for r in range(p)]

    received = execute_plan(plan, apart.part, slices, apart.remote_rows, trace)

    def off_product(r):
        if apart.off_blocks[r].nnz:
            return partial[r] + apart.off_blocks[r].matmul(received[r])
        return partial[r]

    if cluster is not None:
        result = cluster.map_ranks(off_product, range(p))
    else:
        result = [off_product(r) for r in range(p)]

    if trace is not None:
        for r in range(p):
            trace.record_flops(r, "spmbv", flops_spmbv(apart.local_nnz(r), t))
    return result


def fused_allreduce(contributions: list, trace: ExecutionTrace | None = None,
                    counted_floats: int | None = None):
    """Sum per-rank contributions (an array, or a tuple of arrays to fuse).

    Summation runs in rank order, sequentially -- the arithmetic every
    oracle in the test suite can replicate.  counted_floats overrides the
    payload size recorded in the trace; the solvers use it because the
    convergence-norm partials ride along without being charged to the
    models' reduction-volume term.
    """
    if not contributions:
        raise ValueError("reduction needs at least one contribution")
    single = isinstance(contributions[0], np.ndarray)
    parts = [(c,) if single else tuple(c) for c in contributions]
    width = len(parts[0])
    acc = [np.array(a, dtype=np.float64, copy=True) for a in parts[0]]
    for contrib in parts[1:]:
        if len(contrib) != width:
            raise ValueError("non-conformal reduction contributions")
        for a, b in zip(acc, contrib):
            if a.shape != np.shape(b):
                raise ValueError("non-conformal reduction contributions")
            a += b
    if trace is not None:
        floats = sum(a.size for a in acc) if counted_floats is None else counted_floats
        trace.add_collective(floats)
    return acc[0] if single else tuple(acc)


# ---------------------------------------------------------------------------
# scheme auto-tuning
# ---------------------------------------------------------------------------

_TUNE_ORDER = {name: i for i, name in enumerate(SCHEMES)}


def tune_scheme(a, part: RowPartition, topo: Topology, t: int,
                executor: VirtualCluster | None = None, params=None,
                threshold: int = DEFAULT_THRESHOLD, f: int | None = None):
    """Run one SpMBV per scheme, model each, return (best label, report).

    Standard is scored with the max-rate model on its per-rank inter-node
    message/byte maxima; 2-step with its block model; 3-step and
    nodal-optimal with the 3-step block model on their own statistics.
    Ties go to the earlier scheme in standard, 2-step, 3-step,
    nodal-optimal order.
    """
    import dataclasses

    from . import models

    if params is None:
        params = models.MachineParams()
    params = dataclasses.replace(params, ppn=topo.ppn)
    if f is None:
        f = params.f

    apart = PartitionedMatrix.build(a, part)
    pattern = analyze_comm(a, part, topo)
    # any deterministic, non-degenerate block: distinct values per row/column
    n = a.n_rows
    probe = (np.arange(n, dtype=np.float64)[:, None] % 17.0 + 1.0) \
        + np.arange(t, dtype=np.float64)[None, :] * 0.25
    slices = distribute(probe, part)

    entries = {}
    reference = None
    for scheme in SCHEMES:
        plan = plan_by_name(scheme, pattern, topo, t, f, threshold)
        trace = ExecutionTrace(topo.p)
        result = spmbv(apart, slices, plan, cluster=executor, trace=trace)
        gathered = collect(result)
        if reference is None:
            reference = gathered
        elif not np.array_equal(reference, gathered):
            raise AssertionError(f"scheme {scheme} changed the SpMBV result")
        stats = plan_stats(plan, topo)
        if scheme == "standard":
            seconds = models.maxrate_time(stats.n_opt, stats.s_proc, params)
        elif scheme == "two_step":
            seconds = models.model_2step(stats.unit_width(t), t, params)
        else:
            seconds = models.model_3step(stats.unit_width(t), t, params)
        entries[scheme] = {
            "stats": stats.to_json_dict(),
            "modeled_seconds": seconds,
            "trace": {"messages": trace.total_messages,
                      "bytes_on_node": trace.total_bytes_on_node,
                      "bytes_off_node": trace.total_bytes_off_node},
        }

    selected = min(entries, key=lambda s: (entries[s]["modeled_seconds"], _TUNE_ORDER[s]))
    report = {
        "selected": selected,
        "t": t,
        "p": topo.p,
        "ppn": topo.ppn,
        "threshold": threshold,
        "schemes": entries,
    }
    return selected, report
