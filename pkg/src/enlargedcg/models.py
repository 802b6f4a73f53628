"""Analytic time models for the communication schemes and the solver iteration.

Pure closed-form evaluators over message/byte statistics.  None of these
touch the executor: prediction and measurement stay separate, and every
function here is deterministic arithmetic over its arguments.

Byte-statistic convention: the per-scheme block models take width-1 byte
statistics (see CommStats.unit_width) and apply the block width t themselves,
mirroring how the formulas place t next to each bandwidth term.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

__all__ = [
    "MachineParams",
    "ModelPrediction",
    "ceil_log2",
    "postal_time",
    "maxrate_time",
    "model_2step",
    "model_3step",
    "collective_time",
    "computation_time",
    "ecg_iteration_model",
]


@dataclass(frozen=True)
class MachineParams:
    """Machine constants for the models.

    Defaults are documented placeholders in the right ballpark for a
    multicore cluster; nothing in the test suite depends on their values.
    rate_* are bytes/second, latencies are seconds, gamma is seconds/flop.
    """

    alpha: float = 1e-6            # inter-node latency
    alpha_local: float = 3e-7      # intra-node latency
    rate_injection: float = 2e9    # NIC injection bandwidth (R_N)
    rate_process: float = 1e9      # per-process network bandwidth (R_b)
    rate_local: float = 5e9        # on-node bandwidth (R_bl)
    gamma: float = 1e-10           # seconds per flop
    f: int = 8                     # bytes per float
    ppn: int = 16

    def __post_init__(self):
        for name in ("alpha", "alpha_local", "rate_injection", "rate_process",
                     "rate_local", "gamma", "f", "ppn"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.alpha < self.alpha_local:
            raise ValueError("inter-node latency cannot beat intra-node latency")

    def replace(self, **kw) -> "MachineParams":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path) -> "MachineParams":
        """Flat key=value text file; '#' starts a comment; unknown keys rejected."""
        fields = {fld.name for fld in dataclasses.fields(cls)}
        kw = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
                kw[key] = int(value) if key in ("f", "ppn") else float(value)
        return cls(**kw)


@dataclass(frozen=True)
class ModelPrediction:
    point_to_point: float
    collective: float
    computation: float
    total: float
    dominant_term: str

    def to_json_dict(self) -> dict:
        return {
            "point_to_point": self.point_to_point,
            "collective": self.collective,
            "computation": self.computation,
            "total": self.total,
            "dominant_term": self.dominant_term,
        }


def ceil_log2(p: int) -> int:
    """Smallest k with 2**k >= p; reduction-tree depth for p ranks."""
    if p < 1:
        raise ValueError("p must be positive")
    return (p - 1).bit_length()


# ---------------------------------------------------------------------------
# point-to-point models
# ---------------------------------------------------------------------------

def postal_time(m, s, params: MachineParams, local: bool = False) -> float:
    """latency * m + s / rate; local=True uses the on-node constants."""
    if m < 0 or s < 0:
        raise ValueError("counts must be non-negative")
    if local:
        return params.alpha_local * m + s / params.rate_local
    return params.alpha * m + s / params.rate_process


def maxrate_time(m, s, params: MachineParams) -> float:
    """Postal model with the NIC injection limit: the ppn processes of a node
    share rate_injection, so a node-saturating send pattern pays ppn*s/R_N."""
    if m < 0 or s < 0:
        raise ValueError("counts must be non-negative")
    return params.alpha * m + max(params.ppn * s / params.rate_injection,
                                  s / params.rate_process)


def model_2step(stats, t: int, params: MachineParams) -> float:
    """Block 2-step time from width-1 statistics.

    alpha*m_proc_to_node + max(t*s_node/R_N, t*s_proc/R_b)
    + alpha_local*(ppn-1) + t*s_proc/R_bl
    """
    return (params.alpha * stats.m_proc_to_node
            + max(t * stats.s_node / params.rate_injection,
                  t * stats.s_proc / params.rate_process)
            + params.alpha_local * (params.ppn - 1)
            + t * stats.s_proc / params.rate_local)


def model_3step(stats, t: int, params: MachineParams) -> float:
    """Block 3-step time from width-1 statistics (also used for nodal-optimal).

    alpha*(m_node_to_node/ppn) + max(t*s_node/R_N, t*s_proc/R_b)
    + 2*(alpha_local*(ppn-1) + t*s_node_to_node/R_bl)
    """
    return (params.alpha * stats.m_node_to_node / params.ppn
            + max(t * stats.s_node / params.rate_injection,
                  t * stats.s_proc / params.rate_process)
            + 2.0 * (params.alpha_local * (params.ppn - 1)
                     + t * stats.s_node_to_node / params.rate_local))


# ---------------------------------------------------------------------------
# solver-iteration model
# ---------------------------------------------------------------------------

def collective_time(t: int, p: int, params: MachineParams) -> float:
    """Two reduction-tree collectives moving 4*t*t floats total per iteration."""
    return 2.0 * params.alpha * ceil_log2(p) + params.f * 4.0 * t * t / params.rate_process


def computation_time(t: int, n: int, nnz: int, p: int, params: MachineParams) -> float:
    """Per-iteration flop time: gamma * ((2+2t)*nnz/p + (4t+4t^2)*n/p + t^2/2 + t^3/6)."""
    nnz_p = nnz / p
    n_p = n / p
    return params.gamma * ((2.0 + 2.0 * t) * nnz_p
                           + (4.0 * t + 4.0 * t * t) * n_p
                           + 0.5 * t * t
                           + t ** 3 / 6.0)


def ecg_iteration_model(stats, t: int, n: int, nnz: int, p: int,
                        params: MachineParams, variant: str = "maxrate") -> ModelPrediction:
    """One ECG iteration: point-to-point (postal or max-rate flavour over the
    standard-scheme statistics m and s_proc at width 1), the two collectives,
    and the computation term.
    """
    m = stats.m
    s = stats.s_proc  # width-1 bytes; the block width multiplies in here
    if variant == "postal":
        p2p = params.alpha * m + s * t / params.rate_process
    elif variant == "maxrate":
        p2p = params.alpha * m + max(params.ppn * s * t / params.rate_injection,
                                     s * t / params.rate_process)
    else:
        raise ValueError(f"unknown variant {variant!r} (postal or maxrate)")
    coll = collective_time(t, p, params)
    comp = computation_time(t, n, nnz, p, params)
    total = p2p + coll + comp
    parts = {"point_to_point": p2p, "collective": coll, "computation": comp}
    dominant = max(parts, key=lambda k: (parts[k], k))
    return ModelPrediction(point_to_point=p2p, collective=coll,
                           computation=comp, total=total, dominant_term=dominant)
