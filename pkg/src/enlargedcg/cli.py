"""Benchmark and solver command line.

Subcommands: generate (write a test matrix), solve (CG/ECG run with counts
and modeled times), bench-spmbv (one sparse block product per communication
scheme), model (per-iteration time predictions across block widths), tune
(scheme selection report).  Reports are JSON (default) or CSV and are
byte-for-byte reproducible for a fixed configuration; the ECG_THREADS
environment variable changes only how many workers the executor uses, never
any reported number.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass

import numpy as np

from .cluster import VirtualCluster, collect, distribute, spmbv, tune_scheme
from .cluster import ExecutionTrace
from .models import MachineParams, ecg_iteration_model, maxrate_time, model_2step, model_3step
from .partition import PartitionedMatrix, Topology, analyze_comm, build_row_partition
from .problems import generate_problem, load_matrix_market, save_matrix_market
from .schemes import DEFAULT_THRESHOLD, SCHEMES, plan_by_name, plan_stats
from .solvers import cg_solve, ecg_solve, iteration_flops

SCHEME_ALIASES = {
    "standard": "standard",
    "2step": "two_step",
    "3step": "three_step",
    "optimal": "nodal_optimal",
}
SCHEME_CHOICES = ("standard", "2step", "3step", "optimal", "tuned")


@dataclass
class RunConfig:
    command: str
    problem: str | None = None
    matrix: str | None = None
    p: int = 4
    ppn: int = 2
    t: int = 4
    t_list: tuple = ()
    method: str = "ecg"
    scheme: str = "standard"
    tol: float = 1e-8
    maxit: int | None = None
    threshold: int = DEFAULT_THRESHOLD
    params_file: str | None = None
    variant: str = "maxrate"
    out: str | None = None
    fmt: str = "json"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if not (1 <= self.ppn <= self.p):
            raise ValueError("ppn must satisfy 1 <= ppn <= p")
        if self.t < 1:
            raise ValueError("t must be at least 1")
        if self.threshold < 1:
            raise ValueError("threshold must be positive")
        if self.command != "generate" and not (self.problem or self.matrix):
            raise ValueError("need --problem or --matrix")


def _load(config: RunConfig):
    if config.matrix:
        a = load_matrix_market(config.matrix)
        return a, np.ones(a.n_rows)
    return generate_problem(config.problem)


def _params(config: RunConfig, topo: Topology) -> MachineParams:
    params = (MachineParams.from_file(config.params_file)
              if config.params_file else MachineParams())
    # the simulated topology always wins over the parameter file
    return params.replace(ppn=topo.ppn)


def _probe_block(n: int, t: int) -> np.ndarray:
    """Deterministic non-degenerate block for benchmark products."""
    return ((np.arange(n, dtype=np.float64)[:, None] % 17.0 + 1.0)
            + np.arange(t, dtype=np.float64)[None, :] * 0.25)


def _scheme_seconds(scheme: str, stats, t: int, params: MachineParams) -> float:
    if scheme == "standard":
        return maxrate_time(stats.n_opt, stats.s_proc, params)
    if scheme == "two_step":
        return model_2step(stats.unit_width(t), t, params)
    return model_3step(stats.unit_width(t), t, params)


def _percentages(parts: dict) -> dict:
    total = sum(parts.values())
    if total <= 0:
        return {f"pct_{k}": 0.0 for k in parts}
    return {f"pct_{k}": 100.0 * v / total for k, v in parts.items()}


def _config_echo(config: RunConfig) -> dict:
    echo = {
        "command": config.command,
        "problem": config.problem,
        "matrix": config.matrix,
        "p": config.p,
        "ppn": config.ppn,
        "threshold": config.threshold,
        "params_file": config.params_file,
    }
    if config.command in ("solve",):
        echo.update(method=config.method, scheme=config.scheme, t=config.t,
                    tol=config.tol, maxit=config.maxit, variant=config.variant)
    elif config.command in ("bench-spmbv", "tune"):
        echo.update(t=config.t)
    elif config.command == "model":
        echo.update(t_list=list(config.t_list), variant=config.variant)
    return echo


# ---------------------------------------------------------------------------
# subcommand drivers
# ---------------------------------------------------------------------------

def _run_generate(config: RunConfig) -> dict:
    a, _ = generate_problem(config.problem)
    if not config.out:
        raise ValueError("generate needs --out for the matrix file")
    save_matrix_market(config.out, a)
    row = {"problem": config.problem, "n": a.n_rows, "nnz": a.nnz,
           "path": config.out}
    return {"schema": 1, "command": "generate", "config": _config_echo(config),
            "rows": [row]}


def _resolve_scheme(config: RunConfig, a, part, topo, t, params):
    """CLI scheme name -> internal label (running the tuner if asked)."""
    if config.scheme != "tuned":
        return SCHEME_ALIASES[config.scheme], None
    with VirtualCluster(topo) as executor:
        label, report = tune_scheme(a, part, topo, t, executor, params,
                                    threshold=config.threshold, f=params.f)
    return label, report


def _run_solve(config: RunConfig) -> dict:
    a, b = _load(config)
    topo = Topology(config.p, config.ppn)
    part = build_row_partition(a.n_rows, topo.p)
    params = _params(config, topo)
    t = config.t if config.method == "ecg" else 1
    scheme, tune_report = _resolve_scheme(config, a, part, topo, t, params)

    kwargs = dict(tol=config.tol, maxit=config.maxit, scheme=scheme,
                  topo=topo, part=part, threshold=config.threshold, f=params.f)
    if config.method == "cg":
        report = cg_solve(a, b, **kwargs)
    else:
        report = ecg_solve(a, b, t=config.t, **kwargs)

    pattern = analyze_comm(a, part, topo)
    unit_stats = plan_stats(plan_by_name("standard", pattern, topo, 1, params.f),
                            topo)
    prediction = ecg_iteration_model(unit_stats, report.t, a.n_rows, a.nnz,
                                     topo.p, params, variant=config.variant)
    run_stats = plan_stats(plan_by_name(scheme, pattern, topo, report.t,
                                        params.f, config.threshold), topo)

    parts = {"point_to_point": prediction.point_to_point,
             "collective": prediction.collective,
             "computation": prediction.computation}
    flops_total = sum(report.flop_totals.values())
    row = {
        "method": report.method,
        "scheme": report.scheme,
        "t": report.t,
        "iterations": report.iterations,
        "converged": report.converged,
        "breakdown": report.breakdown,
        "final_relative_residual": report.final_relative_residual,
        "messages": report.trace.total_messages,
        "bytes_on_node": report.trace.total_bytes_on_node,
        "bytes_off_node": report.trace.total_bytes_off_node,
        "reductions": len(report.trace.collectives),
        "flops": float(flops_total),
        "modeled_p2p_seconds": prediction.point_to_point,
        "modeled_collective_seconds": prediction.collective,
        "modeled_computation_seconds": prediction.computation,
        "modeled_iteration_seconds": prediction.total,
        "modeled_solve_seconds": prediction.total * report.iterations,
        "dominant_term": prediction.dominant_term,
    }
    row.update(run_stats.to_json_dict())
    row.update(_percentages(parts))

    out = {"schema": 1, "command": "solve", "config": _config_echo(config),
           "rows": [row], "solve": report.to_json_dict(),
           "model": prediction.to_json_dict(),
           "machine_params": params.to_dict()}
    if tune_report is not None:
        out["tune"] = tune_report
    return out


def _run_bench_spmbv(config: RunConfig) -> dict:
    a, _ = _load(config)
    topo = Topology(config.p, config.ppn)
    part = build_row_partition(a.n_rows, topo.p)
    params = _params(config, topo)
    apart = PartitionedMatrix.build(a, part)
    pattern = analyze_comm(a, part, topo)
    slices = distribute(_probe_block(a.n_rows, config.t), part)

    rows = []
    reference = None
    with VirtualCluster(topo) as cluster:
        for scheme in SCHEMES:
            plan = plan_by_name(scheme, pattern, topo, config.t, params.f,
                                config.threshold)
            trace = ExecutionTrace(topo.p)
            result = collect(spmbv(apart, slices, plan, cluster, trace))
            if reference is None:
                reference = result
            elif not np.array_equal(reference, result):
                raise AssertionError(f"scheme {scheme} changed the product")
            stats = plan_stats(plan, topo)
            row = {"scheme": scheme, "t": config.t,
                   "messages": trace.total_messages,
                   "bytes_on_node": trace.total_bytes_on_node,
                   "bytes_off_node": trace.total_bytes_off_node,
                   "modeled_seconds": _scheme_seconds(scheme, stats, config.t, params)}
            row.update(stats.to_json_dict())
            rows.append(row)
    return {"schema": 1, "command": "bench-spmbv",
            "config": _config_echo(config), "rows": rows,
            "machine_params": params.to_dict()}


def _run_model(config: RunConfig) -> dict:
    a, _ = _load(config)
    topo = Topology(config.p, config.ppn)
    part = build_row_partition(a.n_rows, topo.p)
    params = _params(config, topo)
    pattern = analyze_comm(a, part, topo)
    stats = plan_stats(plan_by_name("standard", pattern, topo, 1, params.f), topo)

    rows = []
    for t in config.t_list:
        prediction = ecg_iteration_model(stats, t, a.n_rows, a.nnz, topo.p,
                                         params, variant=config.variant)
        parts = {"point_to_point": prediction.point_to_point,
                 "collective": prediction.collective,
                 "computation": prediction.computation}
        row = {"t": t, "n": a.n_rows, "nnz": a.nnz,
               "flops_per_rank_per_iteration": float(iteration_flops(
                   a.n_rows, a.nnz, topo.p, t))}
        row.update(prediction.to_json_dict())
        row.update(_percentages(parts))
        rows.append(row)
    return {"schema": 1, "command": "model", "config": _config_echo(config),
            "rows": rows, "machine_params": params.to_dict()}


def _run_tune(config: RunConfig) -> dict:
    a, _ = _load(config)
    topo = Topology(config.p, config.ppn)
    part = build_row_partition(a.n_rows, topo.p)
    params = _params(config, topo)
    with VirtualCluster(topo) as executor:
        label, report = tune_scheme(a, part, topo, config.t, executor, params,
                                    threshold=config.threshold, f=params.f)
    rows = []
    for scheme in SCHEMES:
        entry = report["schemes"][scheme]
        row = {"scheme": scheme, "selected": scheme == label,
               "modeled_seconds": entry["modeled_seconds"]}
        row.update(entry["stats"])
        rows.append(row)
    return {"schema": 1, "command": "tune", "config": _config_echo(config),
            "rows": rows, "selected": label, "tune": report,
            "machine_params": params.to_dict()}


_RUNNERS = {
    "generate": _run_generate,
    "solve": _run_solve,
    "bench-spmbv": _run_bench_spmbv,
    "model": _run_model,
    "tune": _run_tune,
}


def run_benchmark(config: RunConfig) -> dict:
    return _RUNNERS[config.command](config)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def render_report(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        rows = report.get("rows", [])
        buf = io.StringIO()
        fields = sorted({key for row in rows for key in row})
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return buf.getvalue()
    raise ValueError(f"unknown output format {fmt!r}")


def _emit(report: dict, config: RunConfig):
    text = render_report(report, config.fmt)
    # generate's --out is the matrix file; its report always goes to stdout
    if config.out and config.command != "generate":
        with open(config.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _int_list(text: str) -> tuple:
    try:
        values = tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("block widths must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enlargedcg",
        description="Enlarged-CG solver and communication-scheme benchmarks "
                    "on a simulated multi-node cluster.")
    sub = parser.add_subparsers(dest="command", required=True)

    problem = argparse.ArgumentParser(add_help=False)
    group = problem.add_mutually_exclusive_group()
    group.add_argument("--problem", help="generator spec, e.g. laplace2d:128x128")
    group.add_argument("--matrix", help="Matrix Market file to load")

    topo = argparse.ArgumentParser(add_help=False)
    topo.add_argument("--p", type=int, default=4, help="virtual ranks (default 4)")
    topo.add_argument("--ppn", type=int, default=2,
                      help="ranks per node (default 2)")

    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--out", help="report path (default stdout)")
    output.add_argument("--format", dest="fmt", choices=("json", "csv"),
                        default="json", help="report format (default json)")

    machine = argparse.ArgumentParser(add_help=False)
    machine.add_argument("--params", dest="params_file",
                         help="machine parameter file (key=value lines); "
                              "ppn is always taken from --ppn")

    comm = argparse.ArgumentParser(add_help=False)
    comm.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD,
                      help="nodal-optimal split/merge threshold in bytes "
                           f"(default {DEFAULT_THRESHOLD})")

    gen = sub.add_parser("generate", help="write a generated matrix")
    gen.add_argument("--problem", required=True)
    gen.add_argument("--out", required=True, help="Matrix Market output path")

    solve = sub.add_parser("solve", parents=[problem, topo, output, machine, comm],
                           help="run CG or ECG and report counts + models")
    solve.add_argument("--method", choices=("cg", "ecg"), default="ecg")
    solve.add_argument("--t", type=int, default=4, help="block width (default 4)")
    solve.add_argument("--scheme", choices=SCHEME_CHOICES, default="standard")
    solve.add_argument("--tol", type=float, default=1e-8)
    solve.add_argument("--maxit", type=int, default=None)
    solve.add_argument("--variant", choices=("postal", "maxrate"),
                       default="maxrate", help="point-to-point model flavour")

    bench = sub.add_parser("bench-spmbv", parents=[problem, topo, output,
                                                   machine, comm],
                           help="one sparse block product per scheme")
    bench.add_argument("--t", type=int, default=4)

    model = sub.add_parser("model", parents=[problem, topo, output, machine],
                           help="per-iteration time predictions")
    model.add_argument("--t-list", type=_int_list, default=(1, 2, 4, 8),
                       help="comma-separated block widths (default 1,2,4,8)")
    model.add_argument("--variant", choices=("postal", "maxrate"),
                       default="maxrate")

    tune = sub.add_parser("tune", parents=[problem, topo, output, machine, comm],
                          help="pick the cheapest communication scheme")
    tune.add_argument("--t", type=int, default=4)

    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    kw = dict(command=args.command)
    for name in ("problem", "matrix", "p", "ppn", "t", "t_list", "method",
                 "scheme", "tol", "maxit", "threshold", "params_file",
                 "variant", "out", "fmt"):
        if hasattr(args, name) and getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    return RunConfig(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        report = run_benchmark(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(report, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
