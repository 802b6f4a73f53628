import numpy as np
import pytest

from enlargedcg import (
    CsrMatrix,
    Topology,
    cg_solve,
    ecg_solve,
    generate_problem,
)


def random_sparse_spd(n, seed, band=3):
    """Deterministic sparse SPD matrix: random symmetric off-diagonal pattern
    made diagonally dominant."""
    rng = np.random.default_rng(seed)
    k = n * band
    rows = rng.integers(0, n, k)
    cols = rng.integers(0, n, k)
    vals = rng.uniform(-1.0, 1.0, k)
    m = np.zeros((n, n))
    m[rows, cols] = vals
    m = m + m.T
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(m, np.abs(m).sum(axis=1) + 1.0)
    return CsrMatrix.from_dense(m)


def circulant_tridiag(n):
    """Periodic [-1, 4, -1] operator: every row has exactly 3 entries, so any
    even partition gives every rank identical local work."""
    rows = np.repeat(np.arange(n), 3)
    cols = np.concatenate([[(i - 1) % n, i, (i + 1) % n] for i in range(n)])
    vals = np.tile([-1.0, 4.0, -1.0], n)
    return CsrMatrix.from_coo(n, n, rows, cols, vals)


@pytest.fixture(scope="session")
def laplace128():
    """One shared set of solver runs on the 128x128 five-point problem."""
    import time

    a, b = generate_problem("laplace2d:128x128")
    topo = Topology(8, 4)
    start = time.monotonic()
    reports = {"cg": cg_solve(a, b, topo=topo)}
    for t in (1, 2, 4, 8):
        reports[t] = ecg_solve(a, b, t=t, topo=topo)
    elapsed = time.monotonic() - start
    return {"a": a, "b": b, "topo": topo, "reports": reports, "elapsed": elapsed}


@pytest.fixture(scope="session")
def scheme_corpus():
    """240 deterministic sparse SPD instances crossed with cluster shapes and
    block widths, with all four communication plans and their statistics."""
    from enlargedcg import (
        SCHEMES,
        analyze_comm,
        build_row_partition,
        plan_by_name,
        plan_stats,
    )

    combos = [(p, ppn) for p in (2, 4, 8, 16) for ppn in (1, 2, 4) if ppn <= p]
    widths = (1, 2, 5, 20)
    instances = []
    for i in range(240):
        p, ppn = combos[i % len(combos)]
        t = widths[i % len(widths)]
        n = 24 + (i * 7) % 177
        a = random_sparse_spd(n, seed=1000 + i)
        topo = Topology(p, ppn)
        part = build_row_partition(n, p)
        pattern = analyze_comm(a, part, topo)
        plans = {s: plan_by_name(s, pattern, topo, t, 8) for s in SCHEMES}
        stats = {s: plan_stats(plans[s], topo) for s in SCHEMES}
        instances.append(dict(index=i, a=a, n=n, t=t, topo=topo, part=part,
                              pattern=pattern, plans=plans, stats=stats))
    return instances
