import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from enlargedcg import (
    CsrMatrix,
    SplitOperator,
    Topology,
    build_row_partition,
    cg_solve,
    ecg_solve,
    generate_problem,
    iteration_flops,
    split_residual,
)
from enlargedcg.kernels import (
    flops_block_update,
    flops_cholesky,
    flops_gram,
    flops_spmbv,
    flops_tri_solve,
)
from conftest import circulant_tridiag, random_sparse_spd


# ---------------------------------------------------------------------------
# residual splitting
# ---------------------------------------------------------------------------

def test_split_twelve_rows_three_ways():
    r = np.arange(1.0, 13.0)
    bv = split_residual(r, SplitOperator(3))
    assert bv.data.shape == (12, 3)
    for j, (lo, hi) in enumerate(((0, 4), (4, 8), (8, 12))):
        col = np.zeros(12)
        col[lo:hi] = r[lo:hi]
        assert_array_equal(bv.data[:, j], col)


def test_split_single_column_is_passthrough():
    r = np.random.default_rng(2).standard_normal(9)
    bv = split_residual(r, SplitOperator(1))
    assert_array_equal(bv.data[:, 0], r)


def test_split_uneven_lengths_lean_left():
    bv = split_residual(np.ones(7), SplitOperator(3))
    assert [int(c) for c in bv.data.sum(axis=0)] == [3, 2, 2]


def test_split_rejects_more_columns_than_rows():
    with pytest.raises(ValueError):
        split_residual(np.ones(3), SplitOperator(4))


def test_split_operator_validation():
    with pytest.raises(ValueError):
        SplitOperator(0)
    with pytest.raises(ValueError):
        SplitOperator(2, strategy="graph")


def test_split_ignores_process_partition():
    r = np.random.default_rng(7).standard_normal(20)
    plain = split_residual(r, SplitOperator(4))
    parted = split_residual(r, SplitOperator(4), build_row_partition(20, 3))
    assert_array_equal(plain.data, parted.data)


@settings(max_examples=60)
@given(st.integers(1, 120), st.integers(1, 9), st.integers(0, 2 ** 31 - 1))
def test_split_columns_sum_back_bitwise(n, t, seed):
    if t > n:
        t = n
    r = np.random.default_rng(seed).standard_normal(n) * 1e3
    bv = split_residual(r, SplitOperator(t))
    assert_array_equal(bv.column_sum(), r)  # disjoint supports: exact
    # supports are disjoint: at most one nonzero per row
    assert np.all((bv.data != 0.0).sum(axis=1) <= 1)


# ---------------------------------------------------------------------------
# conjugate gradient baseline
# ---------------------------------------------------------------------------

def test_cg_identity_converges_immediately():
    a = CsrMatrix.from_dense(np.eye(6))
    b = np.arange(1.0, 7.0)
    report = cg_solve(a, b)
    assert report.converged and report.iterations == 1
    assert_allclose(report.x, b, rtol=0, atol=1e-15)


def test_cg_zero_rhs_short_circuits():
    a = random_sparse_spd(10, seed=0)
    report = cg_solve(a, np.zeros(10))
    assert report.converged and report.iterations == 0
    assert report.residual_history == [0.0]
    assert_array_equal(report.x, np.zeros(10))


def test_cg_single_rank_matches_textbook_arithmetic():
    """With p=1 the distributed machinery must reproduce a serial CG bitwise."""
    a = random_sparse_spd(32, seed=12)
    b = np.random.default_rng(6).standard_normal(32)
    report = cg_solve(a, b, tol=1e-10)

    x = np.zeros((32, 1))
    r = b[:, None].copy()
    pdir = r.copy()
    rho = float(np.dot(r[:, 0], r[:, 0]))
    limit = 1e-10 * math.sqrt(rho)
    history = [1.0]
    iters = 0
    while math.sqrt(rho) >= limit:
        ap = a.matmul(pdir)
        alpha = rho / float(np.dot(pdir[:, 0], ap[:, 0]))
        x += alpha * pdir
        r -= alpha * ap
        rho_new = float(np.dot(r[:, 0], r[:, 0]))
        history.append(math.sqrt(rho_new) / math.sqrt(float(np.dot(b, b))))
        iters += 1
        if math.sqrt(rho_new) < limit:
            break
        pdir = r + (rho_new / rho) * pdir
        rho = rho_new

    assert report.iterations == iters
    assert_array_equal(report.x, x[:, 0])
    assert_array_equal(np.array(report.residual_history), np.array(history))


def test_cg_iteration_count_independent_of_p():
    a, b = generate_problem("laplace2d:16x16")
    counts = set()
    for p, ppn in ((1, 1), (4, 2), (8, 4)):
        counts.add(cg_solve(a, b, topo=Topology(p, ppn)).iterations)
    assert len(counts) == 1


def test_cg_breakdown_on_indefinite_matrix():
    a = CsrMatrix.from_dense(-np.eye(5))
    report = cg_solve(a, np.ones(5))
    assert report.breakdown and not report.converged
    assert "positive definiteness" in report.breakdown_message
    assert report.iterations == 0


def test_cg_absolute_tolerance_mode():
    a = random_sparse_spd(20, seed=4)
    b = 1e-3 * np.ones(20)
    report = cg_solve(a, b, tol=1e-9, relative=False)
    assert report.converged
    assert report.residual_history[0] == pytest.approx(np.linalg.norm(b))
    assert np.linalg.norm(b - a.matmul(report.x)) < 1e-9


def test_cg_warm_start():
    a = random_sparse_spd(25, seed=8)
    x_true = np.random.default_rng(3).standard_normal(25)
    b = a.matmul(x_true)
    report = cg_solve(a, b, x0=x_true + 1e-3)
    assert report.converged
    assert_allclose(report.x, x_true, rtol=0, atol=1e-6)
    cold = cg_solve(a, b)
    assert report.iterations <= cold.iterations


# ---------------------------------------------------------------------------
# enlarged conjugate gradient
# ---------------------------------------------------------------------------

def test_ecg_identity_converges_in_one_iteration():
    a = CsrMatrix.from_dense(np.eye(16))
    b = np.arange(1.0, 17.0)
    for t in (1, 2, 5, 8):
        report = ecg_solve(a, b, t=t)
        assert report.converged and report.iterations == 1, t
        assert not report.breakdown
        assert_allclose(report.x, b, rtol=0, atol=1e-12)


def test_ecg_width_one_tracks_cg():
    a, b = generate_problem("laplace2d:16x16")
    cg = cg_solve(a, b)
    ecg = ecg_solve(a, b, t=1)
    assert abs(ecg.iterations - cg.iterations) <= 2
    assert ecg.converged


def test_ecg_solves_the_system():
    for n, t in ((50, 2), (73, 4), (128, 8)):
        a = random_sparse_spd(n, seed=n)
        x_true = np.random.default_rng(n).standard_normal(n)
        b = a.matmul(x_true)
        report = ecg_solve(a, b, t=t, topo=Topology(4, 2))
        assert report.converged, (n, t)
        assert_allclose(report.x, x_true, rtol=0, atol=1e-6)


def test_ecg_iterations_never_increase_with_width(laplace128):
    reports = laplace128["reports"]
    iters = [reports[t].iterations for t in (1, 2, 4, 8)]
    assert iters == sorted(iters, reverse=True)
    assert reports[8].iterations < reports["cg"].iterations
    assert reports[4].iterations < reports["cg"].iterations
    assert all(reports[t].iterations <= reports["cg"].iterations
               for t in (1, 2, 4, 8))


def test_ecg_iteration_cap_and_history_shape():
    a, b = generate_problem("laplace2d:32x32")
    report = ecg_solve(a, b, t=2, maxit=5)
    assert report.iterations == 5
    assert not report.converged
    assert len(report.residual_history) == 6  # initial + one probe per pass
    assert report.final_relative_residual == report.residual_history[-1]
    assert len(report.iteration_summaries) == 5


def test_ecg_breakdown_on_degenerate_split():
    # rhs vanishes on the first subdomain, so the first split column is zero
    # and the very first Gram matrix is singular
    a = random_sparse_spd(20, seed=14)
    b = np.ones(20)
    b[:10] = 0.0
    report = ecg_solve(a, b, t=2)
    assert report.breakdown and not report.converged
    assert report.iterations == 0
    assert len(report.residual_history) == 1


def test_ecg_absolute_tolerance_mode():
    a = random_sparse_spd(30, seed=5)
    b = np.ones(30)
    report = ecg_solve(a, b, t=3, tol=1e-7, relative=False)
    assert report.converged
    assert report.residual_history[0] == pytest.approx(np.linalg.norm(b))
    assert np.linalg.norm(b - a.matmul(report.x)) < 1e-7


def test_ecg_warm_start():
    a = random_sparse_spd(24, seed=19)
    x_true = np.random.default_rng(19).standard_normal(24)
    b = a.matmul(x_true)
    report = ecg_solve(a, b, x0=np.ones(24), t=3)
    assert report.converged
    assert_allclose(report.x, x_true, rtol=0, atol=1e-7)


def test_ecg_validates_width():
    a = random_sparse_spd(6, seed=1)
    with pytest.raises(ValueError):
        ecg_solve(a, np.ones(6), t=0)
    with pytest.raises(ValueError):
        ecg_solve(a, np.ones(6), t=7)


def test_ecg_reported_residual_is_honest():
    a, b = generate_problem("laplace2d:24x24")
    for t in (2, 4):
        report = ecg_solve(a, b, t=t)
        assert report.converged
        true_res = np.linalg.norm(b - a.matmul(report.x)) / np.linalg.norm(b)
        assert abs(true_res - report.final_relative_residual) < 1e-12
        assert true_res < report.tol


def test_ecg_error_decreases_in_energy_norm():
    a, b = generate_problem("laplace2d:16x16")
    dense = a.to_dense()
    x_star = np.linalg.solve(dense, b)
    errors = []

    def watch(state):
        e = x_star - state.X.sum(axis=1)
        errors.append(float(e @ dense @ e))

    ecg_solve(a, b, t=4, observer=watch)
    assert len(errors) >= 3
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-12 * errors[0]


def test_ecg_observer_protocol():
    a = random_sparse_spd(21, seed=9)
    b = np.ones(21)
    seen = []

    def watch(state):
        seen.append(state)

    report = ecg_solve(a, b, t=3, observer=watch)
    assert [s.iteration for s in seen] == list(range(1, report.iterations + 1))
    for s in seen:
        assert s.X.shape == s.R.shape == s.Z.shape == (21, 3)
        assert s.c.shape == s.d.shape == s.d_old.shape == (3, 3)
        # the probe for iteration k only lands at the start of pass k+1
        assert len(s.residual_history) == s.iteration
    assert_allclose(seen[-1].X.sum(axis=1), report.x, rtol=0, atol=1e-14)


def test_ecg_report_serializes():
    a = random_sparse_spd(18, seed=2)
    report = ecg_solve(a, np.ones(18), t=2, topo=Topology(2, 1))
    blob = json.loads(json.dumps(report.to_json_dict()))
    assert blob["method"] == "ecg" and blob["t"] == 2 and blob["p"] == 2
    assert blob["iterations"] == report.iterations
    assert len(blob["residual_history"]) == len(report.residual_history)
    assert set(blob["flops"]) == {"spmbv", "gram", "cholesky", "tri_solve",
                                  "block_add", "block_axpy"}


def test_ecg_reduction_budget():
    a, b = generate_problem("laplace2d:16x16")
    report = ecg_solve(a, b, t=4, topo=Topology(4, 2))
    k = report.iterations
    # setup norm + (Gram, fused) per iteration + the trailing probe
    assert len(report.trace.collectives) == 2 * k + 2
    for summary in report.iteration_summaries:
        assert summary["reductions"] == 2
        assert summary["reduce_floats"] == [16, 48]


# ---------------------------------------------------------------------------
# flop budget
# ---------------------------------------------------------------------------

def test_iteration_flops_smallest_case():
    assert iteration_flops(4, 4, 4, 1) == Fraction(67, 6)


def test_iteration_flops_rejects_nonpositive():
    for args in ((0, 4, 1, 1), (4, 0, 1, 1), (4, 4, 0, 1), (4, 4, 1, 0)):
        with pytest.raises(ValueError):
            iteration_flops(*args)


def test_iteration_flops_matches_executor_on_uniform_rows():
    n, p, t = 16, 4, 2
    a = circulant_tridiag(n)
    x_true = np.random.default_rng(16).standard_normal(n)
    b = a.matmul(x_true)
    report = ecg_solve(a, b, t=t, topo=Topology(p, 2))
    assert report.converged and not report.breakdown
    k = report.iterations
    nnz_p, n_p = a.nnz // p, n // p
    for rk in range(p):
        per = report.trace.flops[rk]
        # converged runs carry one extra product/Gram pass: the probe that
        # observed the final residual
        assert per["spmbv"] == (k + 1) * flops_spmbv(nnz_p, t)
        assert per["gram"] == (2 * k + 1) * flops_gram(n_p, t)
        assert per["cholesky"] == k * flops_cholesky(t)
        assert per["tri_solve"] == k * 2 * flops_tri_solve(t)
        assert per["block_add"] == k * flops_block_update(n_p, t)
        assert per["block_axpy"] == k * flops_block_update(n_p, t)
        steady = sum(per.values()) - flops_spmbv(nnz_p, t) - flops_gram(n_p, t)
        assert steady == k * iteration_flops(n, a.nnz, p, t)
