import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from enlargedcg import (
    MatrixMarketError,
    generate_problem,
    laplace_1d,
    laplace_2d,
    load_matrix_market,
    peek_matrix_market,
    save_matrix_market,
)
from conftest import random_sparse_spd


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def test_laplace_1d_small():
    a, b = laplace_1d(4)
    assert a.nnz == 10
    assert_array_equal(b, np.ones(4))
    expected = np.array([[2, -1, 0, 0],
                         [-1, 2, -1, 0],
                         [0, -1, 2, -1],
                         [0, 0, -1, 2]], dtype=float)
    assert_array_equal(a.to_dense(), expected)


def test_laplace_2d_five_point():
    a, b = laplace_2d(3)
    assert a.n_rows == 9
    assert a.nnz == 33  # 9 diagonal + 24 interior couplings
    dense = a.to_dense()
    assert np.all(np.diag(dense) == 4.0)
    assert dense[4].tolist() == [0, -1, 0, -1, 4, -1, 0, -1, 0]
    assert a.is_symmetric()
    assert np.all(np.linalg.eigvalsh(dense) > 0)


def test_laplace_2d_nine_point():
    a, _ = laplace_2d(3, 3, stencil=9)
    dense = a.to_dense()
    assert np.all(np.diag(dense) == 8.0)
    # centre point touches all eight neighbours
    assert dense[4].tolist() == [-1, -1, -1, -1, 8, -1, -1, -1, -1]
    assert a.is_symmetric()
    assert np.all(np.linalg.eigvalsh(dense) > 0)


def test_laplace_2d_rectangular():
    a, b = laplace_2d(2, 5)
    assert a.n_rows == 10 and len(b) == 10


def test_generator_validation():
    with pytest.raises(ValueError):
        laplace_1d(0)
    with pytest.raises(ValueError):
        laplace_2d(0, 3)
    with pytest.raises(ValueError):
        laplace_2d(3, 3, stencil=7)


def test_generate_problem_specs():
    a, b = generate_problem("laplace1d:12")
    assert a.n_rows == 12
    a, _ = generate_problem("laplace2d:4x6")
    assert a.n_rows == 24
    a, _ = generate_problem("laplace2d:5")  # square shorthand
    assert a.n_rows == 25
    a, _ = generate_problem("LAPLACE2D9:3x3")  # case-insensitive
    assert a.to_dense()[4, 0] == -1.0


def test_generate_problem_rejects_bad_specs():
    for spec in ("laplace1d", "laplace1d:", "laplace1d:4x4", "laplace2d:axb",
                 "laplace2d:2x3x4", "heat:5", "laplace1d:four"):
        with pytest.raises(ValueError):
            generate_problem(spec)


# ---------------------------------------------------------------------------
# matrix market I/O
# ---------------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    a = random_sparse_spd(17, seed=6)
    path = tmp_path / "a.mtx"
    save_matrix_market(path, a)
    back = load_matrix_market(path)
    assert back.n_rows == 17
    assert back.nnz == a.nnz
    assert_array_equal(back.to_dense(), a.to_dense())  # repr() is lossless


def test_symmetric_storage_expansion(tmp_path):
    path = tmp_path / "sym.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "% lower triangle only\n"
        "3 3 4\n"
        "1 1 2.0\n"
        "2 1 -1.0\n"
        "2 2 2.0\n"
        "3 3 2.0\n")
    a = load_matrix_market(path)
    expected = np.array([[2, -1, 0], [-1, 2, 0], [0, 0, 2]], dtype=float)
    assert_array_equal(a.to_dense(), expected)
    assert a.nnz == 5  # the off-diagonal entry was mirrored


def test_duplicate_entries_are_summed(tmp_path):
    path = tmp_path / "dup.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 3\n"
        "1 1 1.5\n"
        "1 1 2.5\n"
        "2 2 1.0\n")
    a = load_matrix_market(path)
    assert_array_equal(a.to_dense(), np.diag([4.0, 1.0]))


def test_integer_field_accepted(tmp_path):
    path = tmp_path / "int.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate integer general\n"
        "2 2 2\n"
        "1 1 3\n"
        "2 2 4\n")
    assert_array_equal(load_matrix_market(path).to_dense(), np.diag([3.0, 4.0]))


def test_peek_reads_header_only(tmp_path):
    # header fabricated after a large published symmetric problem: peeking
    # must not pay for the four million entry lines that would follow
    path = tmp_path / "big.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "% thermal problem, SPD\n"
        "1228045 1228045 4904179\n")
    info = peek_matrix_market(path)
    assert info == {"n_rows": 1228045, "n_cols": 1228045,
                    "entries": 4904179, "symmetry": "symmetric"}
    expanded = 2 * info["entries"] - info["n_rows"]
    assert expanded == 8580313  # every diagonal entry present, rest mirrored
    density = expanded / (info["n_rows"] * info["n_cols"])
    assert density == pytest.approx(5.69e-6, rel=1e-2)


@pytest.mark.parametrize("content,fragment", [
    ("%%MatrixMarket matrix array real general\n2 2 4\n", "coordinate"),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n", "real"),
    ("%%MatrixMarket matrix coordinate real skew-symmetric\n1 1 1\n",
     "general or symmetric"),
    ("MatrixMarket matrix coordinate real general\n1 1 1\n", "header"),
])
def test_header_rejections(tmp_path, content, fragment):
    path = tmp_path / "bad.mtx"
    path.write_text(content)
    with pytest.raises(MatrixMarketError, match=fragment):
        load_matrix_market(path)


def test_error_messages_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "3 3 2\n"
        "1 1 1.0\n"
        "1 oops 2.0\n")
    with pytest.raises(MatrixMarketError, match=r"bad\.mtx:4"):
        load_matrix_market(path)


def test_out_of_range_index_rejected(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 1\n"
        "3 1 1.0\n")
    with pytest.raises(MatrixMarketError, match=r"bad\.mtx:3.*outside"):
        load_matrix_market(path)


def test_entry_count_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 5\n"
        "1 1 1.0\n"
        "2 2 1.0\n")
    with pytest.raises(MatrixMarketError, match="declares 5 entries, file has 2"):
        load_matrix_market(path)


def test_non_square_rejected(tmp_path):
    path = tmp_path / "rect.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 3 1\n"
        "1 1 1.0\n")
    with pytest.raises(MatrixMarketError, match="non-square"):
        load_matrix_market(path)


def test_missing_size_line_rejected(tmp_path):
    path = tmp_path / "empty.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n% only comments\n")
    with pytest.raises(MatrixMarketError, match="missing size line"):
        load_matrix_market(path)
    with pytest.raises(MatrixMarketError, match="missing size line"):
        peek_matrix_market(path)


def test_comments_and_blank_lines_skipped(tmp_path):
    path = tmp_path / "spacey.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "% a comment\n"
        "\n"
        "2 2 2\n"
        "\n"
        "1 1 5.0\n"
        "% trailing comment\n"
        "2 2 6.0\n")
    assert_array_equal(load_matrix_market(path).to_dense(), np.diag([5.0, 6.0]))


def test_loaded_problem_is_solvable(tmp_path):
    from enlargedcg import ecg_solve
    a, b = generate_problem("laplace2d:8x8")
    path = tmp_path / "grid.mtx"
    save_matrix_market(path, a)
    report = ecg_solve(load_matrix_market(path), b, t=2)
    assert report.converged
    assert_allclose(a.matmul(report.x), b, rtol=0, atol=1e-6)
