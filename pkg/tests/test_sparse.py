from pathlib import Path

import numpy as np
import pytest
import scipy.sparse

from krylovsketch.sparse import (
    DimensionMismatchError,
    MatrixFormatError,
    SparseMatrix,
    as_vector,
    estimate_norm,
    gen_condiff,
    gen_toeplitz,
    read_matrix_market,
    spmv,
    write_matrix_market,
)


@pytest.fixture
def small_matrix():
    dense = np.array([
        [4.0, 0.0, 1.0],
        [0.0, 3.0, 0.0],
        [2.0, 0.0, 5.0],
    ])
    return SparseMatrix.from_dense(dense), dense


def test_from_dense_keeps_entries(small_matrix):
    A, dense = small_matrix
    assert A.shape == (3, 3)
    assert A.nnz == 5
    np.testing.assert_array_equal(A.to_dense(), dense)
    np.testing.assert_array_equal(A.row_nnz(), [2, 1, 2])


def test_arrays_are_read_only(small_matrix):
    A, _ = small_matrix
    with pytest.raises(ValueError):
        A.values[0] = 1.0


@pytest.mark.parametrize(
    "offsets, cols, vals, message",
    [
        ([0, 1], [0], [1.0], "row_offsets must have length"),
        ([1, 1, 2], [0, 1], [1.0, 2.0], "start at 0"),
        ([0, 1, 3], [0, 1], [1.0, 2.0], "disagree"),
        ([0, 1, 2], [0, 2], [1.0, 2.0], "out of range"),
        ([0, 2, 2], [1, 0], [1.0, 2.0], "strictly increasing"),
        ([0, 1, 2], [0, 1], [1.0, np.inf], "finite"),
    ],
)
def test_invalid_csr_rejected(offsets, cols, vals, message):
    with pytest.raises(MatrixFormatError) as exc:
        SparseMatrix(2, 2, offsets, cols, vals)
    assert message in str(exc.value)


def test_rows_may_restart_column_order():
    A = SparseMatrix(2, 2, [0, 2, 4], [0, 1, 0, 1], [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(A.to_dense(), [[1.0, 2.0], [3.0, 4.0]])


def test_spmv_matches_dense_product():
    rng = np.random.default_rng(3)
    dense = rng.standard_normal((30, 30)) * (rng.random((30, 30)) < 0.2)
    A = SparseMatrix.from_dense(dense)
    x = rng.standard_normal(30)
    np.testing.assert_allclose(spmv(A, x), dense @ x, rtol=0, atol=1e-14 * np.linalg.norm(dense) * np.linalg.norm(x))
    X = rng.standard_normal((30, 4))
    np.testing.assert_allclose(spmv(A, X), dense @ X, rtol=1e-14, atol=1e-13)


def test_spmv_is_linear():
    rng = np.random.default_rng(8)
    A = gen_condiff(8, 0.05)
    x, y = rng.standard_normal((2, A.n_rows))
    a, c = 2.5, -0.75
    combined = spmv(A, a * x + c * y)
    separate = a * spmv(A, x) + c * spmv(A, y)
    scale = np.linalg.norm(A.to_dense()) * (abs(a) * np.linalg.norm(x) + abs(c) * np.linalg.norm(y))
    assert np.linalg.norm(combined - separate) <= 1e-14 * scale


def test_spmv_dimension_mismatch(small_matrix):
    A, _ = small_matrix
    with pytest.raises(DimensionMismatchError) as exc:
        spmv(A, np.ones(4))
    assert "3x3" in str(exc.value)


def test_as_vector_validation():
    np.testing.assert_array_equal(as_vector([1, 2, 3]), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        as_vector(np.ones((2, 2)))
    with pytest.raises(ValueError):
        as_vector([1.0, np.nan])
    with pytest.raises(ValueError):
        as_vector(np.array([1j, 2.0]), allow_complex=False)


def test_estimate_norm_close_to_two_norm():
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0, 10.0]))
    assert estimate_norm(A, steps=30) == pytest.approx(10.0, rel=1e-6)
    assert estimate_norm(SparseMatrix.from_dense(np.zeros((3, 3)))) == 0.0


def test_transpose(small_matrix):
    A, dense = small_matrix
    np.testing.assert_array_equal(A.transpose().to_dense(), dense.T)


def test_gen_condiff_structure():
    A = gen_condiff(10, 1e-2)
    assert A.shape == (100, 100)
    dense = A.to_dense()
    h = 1.0 / 11
    np.testing.assert_allclose(np.diag(dense), 4e-2 / h**2)
    # five-point stencil
    assert A.row_nnz().max() == 5
    assert not np.allclose(dense, dense.T)


def test_gen_condiff_without_wind_is_symmetric():
    dense = gen_condiff(6, 0.5, wind=False).to_dense()
    np.testing.assert_allclose(dense, dense.T)


@pytest.mark.parametrize("N, nu", [(2, 1e-2), (10, 0.0), (10, -1.0)])
def test_gen_condiff_invalid(N, nu):
    with pytest.raises(ValueError):
        gen_condiff(N, nu)


def test_gen_toeplitz():
    M = gen_toeplitz(6)
    assert M.shape == (6, 6)
    np.testing.assert_array_equal(np.diag(M), -4.0)
    np.testing.assert_array_equal(np.diag(M, -1), 2.0)
    np.testing.assert_array_equal(np.diag(M, 1), 0.5)
    np.testing.assert_array_equal(np.diag(M, 2), 0.5)
    assert np.all(np.tril(M, -2) == 0)
    with pytest.raises(ValueError):
        gen_toeplitz(3)


def test_matrix_market_round_trip(tmp_path: Path):
    A = gen_condiff(5, 1e-2)
    path = tmp_path / "condiff.mtx"
    write_matrix_market(path, A, comment="test matrix")
    B = read_matrix_market(path)
    np.testing.assert_array_equal(B.row_offsets, A.row_offsets)
    np.testing.assert_array_equal(B.col_indices, A.col_indices)
    np.testing.assert_array_equal(B.values, A.values)


def test_read_matrix_market_symmetric(tmp_path: Path):
    path = tmp_path / "sym.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "2 2 2\n"
        "1 1 2.0\n"
        "2 1 -1.0\n"
    )
    A = read_matrix_market(path)
    np.testing.assert_array_equal(A.to_dense(), [[2.0, -1.0], [-1.0, 0.0]])


def test_read_matrix_market_rejects_array_format(tmp_path: Path):
    path = tmp_path / "dense.mtx"
    path.write_text(
        "%%MatrixMarket matrix array real general\n"
        "2 2\n"
        "1.0\n0.0\n0.0\n1.0\n"
    )
    with pytest.raises(MatrixFormatError) as exc:
        read_matrix_market(path)
    assert "coordinate" in str(exc.value)


def test_read_matrix_market_rejects_garbage(tmp_path: Path):
    path = tmp_path / "garbage.mtx"
    path.write_text("this is not a matrix\n")
    with pytest.raises(MatrixFormatError):
        read_matrix_market(path)
