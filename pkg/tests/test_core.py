import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mixproj.core import (
    FormatError, GroupedVector, GroupPartition, csr_from_arrays, csr_from_triplets, make_grouped,
    read_matrix_market, read_vector_csv, sparse_matvec, svd, write_matrix_market, write_vector_csv,
)


def test_make_grouped_collects_by_id():
    x = make_grouped([1.0, 2.0, 3.0], [0, 1, 0])
    assert [g.tolist() for g in x.groups()] == [[1.0, 3.0], [2.0]]
    np.testing.assert_array_equal(x.ungroup(), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("ids", [[0, 2], [-1, 0], [1, 1]])
def test_make_grouped_rejects_gaps_and_negatives(ids):
    with pytest.raises(ValueError):
        make_grouped(np.ones(len(ids)), ids)


def test_make_grouped_length_mismatch():
    with pytest.raises(ValueError):
        make_grouped([1.0, 2.0], [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_make_grouped_round_trip(ids, seed):
    ids = np.asarray(ids)
    # relabel so the ids are contiguous
    ids = np.unique(ids, return_inverse=True)[1]
    data = np.random.default_rng(seed).standard_normal(ids.size)
    x = make_grouped(data, ids)
    np.testing.assert_array_equal(x.ungroup(), data)
    assert x.m == ids.max() + 1
    for i, g in enumerate(x.groups()):
        np.testing.assert_array_equal(g, data[ids == i])


def test_partition_validation():
    with pytest.raises(ValueError):
        GroupPartition(np.array([0, 2, 2]))
    with pytest.raises(ValueError):
        GroupPartition(np.array([1, 3]))
    p = GroupPartition.from_sizes([2, 1, 3])
    assert p.m == 3 and p.d == 6 and p.uniform_size is None
    assert GroupPartition.uniform(4, 3).uniform_size == 3
    assert p == GroupPartition.from_sizes([2, 1, 3])


def test_padded_layout_round_trips():
    x = GroupedVector(np.arange(1.0, 7.0), GroupPartition.from_sizes([2, 1, 3]))
    P = x.padded()
    np.testing.assert_array_equal(P, [[1, 2, 0], [3, 0, 0], [4, 5, 6]])
    np.testing.assert_array_equal(x.partition.unpad(P), x.data)


def test_grouped_vector_rejects_bad_data():
    with pytest.raises(ValueError):
        GroupedVector(np.ones(3), GroupPartition.uniform(2, 2))
    with pytest.raises(ValueError):
        GroupedVector(np.array([1.0, np.nan]), GroupPartition.uniform(1, 2))


def test_grouped_vector_is_immutable():
    x = GroupedVector.from_rows(np.ones((2, 2)))
    with pytest.raises(ValueError):
        x.data[0] = 5.0


def test_sparse_matvec_example():
    A = csr_from_triplets([0, 0, 1], [0, 1, 1], [1.0, 2.0, 3.0], (2, 2))
    np.testing.assert_array_equal(sparse_matvec(A, [1.0, 1.0]), [3.0, 3.0])


def test_sparse_matvec_matches_dense(rng):
    D = rng.standard_normal((50, 50)) * (rng.random((50, 50)) < 0.2)
    A = sp.csr_matrix(D)
    x = rng.standard_normal(50)
    np.testing.assert_allclose(sparse_matvec(A, x), D @ x, rtol=1e-13, atol=1e-13)


def test_sparse_matvec_dimension_mismatch():
    A = csr_from_triplets([0], [0], [1.0], (2, 3))
    with pytest.raises(ValueError):
        sparse_matvec(A, np.ones(2))


@pytest.mark.parametrize("indptr,indices", [
    ([0, 2, 3], [1, 0, 0]),   # unsorted within row
    ([0, 1, 2], [0, 5]),      # column out of range
    ([0, 2, 1], [0, 1]),      # decreasing indptr
])
def test_csr_from_arrays_validation(indptr, indices):
    with pytest.raises(ValueError):
        csr_from_arrays(indptr, indices, np.ones(len(indices)), (2, 3))


def test_csr_from_triplets_rejects_duplicates():
    with pytest.raises(ValueError):
        csr_from_triplets([0, 0], [1, 1], [1.0, 2.0], (2, 2))


def test_matrix_market_round_trip(tmp_path, rng):
    D = rng.standard_normal((7, 5)) * (rng.random((7, 5)) < 0.4)
    path = tmp_path / "a.mtx"
    write_matrix_market(path, sp.csr_matrix(D))
    assert path.read_text().splitlines()[0] == "%%MatrixMarket matrix coordinate real general"
    np.testing.assert_array_equal(read_matrix_market(path).toarray(), D)


def test_matrix_market_integer_field(tmp_path):
    path = tmp_path / "i.mtx"
    path.write_text("%%MatrixMarket matrix coordinate integer general\n% note\n2 2 1\n2 1 7\n")
    np.testing.assert_array_equal(read_matrix_market(path).toarray(), [[0, 0], [7, 0]])


@pytest.mark.parametrize("body,line", [
    ("%%MatrixMarket matrix array real general\n2 2\n", 1),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", 2),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 x 1\n", 2),
])
def test_matrix_market_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.mtx"
    path.write_text(body)
    with pytest.raises(FormatError, match=f"bad.mtx:{line}"):
        read_matrix_market(path)


def test_vector_csv_round_trip(tmp_path, rng):
    y = rng.standard_normal(9)
    path = tmp_path / "y.csv"
    write_vector_csv(path, y)
    np.testing.assert_array_equal(read_vector_csv(path), y)


def test_vector_csv_error_line(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("1.0\n2.0,3.0\n")
    with pytest.raises(FormatError, match="y.csv:2"):
        read_vector_csv(path)


def test_svd_examples():
    U, s, V = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3.0, 1.0])
    U, s, V = svd(np.zeros((3, 2)))
    np.testing.assert_array_equal(s, [0.0, 0.0])


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (40, 40), (200, 100)])
def test_svd_reconstruction(rng, shape):
    A = rng.standard_normal(shape)
    U, s, V = svd(A)
    scale = np.linalg.norm(A)
    assert np.linalg.norm((U * s) @ V.T - A) <= 1e-12 * scale
    k = s.size
    assert np.linalg.norm(U.T @ U - np.eye(k)) <= 1e-12 * max(1, scale)
    assert np.linalg.norm(V.T @ V - np.eye(k)) <= 1e-12 * max(1, scale)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
