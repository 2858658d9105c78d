"""Grouped vectors, sparse designs and the plain-text file formats they use.

Groups are always stored contiguously: a :class:`GroupPartition` is just the
``m + 1`` offsets delimiting ``m`` consecutive slices of a length-``d``
vector.  Arbitrary groupings are normalised once, in :func:`make_grouped`, by
a stable permutation that is kept on the resulting :class:`GroupedVector` so
results can be mapped back to the caller's ordering.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of iterations before meeting its tolerance.

    ``residual`` carries the best residual reached, when one is available.
    """

    def __init__(self, message, residual=math.nan):
        super().__init__(message)
        self.residual = residual


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GroupPartition:
    """Partition of ``range(d)`` into ``m`` nonempty contiguous groups."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offsets)
        if off.ndim != 1 or off.size < 2:
            raise ValueError("offsets must be a 1-D array with at least two entries")
        if not np.issubdtype(off.dtype, np.integer):
            if not np.all(off == np.round(off)):
                raise ValueError("offsets must be integers")
        off = _frozen(off, dtype=np.int64)
        if off[0] != 0:
            raise ValueError("offsets must start at 0")
        if np.any(np.diff(off) <= 0):
            raise ValueError("offsets must be strictly increasing (no empty groups)")
        object.__setattr__(self, "offsets", off)

    @classmethod
    def from_sizes(cls, sizes):
        sizes = np.asarray(sizes, dtype=np.int64)
        return cls(np.concatenate(([0], np.cumsum(sizes))))

    @classmethod
    def uniform(cls, m, size):
        """``m`` groups of ``size`` consecutive entries each."""
        return cls(np.arange(m + 1, dtype=np.int64) * size)

    @property
    def m(self):
        return self.offsets.size - 1

    @property
    def d(self):
        return int(self.offsets[-1])

    @cached_property
    def sizes(self):
        s = np.diff(self.offsets)
        s.flags.writeable = False
        return s

    @cached_property
    def uniform_size(self):
        """Common group size, or ``None`` when sizes differ."""
        s = self.sizes
        return int(s[0]) if np.all(s == s[0]) else None

    @cached_property
    def _scatter(self):
        rows = np.repeat(np.arange(self.m), self.sizes)
        cols = np.arange(self.d) - self.offsets[rows]
        return rows, cols

    def pad(self, data):
        """View ``data`` as an ``(m, max_size)`` array, zero padding short groups.

        Zero padding is neutral for every per-group operation in this package
        (norms, soft thresholding, ball projections all map zeros to zeros).
        """
        data = np.asarray(data)
        if self.uniform_size is not None:
            return data.reshape(self.m, self.uniform_size)
        out = np.zeros((self.m, int(self.sizes.max())), dtype=data.dtype)
        out[self._scatter] = data
        return out

    def unpad(self, rows):
        """Inverse of :meth:`pad`: flatten a padded array back to length ``d``."""
        if self.uniform_size is not None:
            return np.asarray(rows).reshape(self.d)
        return np.asarray(rows)[self._scatter]

    def __eq__(self, other):
        return isinstance(other, GroupPartition) and np.array_equal(self.offsets, other.offsets)

    def __hash__(self):
        return hash(self.offsets.tobytes())

    def __repr__(self):
        return f"GroupPartition(m={self.m}, d={self.d})"


@dataclass(frozen=True, eq=False)
class GroupedVector:
    """A flat real vector together with its contiguous group partition.

    ``perm[k]`` is the caller-side index of stored entry ``k``; it is ``None``
    when the storage order is already the caller's order.
    """

    data: np.ndarray
    partition: GroupPartition
    perm: np.ndarray | None = field(default=None)

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 1 or data.size != self.partition.d:
            raise ValueError(
                f"data has shape {data.shape}, partition expects ({self.partition.d},)"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("grouped vector entries must be finite")
        object.__setattr__(self, "data", data)
        if self.perm is not None:
            object.__setattr__(self, "perm", _frozen(self.perm, dtype=np.int64))

    @classmethod
    def from_rows(cls, W):
        """Group a 2-D array by rows (row ``i`` is group ``i``)."""
        W = np.asarray(W, dtype=float)
        return cls(W.reshape(-1), GroupPartition.uniform(W.shape[0], W.shape[1]))

    @property
    def m(self):
        return self.partition.m

    @property
    def d(self):
        return self.partition.d

    def group(self, i):
        lo, hi = self.partition.offsets[i], self.partition.offsets[i + 1]
        return self.data[lo:hi]

    def groups(self):
        return [self.group(i) for i in range(self.m)]

    def padded(self):
        return self.partition.pad(self.data)

    def with_data(self, data):
        """Same partition and permutation, new values."""
        return GroupedVector(data, self.partition, self.perm)

    def ungroup(self):
        """Data in the caller's original ordering."""
        if self.perm is None:
            return self.data.copy()
        out = np.empty_like(self.data)
        out[self.perm] = self.data
        return out


def make_grouped(data, ids):
    """Build a :class:`GroupedVector` from values and a group id per entry.

    Ids must cover ``0 .. m-1`` with no gaps.  Entries are stably reordered
    so that each group is contiguous; :meth:`GroupedVector.ungroup` undoes it.

    >>> make_grouped([1.0, 2.0, 3.0], [0, 1, 0]).groups()
    [array([1., 3.]), array([2.])]
    """
    data = np.asarray(data, dtype=float).ravel()
    ids = np.asarray(ids).ravel()
    if data.size != ids.size:
        raise ValueError(f"{data.size} values but {ids.size} group ids")
    if data.size == 0:
        raise ValueError("cannot group an empty vector")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("group ids must be integers")
    if ids.min() < 0:
        raise ValueError(f"group id {ids.min()} out of range")
    m = int(ids.max()) + 1
    counts = np.bincount(ids, minlength=m)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"group ids must be contiguous from 0; empty groups {missing}")
    perm = np.argsort(ids, kind="stable")
    part = GroupPartition.from_sizes(counts)
    if np.array_equal(perm, np.arange(data.size)):
        return GroupedVector(data, part)
    return GroupedVector(data[perm], part, perm)


# --------------------------------------------------------------------------
# sparse designs

def csr_from_arrays(indptr, indices, values, shape):
    """Validated CSR matrix (column indices strictly increasing in every row)."""
    rows, cols = (int(s) for s in shape)
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if indptr.shape != (rows + 1,) or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
        raise ValueError("malformed row offsets")
    if indices.size != indptr[-1] or values.size != indptr[-1]:
        raise ValueError("row offsets do not match the number of stored entries")
    if indices.size and (indices.min() < 0 or indices.max() >= cols):
        raise ValueError("column index out of bounds")
    if not np.all(np.isfinite(values)):
        raise ValueError("matrix values must be finite")
    if indices.size > 1:
        within = np.ones(indices.size - 1, dtype=bool)
        starts = indptr[1:-1]
        starts = starts[(starts > 0) & (starts < indices.size)]
        within[starts - 1] = False
        bad = np.flatnonzero(within & (np.diff(indices) <= 0))
        if bad.size:
            r = int(np.searchsorted(indptr, bad[0], side="right") - 1)
            raise ValueError(f"column indices in row {r} are not strictly increasing")
    return sp.csr_matrix((values, indices, indptr), shape=(rows, cols))


def csr_from_triplets(rows, cols, values, shape):
    """CSR matrix from 0-based coordinate triplets (duplicates are an error)."""
    coo = sp.coo_matrix(
        (np.asarray(values, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape
    )
    A = coo.tocsr()
    if A.nnz != coo.nnz:
        raise ValueError("duplicate coordinates")
    A.sort_indices()
    return csr_from_arrays(A.indptr, A.indices, A.data, A.shape)


def sparse_matvec(A, x):
    """``A @ x`` for a CSR matrix; each row is accumulated left to right."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != A.shape[1]:
        raise ValueError(f"matrix has {A.shape[1]} columns, vector has shape {x.shape}")
    return A @ x


# --------------------------------------------------------------------------
# file formats

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


class FormatError(ValueError):
    """A data file could not be parsed; the message names file and line."""


def write_matrix_market(path, A):
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for k in order:
            fh.write(f"{A.row[k] + 1} {A.col[k] + 1} {float(A.data[k])!r}\n")


def read_matrix_market(path):
    """Read a ``coordinate real general`` MatrixMarket file into CSR form."""
    path = os.fspath(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: empty file")
    banner = lines[0].split()
    if len(banner) < 5 or banner[0].lower() != "%%matrixmarket":
        raise FormatError(f"{path}:1: missing %%MatrixMarket banner")
    obj, fmt, field_, symm = (b.lower() for b in banner[1:5])
    if (obj, fmt, symm) != ("matrix", "coordinate", "general") or field_ not in ("real", "integer"):
        raise FormatError(f"{path}:1: only 'matrix coordinate real general' is supported")
    body = [(n, ln) for n, ln in enumerate(lines[1:], start=2) if ln.strip() and not ln.startswith("%")]
    if not body:
        raise FormatError(f"{path}: missing size line")
    n, ln = body[0]
    try:
        nrows, ncols, nnz = (int(t) for t in ln.split())
    except ValueError:
        raise FormatError(f"{path}:{n}: bad size line {ln!r}") from None
    entries = body[1:]
    if len(entries) != nnz:
        raise FormatError(f"{path}:{n}: size line declares {nnz} entries, found {len(entries)}")
    r = np.empty(nnz, dtype=np.int64)
    c = np.empty(nnz, dtype=np.int64)
    v = np.empty(nnz)
    for k, (n, ln) in enumerate(entries):
        parts = ln.split()
        try:
            r[k], c[k], v[k] = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        except (ValueError, IndexError):
            raise FormatError(f"{path}:{n}: bad entry {ln!r}") from None
        if not (0 <= r[k] < nrows and 0 <= c[k] < ncols):
            raise FormatError(f"{path}:{n}: index out of range for {nrows}x{ncols} matrix")
        if not math.isfinite(v[k]):
            raise FormatError(f"{path}:{n}: non-finite value")
    try:
        return csr_from_triplets(r, c, v, (nrows, ncols))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_vector_csv(path, y):
    with open(path, "w") as fh:
        for val in np.asarray(y, dtype=float).ravel():
            fh.write(f"{float(val)!r}\n")


def read_vector_csv(path):
    """Read a single-column CSV of reals (blank lines ignored)."""
    path = os.fspath(path)
    vals = []
    with open(path) as fh:
        for n, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln:
                continue
            if "," in ln:
                raise FormatError(f"{path}:{n}: expected a single column")
            try:
                val = float(ln)
            except ValueError:
                raise FormatError(f"{path}:{n}: not a number: {ln!r}") from None
            if not math.isfinite(val):
                raise FormatError(f"{path}:{n}: non-finite value")
            vals.append(val)
    return np.array(vals)


# --------------------------------------------------------------------------
# dense linear algebra

def svd(A):
    """Thin SVD ``A = U @ diag(s) @ V.T`` with ``s`` descending and nonnegative.

    Returns ``(U, s, V)``; ``V`` (not its transpose) has orthonormal columns.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    if A.size == 0:
        k = min(A.shape)
        return np.zeros((A.shape[0], k)), np.zeros(k), np.zeros((A.shape[1], k))
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return U, s, Vt.T
