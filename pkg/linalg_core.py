#
# linalg_core.py - complex matrices, state batches and the Taylor exponential action
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Every propagation step in the package goes through matvec_exp. The matrix
# exponential itself is never formed, only its action on a batch of states.
#


import numpy as np
import scipy.sparse as sp
from configuration import Configuration
from traj_errors import DimensionMismatchError, NonSquareError, TaylorDivergenceError, ShapeMismatchError


class ComplexMatrix:
    """
    An immutable complex matrix stored either dense (row-major numpy array) or
    sparse (compressed sparse rows). The storage kind is a tagged property.
    """
    STORAGE_DENSE = "dense"
    STORAGE_SPARSE = "sparse"

    def __init__(self, data, sparse=None):
        """
        Constructor
        :param data: numpy array, nested list or scipy sparse matrix
        :param sparse: Force a storage kind. None keeps the kind of data.
        """
        if sparse is None:
            sparse = sp.issparse(data)
        if sparse:
            m = sp.csr_matrix(data, dtype=np.complex128)
            m.eliminate_zeros()
            m.sort_indices()
            if not np.all(np.isfinite(m.data)):
                raise ValueError("ComplexMatrix entries must be finite")
            self._data = m
            self._storage = ComplexMatrix.STORAGE_SPARSE
        else:
            if sp.issparse(data):
                data = data.toarray()
            a = np.array(data, dtype=np.complex128, order="C")
            if a.ndim != 2:
                raise ShapeMismatchError(f"a matrix needs 2 dimensions, got {a.ndim}")
            if not np.all(np.isfinite(a)):
                raise ValueError("ComplexMatrix entries must be finite")
            a.setflags(write=False)
            self._data = a
            self._storage = ComplexMatrix.STORAGE_DENSE

    @classmethod
    def identity(cls, d, sparse=False):
        return cls(sp.identity(d, dtype=np.complex128, format="csr") if sparse else np.eye(d), sparse=sparse)

    @classmethod
    def zeros(cls, rows, cols=None, sparse=False):
        cols = rows if cols is None else cols
        if sparse:
            return cls(sp.csr_matrix((rows, cols), dtype=np.complex128), sparse=True)
        return cls(np.zeros((rows, cols)))

    @property
    def storage(self):
        return self._storage

    @property
    def is_sparse(self):
        return self._storage == ComplexMatrix.STORAGE_SPARSE

    @property
    def rows(self):
        return self._data.shape[0]

    @property
    def cols(self):
        return self._data.shape[1]

    @property
    def shape(self):
        return self._data.shape

    @property
    def is_square(self):
        return self.rows == self.cols

    @property
    def dim(self):
        """
        Hilbert dimension of a square operator
        """
        if not self.is_square:
            raise NonSquareError(f"matrix of shape {self.shape} has no single dimension")
        return self.rows

    @property
    def raw(self):
        """
        The underlying numpy array or csr_matrix. Do not modify it.
        """
        return self._data

    def to_dense(self):
        if not self.is_sparse:
            return self
        return ComplexMatrix(self._data.toarray(), sparse=False)

    def to_sparse(self):
        if self.is_sparse:
            return self
        return ComplexMatrix(self._data, sparse=True)

    def toarray(self):
        """
        :return: A writable dense numpy copy
        """
        if self.is_sparse:
            return self._data.toarray()
        return np.array(self._data)

    def dagger(self):
        """
        :return: The conjugate transpose with the same storage kind
        """
        if self.is_sparse:
            return ComplexMatrix(self._data.conj().T.tocsr(), sparse=True)
        return ComplexMatrix(self._data.conj().T, sparse=False)

    def scale(self, a):
        return ComplexMatrix(self._data * a, sparse=self.is_sparse)

    def __add__(self, other):
        if not isinstance(other, ComplexMatrix):
            return NotImplemented
        if self.shape != other.shape:
            raise DimensionMismatchError(f"cannot add {self.shape} and {other.shape}")
        if self.is_sparse and other.is_sparse:
            return ComplexMatrix(self._data + other._data, sparse=True)
        return ComplexMatrix(self.toarray() + other.toarray(), sparse=False)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def __matmul__(self, other):
        if not isinstance(other, ComplexMatrix):
            return NotImplemented
        if self.cols != other.rows:
            raise DimensionMismatchError(f"cannot multiply {self.shape} by {other.shape}")
        if self.is_sparse and other.is_sparse:
            return ComplexMatrix(self._data @ other._data, sparse=True)
        return ComplexMatrix(self.toarray() @ other.toarray(), sparse=False)

    def hermiticity_error(self):
        """
        :return: max |A - A^dagger| over all entries
        """
        a = self.toarray()
        return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0

    def is_hermitian(self, tol=1e-12):
        return self.is_square and self.hermiticity_error() <= tol

    def __eq__(self, other):
        if not isinstance(other, ComplexMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.toarray(), other.toarray())

    def __repr__(self):
        return f"ComplexMatrix({self.rows}x{self.cols}, {self._storage})"


class StateBatch:
    """
    A d x m block of complex state columns. A width-1 batch stands in for a
    single state vector everywhere.
    """
    def __init__(self, columns):
        """
        Constructor
        :param columns: d-vector or d x m array
        """
        a = np.array(columns, dtype=np.complex128)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.ndim != 2 or a.shape[1] < 1:
            raise ShapeMismatchError(f"a state batch needs shape (d, m >= 1), got {a.shape}")
        a.setflags(write=False)
        self._columns = a

    @classmethod
    def from_columns(cls, vectors):
        return cls(np.column_stack([np.asarray(v, dtype=np.complex128).reshape(-1) for v in vectors]))

    @property
    def dim(self):
        return self._columns.shape[0]

    @property
    def width(self):
        return self._columns.shape[1]

    @property
    def columns(self):
        """
        The read-only d x m array
        """
        return self._columns

    def column(self, i):
        return self._columns[:, i].copy()

    def vector(self):
        """
        :return: The single column of a width-1 batch as a d-vector
        """
        if self.width != 1:
            raise ShapeMismatchError(f"batch of width {self.width} is not a single state")
        return self._columns[:, 0].copy()

    def column_norms(self):
        return np.linalg.norm(self._columns, axis=0)

    def __repr__(self):
        return f"StateBatch(dim={self.dim}, width={self.width})"


def _as_columns(v):
    if isinstance(v, StateBatch):
        return v.columns
    a = np.asarray(v, dtype=np.complex128)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _as_vector(v):
    if isinstance(v, StateBatch):
        return v.vector()
    return np.asarray(v, dtype=np.complex128).reshape(-1)


def spmv(A, V):
    """
    Exact matrix-batch product. The sparse path touches only stored entries.
    :param A: ComplexMatrix
    :param V: StateBatch (or array of columns)
    :return: StateBatch
    """
    cols = _as_columns(V)
    if A.cols != cols.shape[0]:
        raise DimensionMismatchError(f"matrix has {A.cols} columns, batch has dimension {cols.shape[0]}")
    return StateBatch(A.raw @ cols)


def inner(u, v):
    """
    <u|v>, conjugate-linear in the first argument
    :param u: state
    :param v: state
    :return: complex
    """
    a = _as_vector(u)
    b = _as_vector(v)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"inner product of dimensions {a.size} and {b.size}")
    return complex(np.vdot(a, b))


def norm2(v):
    """
    :param v: state
    :return: <v|v> as a real number >= 0
    """
    a = _as_vector(v)
    return float(np.vdot(a, a).real)


def taylor_converged(term, acc, tol):
    """
    Truncation test shared by every Taylor loop in the package: the largest
    column-wise ratio |term| / |acc| over the batch must fall below tol.
    :param term: d x m incremental term
    :param acc: d x m accumulated sum
    :param tol: relative tolerance
    :return: True when the series may stop
    """
    term_norms = np.linalg.norm(term, axis=0)
    acc_norms = np.linalg.norm(acc, axis=0)
    ratios = np.where(acc_norms > 0.0, term_norms / np.where(acc_norms > 0.0, acc_norms, 1.0), term_norms)
    return bool(np.max(ratios) < tol)


def matvec_exp_info(A, V, tol=None, max_terms=None, fixed_terms=None):
    """
    The action exp(A) V by the iterative Taylor series
    V + A V + A(A V)/2! + ..., with one matrix-batch product per term.
    :param A: Square ComplexMatrix
    :param V: StateBatch
    :param tol: Relative truncation tolerance (configuration default 1e-12)
    :param max_terms: Maximum number of terms after the identity term (default 64)
    :param fixed_terms: Use exactly this many terms, skipping the truncation test
    :return: (StateBatch, number of terms used)
    """
    tol = Configuration.get(Configuration.CFG_TAYLOR_TOL) if tol is None else tol
    max_terms = Configuration.get(Configuration.CFG_TAYLOR_MAX_TERMS) if max_terms is None else max_terms
    if not A.is_square:
        raise NonSquareError(f"exponential of a {A.rows}x{A.cols} matrix")
    if tol <= 0 or max_terms < 1:
        raise ValueError("tol must be > 0 and max_terms >= 1")
    cols = _as_columns(V)
    if A.cols != cols.shape[0]:
        raise DimensionMismatchError(f"operator dimension {A.cols} does not match states of dimension {cols.shape[0]}")

    a = A.raw
    acc = np.array(cols)
    term = np.array(cols)
    limit = fixed_terms if fixed_terms is not None else max_terms
    for n in range(1, limit + 1):
        term = (1.0 / n) * (a @ term)
        acc = acc + term
        if fixed_terms is None and taylor_converged(term, acc, tol):
            return StateBatch(acc), n
    if fixed_terms is not None:
        return StateBatch(acc), fixed_terms
    raise TaylorDivergenceError(f"Taylor series not converged after {max_terms} terms, reduce dt")


def matvec_exp(A, V, tol=None, max_terms=None):
    """
    exp(A) V, see matvec_exp_info
    :return: StateBatch
    """
    return matvec_exp_info(A, V, tol=tol, max_terms=max_terms)[0]
