"""Symmetric linear algebra kernels used by the solvers.

Dense symmetric matrices and vectors are plain float64 ndarrays; the
classes here add the two structures the solvers rely on: a CSR matrix
that stores both triangles of a symmetric matrix, and a semidefinite
Cholesky factorization with threshold pivoting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.lapack import dpstrf


class IndefiniteMatrixError(ValueError):
    """Raised when a matrix required to be positive (semi)definite is not."""


class ConvergenceFailure(RuntimeError):
    """Raised when an iterative solve exhausts its iteration budget.

    Carries an optional ``report`` attribute with whatever partial
    results the caller attached.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _require_symmetric(M, tol=1e-12, what="matrix"):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{what} must be square, got shape {M.shape}")
    if M.size:
        scale = np.abs(M).max()
        if scale > 0 and np.abs(M - M.T).max() > tol * scale:
            raise ValueError(f"{what} is not symmetric to relative tolerance {tol}")
    return M


class SparseSymMatrix:
    """Symmetric sparse matrix in CSR form, both triangles stored.

    Rows are sorted by column index and every structural entry has its
    transpose partner with a bitwise equal value, which construction via
    ``from_coo`` guarantees by summing duplicate entries of (i, j) and
    (j, i) in the same order.
    """

    def __init__(self, csr, validate=False):
        if not sp.issparse(csr) or csr.format != "csr":
            raise ValueError("expected a scipy CSR matrix")
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got shape {csr.shape}")
        csr = csr.astype(np.float64, copy=False)
        if not csr.has_sorted_indices:
            csr.sort_indices()
        self._csr = csr
        if validate:
            self.check()

    @classmethod
    def from_coo(cls, n, rows, cols, vals, validate=False):
        """Build from COO triplets, summing duplicates deterministically.

        Duplicates are grouped by (row, col) with a stable sort, so the
        summands of entry (i, j) and entry (j, i) appear in the same
        input order and the two sums are bitwise equal whenever the
        input triplet list is symmetric.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("rows, cols, vals must have equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError("triplet index out of range")
        order = np.lexsort((cols, rows))  # stable: duplicates keep input order
        r, c, v = rows[order], cols[order], vals[order]
        key = r * np.int64(n) + c
        starts = np.flatnonzero(np.r_[True, np.diff(key) != 0])
        data = np.add.reduceat(v, starts) if len(v) else v
        ru, cu = r[starts], c[starts]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(ru, minlength=n), out=indptr[1:])
        csr = sp.csr_matrix((data, cu.astype(np.int32, copy=False) if n < 2**31 else cu, indptr), shape=(n, n))
        return cls(csr, validate=validate)

    @classmethod
    def from_dense(cls, M, validate=True):
        M = _require_symmetric(M)
        return cls(sp.csr_matrix(M), validate=validate)

    @property
    def n(self):
        return self._csr.shape[0]

    @property
    def nnz(self):
        return self._csr.nnz

    def to_scipy(self):
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"vector length {x.shape} does not match dimension {self.n}")
        return self._csr @ x

    def submatrix(self, rows):
        """Dense principal submatrix over the strictly increasing index list."""
        rows = self._check_index(rows)
        return self._slice(rows, rows).toarray()

    def submatrix_pair(self, rows, cols):
        """Sparse rectangular block A[rows, cols], both lists strictly increasing."""
        return self._slice(self._check_index(rows), self._check_index(cols))

    def _check_index(self, idx):
        idx = np.asarray(idx, dtype=np.int64).ravel()
        if len(idx) == 0:
            raise ValueError("empty index list")
        if idx[0] < 0 or idx[-1] >= self.n or (len(idx) > 1 and (np.diff(idx) <= 0).any()):
            raise ValueError("indices must be strictly increasing and in range")
        return idx

    def _slice(self, rows, cols):
        out = self._csr[rows][:, cols].tocsr()
        out.sort_indices()
        return out

    def check(self):
        """Validate the structural invariants; raises ValueError on violation."""
        csr = self._csr
        n = csr.shape[0]
        if (np.diff(csr.indptr) < 0).any():
            raise ValueError("row offsets must be non-decreasing")
        for_row = np.repeat(np.arange(n), np.diff(csr.indptr))
        same_row = for_row[1:] == for_row[:-1] if csr.nnz > 1 else np.array([], bool)
        if csr.nnz > 1 and (np.diff(csr.indices)[same_row] <= 0).any():
            raise ValueError("column indices must be strictly increasing within rows")
        t = csr.T.tocsr()
        t.sort_indices()
        if not (np.array_equal(t.indptr, csr.indptr) and np.array_equal(t.indices, csr.indices)):
            raise ValueError("sparsity structure is not symmetric")
        if not np.array_equal(t.data, csr.data):
            raise ValueError("values are not symmetric")
        # structural diagonal must be present with a positive value
        cnt_left = np.bincount(for_row[csr.indices < for_row], minlength=n)
        pos = csr.indptr[:-1] + cnt_left
        in_row = pos < csr.indptr[1:]
        present = np.zeros(n, dtype=bool)
        present[in_row] = csr.indices[pos[in_row]] == np.arange(n)[in_row]
        if not present.all():
            raise ValueError("diagonal entries must be structurally present")
        if (csr.diagonal() <= 0).any():
            raise ValueError("diagonal entries must be positive")
        return self


@dataclass
class Factorization:
    """Pivoted semidefinite Cholesky factorization P L L^T P^T of M.

    ``perm[j]`` is the original index placed at pivot position j; for a
    positive definite input the permutation is the identity. Pivots at
    or below ``pivot_tol`` times the largest initial diagonal entry are
    dropped; ``rank`` counts the kept pivots and ``dropped`` lists the
    original indices of the discarded directions.
    """

    n: int
    lower: np.ndarray  # (n, rank), rows in pivot order
    perm: np.ndarray  # (n,)
    rank: int
    pivot_tol: float

    @property
    def dropped(self):
        return self.perm[self.rank:]

    def solve(self, b):
        """Solve M x = b; dropped directions get zero solution components.

        For a consistent right-hand side this is the solution supported
        on the retained pivot set. Accepts a vector or a matrix of
        right-hand-side columns.
        """
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side length {b.shape[0]} does not match dimension {self.n}")
        r = self.rank
        x = np.zeros_like(b)
        if r == 0:
            return x
        y = b[self.perm[:r]]
        L11 = self.lower[:r, :r]
        z = sla.solve_triangular(L11, y, lower=True, check_finite=False)
        w = sla.solve_triangular(L11, z, lower=True, trans=1, check_finite=False)
        x[self.perm[:r]] = w
        return x

    def reconstruct(self):
        """Return P L L^T P^T as a dense matrix (testing aid)."""
        M = self.lower @ self.lower.T
        out = np.empty((self.n, self.n))
        out[np.ix_(self.perm, self.perm)] = M
        return out


def factorize(M, pivot_tol=1e-12):
    """Factor a symmetric positive semidefinite matrix.

    Plain Cholesky is attempted first (identity permutation); if any
    pivot falls at or below pivot_tol * max(diag(M)) the factorization
    restarts with diagonal pivoting and drops the deficient directions.
    A pivot below the negated threshold raises IndefiniteMatrixError.
    """
    M = _require_symmetric(M)
    if pivot_tol < 0:
        raise ValueError("pivot_tol must be nonnegative")
    n = M.shape[0]
    if n == 0:
        return Factorization(0, np.zeros((0, 0)), np.zeros(0, dtype=np.int64), 0, pivot_tol)
    diag = np.diag(M)
    tol_abs = pivot_tol * max(diag.max(), 0.0)
    if diag.min() > tol_abs:
        try:
            L = sla.cholesky(M, lower=True, check_finite=False)
            if (np.diag(L) ** 2 > tol_abs).all():
                return Factorization(n, L, np.arange(n, dtype=np.int64), n, pivot_tol)
        except np.linalg.LinAlgError:
            pass
    c, piv, rank, info = dpstrf(M, lower=1, tol=tol_abs)
    if info < 0:
        raise RuntimeError(f"dpstrf failed with illegal argument {-info}")
    perm = np.asarray(piv, dtype=np.int64) - 1
    L = np.tril(c)[:, :rank]
    if rank < n:
        # the trailing Schur complement diagonal tells semidefinite drop
        # apart from a genuinely indefinite matrix
        tail = diag[perm[rank:]] - np.einsum("ij,ij->i", L[rank:, :], L[rank:, :])
        if tail.size and tail.min() < -max(tol_abs, 64 * np.finfo(np.float64).eps * max(diag.max(), 0.0)):
            raise IndefiniteMatrixError("matrix not positive semidefinite")
    return Factorization(n, L, perm, int(rank), pivot_tol)


def sym_gen_eig(A, B, upper=None):
    """Solve the generalized symmetric eigenproblem A p = lambda B p.

    B must be positive definite. Returns eigenvalues in ascending order
    with B-orthonormal eigenvector columns; with ``upper`` given, only
    eigenpairs with eigenvalue below that bound are computed.
    """
    A = _require_symmetric(A, what="left-hand matrix")
    B = _require_symmetric(B, what="right-hand matrix")
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    try:
        if upper is None:
            w, V = sla.eigh(A, B, driver="gvd", check_finite=False)
        else:
            w, V = sla.eigh(A, B, subset_by_value=(-np.inf, upper), driver="gvx", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMatrixError(f"invalid right-hand matrix: {exc}") from exc
    return w, V


def reference_solve(A, f, tol=1e-12, max_iter=None):
    """Unpreconditioned conjugate gradients on a SparseSymMatrix.

    The residual is recomputed from scratch every iteration, and the
    solve stops once ||f - A x|| <= tol * ||f||. Exceeding the budget
    (default 10 n) raises ConvergenceFailure.
    """
    f = np.asarray(f, dtype=np.float64)
    n = A.n
    if f.shape != (n,):
        raise ValueError(f"right-hand side length {f.shape} does not match dimension {n}")
    nf = np.linalg.norm(f)
    x = np.zeros(n)
    if nf == 0.0:
        return x
    if max_iter is None:
        max_iter = 10 * n
    r = f.copy()
    p = r.copy()
    rs = float(r @ r)
    if np.sqrt(rs) <= tol * nf:
        return x
    for _ in range(max_iter):
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteMatrixError("matrix not positive definite in reference solve")
        x += (rs / pAp) * p
        r = f - A.matvec(x)
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * nf:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceFailure(f"reference solve did not converge in {max_iter} iterations")
