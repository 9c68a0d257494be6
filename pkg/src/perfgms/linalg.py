"""Sparse and dense linear algebra kernels.

Sparse factorizations are SuperLU (via scipy) driven in two modes: symmetric
mode with diagonal pivots only, which behaves as an LDL^T factorization with
a fill-reducing symmetric ordering and lets positive definiteness be read off
the pivots, and the default partial-pivoting mode for saddle-point systems.
Dense symmetric eigenproblems go to LAPACK; a cyclic Jacobi solver is kept as
an independent reference.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    IndexOutOfRange,
    NonSymmetric,
    NotPositiveDefinite,
    SingularMatrix,
    ZeroMassSpace,
)


def csr_from_triplets(n, rows, cols=None, vals=None, shape=None):
    """Build a CSR matrix from (row, col, value) triplets, summing duplicates.

    Either pass three parallel arrays, or a single sequence of ``(i, j, v)``
    tuples as ``rows``.  Column indices are sorted within each row.
    """
    if cols is None:
        trip = list(rows)
        if trip:
            rows, cols, vals = (np.asarray(c) for c in zip(*trip))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    shape = (n, n) if shape is None else shape
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0] or cols.min() < 0 or cols.max() >= shape[1]):
        raise IndexOutOfRange(f"triplet index outside {shape}")
    # stable sort, then sequential sums: (i, j) and (j, i) of a symmetric
    # assembly accumulate in the same order and stay bitwise equal
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]]) if key.size else np.zeros(0, dtype=np.int64)
    summed = np.add.reduceat(vals[order], starts) if key.size else vals
    ukey = key[starts]
    r, c = np.divmod(ukey, shape[1])
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    return sp.csr_matrix((summed, c, np.cumsum(indptr)), shape=shape)


def _as_csc(A):
    A = sp.csc_matrix(A, dtype=float)
    A.sum_duplicates()
    return A


class _Factor:
    def __init__(self, lu, n):
        self.lu = lu
        self.n = n

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        x = self.lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrix("factorization produced non-finite values")
        return x


def factor_spd(A):
    """Factor a sparse SPD matrix; returns a callable ``solve(b)``.

    Raises NotPositiveDefinite if any pivot is non-positive.
    """
    A = _as_csc(A)
    n = A.shape[0]
    if n == 0:
        return lambda b: np.zeros_like(np.asarray(b, dtype=float))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sp.SparseEfficiencyWarning)
            lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
    except RuntimeError as exc:
        raise NotPositiveDefinite(f"zero pivot: {exc}") from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NotPositiveDefinite("off-diagonal pivoting was required")
    piv = lu.U.diagonal()
    scale = max(np.abs(A.diagonal()).max(), np.finfo(float).tiny)
    if np.any(piv <= 1e-14 * scale):
        raise NotPositiveDefinite(f"non-positive pivot {piv.min():.3e}")
    return _Factor(lu, n)


def sparse_solve_spd(A, b):
    """Solve ``A x = b`` for sparse symmetric positive definite ``A``."""
    return factor_spd(A)(b)


def factor_sym_indefinite(K):
    """Factor a sparse symmetric (possibly indefinite) matrix with pivoting."""
    K = _as_csc(K)
    if K.shape[0] == 0:
        return lambda b: np.zeros_like(np.asarray(b, dtype=float))
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from None
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= 1e-13 * piv.max():
        raise SingularMatrix(f"near-zero pivot {piv.min():.3e} (max {piv.max():.3e})")
    return _Factor(lu, K.shape[0])


def sparse_solve_sym_indefinite(K, b):
    """Solve a symmetric indefinite (saddle-point) system."""
    solve = factor_sym_indefinite(K)
    b = np.asarray(b, dtype=float)
    x = solve(b)
    # one step of iterative refinement tightens saddle-point residuals
    r = b - K @ x
    x = x + solve(r)
    return x


def _check_symmetric(A, tol=1e-12):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetric(f"matrix of shape {A.shape} is not square")
    if not np.all(np.isfinite(A)):
        raise NonSymmetric("matrix has non-finite entries")
    scale = max(np.abs(A).max(), np.finfo(float).tiny) if A.size else 1.0
    if A.size and np.abs(A - A.T).max() > tol * scale:
        raise NonSymmetric("matrix is not symmetric within tolerance")
    return 0.5 * (A + A.T)


def fix_signs(V):
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def jacobi_eig_sym(A, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigensolver for dense symmetric matrices.

    Iterates full sweeps of plane rotations until the off-diagonal Frobenius
    norm falls below ``tol * ||A||_F``.  Returns ascending eigenvalues and
    orthonormal eigenvectors (columns).
    """
    A = _check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if n == 0 or norm == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    lam = np.diag(A).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order]


def eig_sym(A, method="lapack"):
    """Eigen-decomposition of a dense symmetric matrix.

    Returns ascending eigenvalues and orthonormal eigenvectors with the sign
    convention of :func:`fix_signs`.  ``method="jacobi"`` uses the cyclic
    Jacobi solver instead of LAPACK.
    """
    A = _check_symmetric(A)
    if method == "jacobi":
        lam, V = jacobi_eig_sym(A)
    elif method == "lapack":
        lam, V = np.linalg.eigh(A)
    else:
        raise ValueError(f"unknown method {method!r}")
    return lam, fix_signs(V)


def eig_sym_generalized(A, S, rank_tol=1e-10, method="lapack"):
    """Solve ``A v = lam S v`` on the numerical range of ``S``.

    ``S`` is eigendecomposed; modes with eigenvalue at most
    ``rank_tol * max(eigenvalue)`` are discarded and the pencil is reduced to
    a standard problem on the rest.  Returned vectors satisfy ``V.T S V = I``.
    """
    A = _check_symmetric(A)
    S = _check_symmetric(S)
    if A.shape != S.shape:
        raise NonSymmetric(f"pencil shapes differ: {A.shape} vs {S.shape}")
    if S.size == 0:
        raise ZeroMassSpace("empty mass matrix")
    s, Q = eig_sym(S, method=method)
    smax = s.max()
    if not smax > 0 or smax <= np.finfo(float).tiny * 1e10:
        raise ZeroMassSpace("mass matrix is numerically zero")
    keep = s > rank_tol * smax
    W = Q[:, keep] / np.sqrt(s[keep])
    lam, Y = eig_sym(W.T @ A @ W, method=method)
    return lam, fix_signs(W @ Y)


def orthonormalize_cols(M, tol=1e-10):
    """Orthonormal basis of the dominant column space of ``M``.

    Keeps left singular vectors with singular value above ``tol * sigma_max``.
    Returns ``(Q, rank)``.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((M.shape[0], 0)), 0
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((M.shape[0], 0)), 0
    r = int(np.count_nonzero(s > tol * s[0]))
    return U[:, :r], r


def pivoted_cholesky_rank(G, tol=1e-10):
    """Numerical rank of a symmetric PSD matrix via LAPACK pivoted Cholesky."""
    G = np.asarray(G, dtype=float)
    if G.size == 0:
        return 0
    d = np.sqrt(np.clip(np.diag(G), np.finfo(float).tiny, None))
    Gn = G / d[:, None] / d[None, :]
    _, _, rank, info = sla.lapack.dpstrf(Gn, tol=tol, lower=1)
    if info < 0:
        raise ValueError(f"dpstrf argument error {info}")
    return int(rank)
