"""Kronecker/vec/mat tensor algebra used by the element derivative machinery.

Conventions
-----------
Two flattening orders exist for ``vec``. The row-wise order (``order="row"``)
lists matrix rows one after another; the column-wise order (``order="col"``)
stacks columns. The identities

    vec(A C B) = (B^T (x) A) vec(C)            [column-wise]
    vec(A C B) = (A (x) B^T) vec(C)            [row-wise]

are related through the transposer matrix T, since
``vec_row(Z) = vec_col(Z^T) = T vec_col(Z)``.

The matricization helpers ``mat4``, ``mat1`` and ``mat2`` are built so that,
under the COLUMN-wise vec,

    vec(P X)  = mat4(P) vec(X)        P a 4-index array, X a matrix,
    (Q Y)_m   = mat1(Q) vec(Y)        Q a 3-index array, Y a matrix,
    vec(Q z)  = mat2(Q) z             Q a 3-index array, z a vector,
    mat4(A boxtimes B) = kron(B, A),

all hold simultaneously — the same convention under which the flux element
matrices (divergence row ``vec((DN J^-1)^T)`` against the interpolation block
``N (x) I`` with node-major flux ordering) are mutually consistent. This
outcome is exercised for both orders in the test suite; the row-wise reading
is reconciled through :func:`transposer`.

All helpers are pure functions over ``numpy`` arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "kron",
    "vec",
    "unvec",
    "transposer",
    "symmetrizer",
    "mat4",
    "mat1",
    "mat2",
]


def kron(a, b):
    """Kronecker product ``[a_ij * B]`` of two matrices."""
    return np.kron(np.asarray(a), np.asarray(b))


def vec(a, order="row"):
    """Flatten a matrix to a column vector.

    Parameters
    ----------
    a : (n, m) array_like
    order : {"row", "col"}
        "row" lists the rows one after another (the printed definition);
        "col" stacks the columns (the order under which the standard
        Kronecker identities hold).

    Returns
    -------
    (n*m,) ndarray
    """
    a = np.asarray(a)
    if order == "row":
        return a.reshape(-1, order="C").copy()
    if order == "col":
        return a.reshape(-1, order="F").copy()
    raise ValueError(f"unknown vec order: {order!r}")


def unvec(v, shape, order="row"):
    """Inverse of :func:`vec` for a target matrix ``shape``."""
    v = np.asarray(v)
    if order == "row":
        return v.reshape(shape, order="C").copy()
    if order == "col":
        return v.reshape(shape, order="F").copy()
    raise ValueError(f"unknown vec order: {order!r}")


def transposer(m, n):
    """Permutation matrix T with ``T vec_col(Z) = vec_col(Z^T)`` for m x n Z.

    Equivalently ``T vec_row(W) = vec_row(W^T)`` for n x m W. T is built from
    identity-against-unit-row Kronecker blocks and satisfies
    ``transposer(n, m) @ transposer(m, n) = I``.
    """
    t = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            # vec_col(Z)[j*m + i] = Z_ij  ->  vec_col(Z^T)[i*n + j]
            t[i * n + j, j * m + i] = 1.0
    return t


def symmetrizer(n):
    """Matrix S = (I + T)/2 with ``S vec(Z) = vec((Z + Z^T)/2)`` for n x n Z."""
    return 0.5 * (np.eye(n * n) + transposer(n, n))


def mat4(p):
    """Matrix representation of a 4-index array P.

    For P of shape (m, n, p, q) returns the (n*m) x (q*p) matrix M with
    ``M[j*m + i, l*p + k] = P[i, j, k, l]`` so that, with column-wise vec,
    ``vec(P : X) = M vec(X)`` where ``(P : X)_ij = sum_kl P_ijkl X_kl``.
    """
    p = np.asarray(p)
    m, n, pp, q = p.shape
    return p.transpose(1, 0, 3, 2).reshape(n * m, q * pp).copy()


def mat1(q):
    """First matrix representation of a 3-index array Q.

    For Q of shape (m, n, p) returns the m x (p*n) matrix M with
    ``M[a, c*n + b] = Q[a, b, c]`` so that, with column-wise vec,
    ``(Q : Y)_a = (M vec(Y))_a`` where ``(Q : Y)_a = sum_bc Q_abc Y_bc``.
    """
    q = np.asarray(q)
    m, n, p = q.shape
    return q.transpose(0, 2, 1).reshape(m, p * n).copy()


def mat2(q):
    """Second matrix representation of a 3-index array Q.

    For Q of shape (m, n, p) returns the (p*n) x m matrix M with
    ``M[c*n + b, a] = Q[a, b, c]`` so that ``vec_col(Q' z) = M z`` where
    ``(Q' z)_bc = sum_a Q_abc z_a``.
    """
    q = np.asarray(q)
    m, n, p = q.shape
    return q.transpose(2, 1, 0).reshape(p * n, m).copy()
