"""Numpy implementations of the hot kernels (fallback backend).

Signatures match the compiled ``_ckernels`` module exactly.
"""
import numpy as np


def kernel_matrix(X, d, scale):
    """``scale * (X X^T) ** d`` elementwise."""
    G = X @ X.T
    return scale * G ** d


def chain_left(L, X, core):
    """Per-sample ``L[t] @ sum_i X[t, i] * core[:, i, :]``."""
    r, q, s = core.shape
    M = (X @ core.transpose(1, 0, 2).reshape(q, r * s)).reshape(-1, r, s)
    return np.matmul(L, M)


def chain_right(X, core, R):
    """Per-sample ``(sum_i X[t, i] * core[:, i, :]) @ R[t]``."""
    r, q, s = core.shape
    M = (X @ core.transpose(1, 0, 2).reshape(q, r * s)).reshape(-1, r, s)
    return np.matmul(M, R[:, :, None])[:, :, 0]


def local_design(L, Xm, R):
    """Rows ``(t, j)``, columns ``(a, i, b)``: ``L[t,j,a] * Xm[t,i] * R[t,b]``."""
    N, n_out, ra = L.shape
    m = Xm.shape[1]
    rb = R.shape[1]
    A = np.einsum("tja,ti,tb->tjaib", L, Xm, R, optimize=True)
    return A.reshape(N * n_out, ra * m * rb)


def row_kron(X, Z):
    """Row-wise Kronecker product, ``X[t] (x) Z[t]`` (X index slowest)."""
    N = X.shape[0]
    return (X[:, :, None] * Z[:, None, :]).reshape(N, -1)
