"""Augmented regressors, Kronecker features and empirical norms.

The regressor for sample ``t`` is::

    x_t = [1, u(t), u(t-1), ..., u(t-M+1)]        (length q = p*M + 1)

with lags before the first sample filled with zeros. Input ``j`` at lag
``m`` sits at position ``1 + m*p + j``. The degree-``d`` feature vector is
the ``d``-fold Kronecker power of ``x_t`` with the first factor varying
slowest, the same index order used by the TT contraction.

Nothing here builds a ``Q = q**d`` object except :func:`dense_design_matrix`,
which is guarded.
"""
from dataclasses import dataclass

import numpy as np

from . import _backend
from .exceptions import ConvergenceError, DeskScaleError

#: Largest Q (per output channel) for which dense Q-dimensional objects are built.
DENSE_GUARD = 200_000
#: Largest Q for which O(Q^2) dense objects (e.g. the Gram matrix) are built.
GRAM_GUARD = 4096


@dataclass(frozen=True)
class SystemConfig:
    """Volterra system dimensions.

    Parameters
    ----------
    p : int
        Number of inputs.
    M : int
        Memory length (number of lags, including lag 0).
    d : int
        Polynomial degree.
    l : int
        Number of outputs.
    """

    p: int
    M: int
    d: int
    l: int

    def __post_init__(self):
        for name in ("p", "M", "d", "l"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"SystemConfig.{name} must be a positive integer, got {v!r}")

    @property
    def q(self):
        return self.p * self.M + 1

    @property
    def Q(self):
        return self.q ** self.d

    def with_inputs(self, p):
        return SystemConfig(p=p, M=self.M, d=self.d, l=self.l)

    def to_dict(self):
        return {"p": self.p, "M": self.M, "d": self.d, "l": self.l}


@dataclass(frozen=True)
class DataSet:
    """Sample-major input/output records (``N x p`` and ``N x l``)."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.outputs, dtype=np.float64)
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError("inputs and outputs must be 2-D (samples x channels)")
        if u.shape[0] != y.shape[0]:
            raise ValueError(
                f"inputs have {u.shape[0]} rows but outputs have {y.shape[0]}"
            )
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    @property
    def N(self):
        return self.inputs.shape[0]

    @property
    def p(self):
        return self.inputs.shape[1]

    @property
    def l(self):
        return self.outputs.shape[1]

    def check(self, cfg):
        if self.p != cfg.p or self.l != cfg.l:
            raise ValueError(
                f"data has p={self.p}, l={self.l} but config expects p={cfg.p}, l={cfg.l}"
            )
        if self.N <= cfg.M:
            raise ValueError(f"need N > M samples, got N={self.N}, M={cfg.M}")

    def restrict(self, subset):
        """Same outputs, inputs limited to the columns in ``subset``."""
        return DataSet(self.inputs[:, list(subset)], self.outputs)

    def with_outputs(self, outputs):
        return DataSet(self.inputs, outputs)

    def rows(self, start, stop):
        return DataSet(self.inputs[start:stop], self.outputs[start:stop])


def build_regressor(data, cfg, t):
    """Augmented regressor ``x_t`` for a single time index."""
    N = data.N
    if not 0 <= t < N:
        raise IndexError(f"time index {t} outside [0, {N})")
    x = np.zeros(cfg.q)
    x[0] = 1.0
    for m in range(cfg.M):
        if t - m >= 0:
            x[1 + m * cfg.p: 1 + (m + 1) * cfg.p] = data.inputs[t - m]
    return x


def regressor_matrix(data, cfg):
    """All regressors stacked, shape ``N x q``."""
    N, p = data.N, cfg.p
    if data.p != p:
        raise ValueError(f"data has {data.p} inputs, config expects {p}")
    X = np.zeros((N, cfg.q))
    X[:, 0] = 1.0
    for m in range(cfg.M):
        X[m:, 1 + m * p: 1 + (m + 1) * p] = data.inputs[: N - m]
    return X


def regressor_index_map(subset, p, M):
    """Positions in the full regressor of the restricted regressor's entries.

    The regressor built from inputs ``subset`` (in the given order) equals
    ``x_full[index_map]``.
    """
    subset = [int(j) for j in subset]
    idx = [0]
    for m in range(M):
        idx.extend(1 + m * p + j for j in subset)
    return np.asarray(idx, dtype=np.intp)


def feature_inner(x_s, x_t, d):
    """``<x_s^{(x)d}, x_t^{(x)d}> = (x_s . x_t)^d``."""
    x_s = np.asarray(x_s, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_s.shape != x_t.shape:
        raise ValueError(f"length mismatch: {x_s.shape} vs {x_t.shape}")
    return float(np.dot(x_s, x_t)) ** d


def kronecker_power(x, d):
    out = np.ones(1)
    for _ in range(d):
        out = np.kron(out, x)
    return out


def dense_design_matrix(data, cfg, guard=DENSE_GUARD):
    """Design matrix ``U`` (``N x Q``), row ``t`` equal to ``x_t^{(x)d}``."""
    if cfg.Q > guard:
        raise DeskScaleError("dense design matrix (Q = q**d)", cfg.Q, guard)
    X = regressor_matrix(data, cfg)
    U = np.ones((data.N, 1))
    for _ in range(cfg.d):
        U = _backend.row_kron(U, X)
    return U


def empirical_norm(A):
    """``||A||_F / sqrt(N)`` for an ``N x l`` matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        raise ValueError("empirical norm of an empty matrix")
    if A.ndim == 1:
        A = A[:, None]
    return float(np.linalg.norm(A) / np.sqrt(A.shape[0]))


def empirical_inner(A, C):
    """``trace(A^T C) / N``."""
    A = np.asarray(A, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if A.shape != C.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {C.shape}")
    if A.size == 0:
        raise ValueError("empirical inner product of empty matrices")
    N = A.shape[0]
    return float(np.vdot(A, C) / N)


def kernel_matrix(X, d):
    """``K[s, t] = (x_s . x_t)^d / N``; shares its nonzero spectrum with ``G``."""
    X = np.asarray(X, dtype=np.float64)
    return _backend.kernel_matrix(X, d, 1.0 / X.shape[0])


def power_iteration(K, tol=1e-12, max_iter=10_000, seed=0):
    """Largest eigenvalue of a symmetric PSD matrix.

    Convergence is declared when successive Rayleigh-quotient estimates differ
    by less than ``tol`` times the current one.
    """
    n = K.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = K @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) < tol * abs(lam_new):
            return lam_new
        lam = lam_new
    residual = float(np.linalg.norm(K @ v - lam * v))
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last=lam,
        residual=residual,
    )


def gram_lambda_max(data, cfg, tol=1e-12, max_iter=10_000, seed=0):
    """``lambda_max(U^T U / N)`` via the ``N x N`` kernel matrix."""
    if data.N < 1:
        raise ValueError("need at least one sample")
    X = regressor_matrix(data, cfg)
    K = kernel_matrix(X, cfg.d)
    return power_iteration(K, tol=tol, max_iter=max_iter, seed=seed)
