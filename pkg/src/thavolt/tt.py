"""Tensor-train coefficients for MIMO Volterra models.

A :class:`TTCoefficients` holds ``d`` cores; core ``k`` has shape
``(r_{k-1}, q, r_k)`` with ``r_0 = l`` (outputs) and ``r_d = 1``. It
represents the coefficient matrix ``B`` (``q**d x l``) through::

    B[(i_1..i_d), j] = V1[j, i_1, :] @ V2[:, i_2, :] @ ... @ Vd[:, i_d, 0]

with ``i_1`` the slowest multi-index digit. The output channel lives in the
first boundary rank; there is no separate output mode.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .exceptions import DeskScaleError
from .features import DENSE_GUARD


@dataclass(frozen=True)
class TTCoefficients:
    cores: tuple
    gauge: str = field(default="none", compare=False)

    def __post_init__(self):
        cores = tuple(np.ascontiguousarray(c, dtype=np.float64) for c in self.cores)
        if not cores:
            raise ValueError("a TT needs at least one core")
        q = cores[0].shape[1]
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be 3-D, got shape {c.shape}")
            if c.shape[1] != q:
                raise ValueError(f"core {k} has mode size {c.shape[1]}, expected {q}")
            if k > 0 and c.shape[0] != cores[k - 1].shape[2]:
                raise ValueError(
                    f"rank mismatch between core {k - 1} {cores[k - 1].shape} "
                    f"and core {k} {c.shape}"
                )
        if cores[-1].shape[2] != 1:
            raise ValueError(f"last core must have trailing rank 1, got {cores[-1].shape}")
        for c in cores:
            c.setflags(write=False)
        object.__setattr__(self, "cores", cores)

    @property
    def d(self):
        return len(self.cores)

    @property
    def q(self):
        return self.cores[0].shape[1]

    @property
    def l(self):
        return self.cores[0].shape[0]

    @property
    def ranks(self):
        return (self.cores[0].shape[0],) + tuple(c.shape[2] for c in self.cores)

    @property
    def n_params(self):
        return sum(c.size for c in self.cores)

    def scale(self, alpha):
        cores = list(self.cores)
        cores[0] = alpha * cores[0]
        return TTCoefficients(tuple(cores))

    def replace_cores(self, updates, gauge="none"):
        cores = list(self.cores)
        for k, c in updates.items():
            cores[k] = c
        return TTCoefficients(tuple(cores), gauge=gauge)


def zeros(q, d, l):
    return TTCoefficients(tuple(
        np.zeros((l if k == 0 else 1, q, 1)) for k in range(d)
    ))


def random_tt(q, d, l, ranks, rng, scale=1.0):
    """Gaussian cores with internal ranks ``ranks`` (length ``d - 1``)."""
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != d - 1:
        raise ValueError(f"need {d - 1} internal ranks, got {len(ranks)}")
    full = (l,) + ranks + (1,)
    cores = []
    for k in range(d):
        c = rng.standard_normal((full[k], q, full[k + 1]))
        cores.append(scale * c / np.sqrt(full[k] * q))
    return TTCoefficients(tuple(cores))


def _check_same_space(A, B):
    if A.d != B.d or A.q != B.q or A.l != B.l:
        raise ValueError(
            f"TT shapes differ: (d={A.d}, q={A.q}, l={A.l}) vs (d={B.d}, q={B.q}, l={B.l})"
        )


def tt_materialize(B, guard=DENSE_GUARD):
    """Dense ``Q x l`` coefficient matrix."""
    Q = B.q ** B.d
    if Q > guard:
        raise DeskScaleError("TT materialization", Q, guard)
    T = B.cores[0]  # (l, q, r1)
    for c in B.cores[1:]:
        T = np.tensordot(T, c, axes=([-1], [0]))
    return T.reshape(B.l, Q).T.copy()


def tt_predict(B, x):
    """Prediction for one regressor (length ``l``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (B.q,):
        raise ValueError(f"regressor length {x.shape} does not match mode size {B.q}")
    return tt_predict_batch(B, x[None, :])[0]


def tt_predict_batch(B, X):
    """Predictions ``N x l`` for the regressor rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != B.q:
        raise ValueError(f"regressors must be N x {B.q}, got {X.shape}")
    return left_interfaces(B, X, B.d)[:, :, 0]


def left_interfaces(B, X, k):
    """``M_1 ... M_k`` per sample, shape ``N x l x r_k`` (identity for k=0)."""
    N = X.shape[0]
    L = np.broadcast_to(np.eye(B.l), (N, B.l, B.l))
    for c in B.cores[:k]:
        L = _backend.chain_left(L, X, c)
    return np.asarray(L)


def right_interfaces(B, X, k):
    """``M_{k+1} ... M_d`` per sample (0-based cores ``k..d-1``), shape ``N x r_k``."""
    N = X.shape[0]
    R = np.ones((N, 1))
    for c in reversed(B.cores[k:]):
        R = _backend.chain_right(X, c, R)
    return R


def tt_inner(A, B):
    """Frobenius inner product of the represented coefficient matrices."""
    _check_same_space(A, B)
    a0, b0 = A.cores[0], B.cores[0]
    W = np.einsum("jia,jib->ab", a0, b0)
    for ca, cb in zip(A.cores[1:], B.cores[1:]):
        W = np.einsum("ab,aic,bid->cd", W, ca, cb, optimize=True)
    return float(W[0, 0])


def tt_norm(B):
    return float(np.sqrt(max(tt_inner(B, B), 0.0)))


def tt_add(A, B):
    """Exact sum; internal ranks add, boundary ranks stay ``(l, 1)``."""
    _check_same_space(A, B)
    if A.d == 1:
        return TTCoefficients((A.cores[0] + B.cores[0],))
    cores = []
    for k, (ca, cb) in enumerate(zip(A.cores, B.cores)):
        if k == 0:
            c = np.concatenate([ca, cb], axis=2)
        elif k == A.d - 1:
            c = np.concatenate([ca, cb], axis=0)
        else:
            ra, q, sa = ca.shape
            rb, _, sb = cb.shape
            c = np.zeros((ra + rb, q, sa + sb))
            c[:ra, :, :sa] = ca
            c[ra:, :, sa:] = cb
        cores.append(c)
    return TTCoefficients(tuple(cores))


def _left_qr(core):
    r, q, s = core.shape
    Qm, R = np.linalg.qr(core.reshape(r * q, s))
    return Qm.reshape(r, q, Qm.shape[1]), R


def _right_qr(core):
    r, q, s = core.shape
    Qm, R = np.linalg.qr(core.reshape(r, q * s).T)
    return Qm.T.reshape(Qm.shape[1], q, s), R.T


def move_left_orthogonal(cores, k):
    """Make core ``k`` left-orthogonal, pushing the factor into core ``k+1``."""
    Qc, R = _left_qr(cores[k])
    cores[k] = Qc
    cores[k + 1] = np.tensordot(R, cores[k + 1], axes=([1], [0]))


def move_right_orthogonal(cores, k):
    """Make core ``k`` right-orthogonal, pushing the factor into core ``k-1``."""
    Qc, L = _right_qr(cores[k])
    cores[k] = Qc
    cores[k - 1] = np.tensordot(cores[k - 1], L, axes=([2], [0]))


def orthogonalize(B, pivot):
    """Same tensor with cores ``< pivot`` left- and ``> pivot`` right-orthogonal.

    Ranks may shrink when a core has fewer rows than columns in its unfolding.
    """
    if not 0 <= pivot < B.d:
        raise ValueError(f"pivot {pivot} outside [0, {B.d})")
    cores = list(B.cores)
    for k in range(pivot):
        move_left_orthogonal(cores, k)
    for k in range(B.d - 1, pivot, -1):
        move_right_orthogonal(cores, k)
    return TTCoefficients(tuple(cores), gauge=f"center:{pivot}")


def is_left_orthogonal(core, atol=1e-10):
    r, q, s = core.shape
    m = core.reshape(r * q, s)
    return np.allclose(m.T @ m, np.eye(s), atol=atol, rtol=0)


def is_right_orthogonal(core, atol=1e-10):
    r, q, s = core.shape
    m = core.reshape(r, q * s)
    return np.allclose(m @ m.T, np.eye(r), atol=atol, rtol=0)


def _truncation_rank(sv, abs_tol, max_rank):
    # smallest rank whose discarded tail energy is within abs_tol
    tail = np.sqrt(np.cumsum((sv ** 2)[::-1]))[::-1]  # tail[i] = ||sv[i:]||
    keep = len(sv)
    for r in range(1, len(sv) + 1):
        if r == len(sv) or tail[r] <= abs_tol:
            keep = r
            break
    return max(1, min(keep, max_rank))


def tt_round(B, abs_tol=0.0, max_rank=None):
    """Standard TT rounding: right-to-left QR, then left-to-right truncated SVD.

    At every split the discarded singular values have root-sum-square at most
    ``abs_tol`` (unless ``max_rank`` forces more), every internal rank is at
    most ``max_rank``, and the result is left-orthogonal (norm in the last core).
    """
    if abs_tol < 0:
        raise ValueError("abs_tol must be non-negative")
    max_rank = np.inf if max_rank is None else max_rank
    if max_rank < 1:
        raise ValueError("max_rank must be at least 1")
    d = B.d
    if d == 1:
        return TTCoefficients(B.cores, gauge="left")
    cores = list(orthogonalize(B, 0).cores)
    for k in range(d - 1):
        r, q, s = cores[k].shape
        U, sv, Vt = np.linalg.svd(cores[k].reshape(r * q, s), full_matrices=False)
        keep = _truncation_rank(sv, abs_tol, max_rank)
        cores[k] = U[:, :keep].reshape(r, q, keep)
        SV = sv[:keep, None] * Vt[:keep]
        cores[k + 1] = np.tensordot(SV, cores[k + 1], axes=([1], [0]))
    return TTCoefficients(tuple(cores), gauge="left")


def apply_mode_mask(B, allowed):
    """Zero the mode slices where ``allowed`` is 0, in every core.

    Equivalent to multiplying ``B`` by the diagonal mask ``(x)^d diag(allowed)``.
    """
    allowed = np.asarray(allowed, dtype=np.float64)
    if allowed.shape != (B.q,):
        raise ValueError(f"mask length {allowed.shape} does not match mode size {B.q}")
    return TTCoefficients(tuple(c * allowed[None, :, None] for c in B.cores))


def restrict_modes(B, index_map):
    """Sub-TT over the mode indices ``index_map`` (inverse of :func:`embed_subset`)."""
    index_map = np.asarray(index_map, dtype=np.intp)
    return TTCoefficients(tuple(c[:, index_map, :] for c in B.cores))


def embed_subset(B_sub, index_map, q):
    """Zero-pad the cores of a subset model into the full mode size ``q``.

    ``index_map[i]`` is the full-regressor position of subset mode ``i``.
    """
    index_map = np.asarray(index_map, dtype=np.intp)
    if index_map.shape != (B_sub.q,):
        raise ValueError(
            f"index map has {index_map.shape} entries, subset model has mode size {B_sub.q}"
        )
    if len(np.unique(index_map)) != len(index_map):
        raise ValueError("index map is not injective")
    if index_map.min() < 0 or index_map.max() >= q:
        raise ValueError(f"index map entries must lie in [0, {q})")
    if index_map[0] != 0:
        raise ValueError("index map must send the constant slot to the constant slot")
    cores = []
    for c in B_sub.cores:
        full = np.zeros((c.shape[0], q, c.shape[2]))
        full[:, index_map, :] = c
        cores.append(full)
    return TTCoefficients(tuple(cores))
