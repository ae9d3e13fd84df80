"""Brute-force reference implementations over the explicit feature space.

Everything here materializes ``Q = q**d`` objects on purpose and is only
meant for small instances; it is the ground truth the TT shortcuts are
tested against.
"""
from dataclasses import dataclass
from itertools import product

import numpy as np

from .exceptions import DeskScaleError
from .features import DENSE_GUARD, GRAM_GUARD, dense_design_matrix


@dataclass(frozen=True)
class DenseModel:
    B: np.ndarray  # Q x l
    cfg: object

    def predict(self, data):
        return dense_design_matrix(data, self.cfg) @ self.B


def _guard(cfg, guard=DENSE_GUARD):
    if cfg.Q > guard:
        raise DeskScaleError("dense oracle", cfg.Q, guard)


def dense_ls_fit(data, cfg, rcond=1e-10):
    """Minimal-norm least-squares ``B`` for ``Y = U B``."""
    _guard(cfg)
    data.check(cfg)
    U = dense_design_matrix(data, cfg)
    Uu, s, Vt = np.linalg.svd(U, full_matrices=False)
    keep = s > rcond * s[0] if s[0] > 0 else np.zeros_like(s, bool)
    B = Vt[keep].T @ ((Uu[:, keep].T @ data.outputs) / s[keep][:, None])
    return DenseModel(B, cfg)


def dense_loss(data, cfg, B):
    R = data.outputs - dense_design_matrix(data, cfg) @ B
    return float(np.vdot(R, R) / data.N)


def variable_of_position(cfg):
    """Input variable of each regressor slot (-1 for the constant)."""
    var = np.full(cfg.q, -1)
    for m in range(cfg.M):
        var[1 + m * cfg.p: 1 + (m + 1) * cfg.p] = np.arange(cfg.p)
    return var


def monomial_variables(cfg):
    """For each of the Q feature positions, the set of input variables it touches."""
    _guard(cfg)
    var = variable_of_position(cfg)
    out = []
    for idx in product(range(cfg.q), repeat=cfg.d):
        out.append(frozenset(int(var[i]) for i in idx if var[i] >= 0))
    return out


def dense_mask_diag(cfg, subset):
    """0/1 diagonal of the mask: monomials built only from ``subset`` (and 1)."""
    allowed = frozenset(int(j) for j in subset)
    return np.array([float(v <= allowed) for v in monomial_variables(cfg)])


def dense_mask(model, subset):
    """Rows of ``B`` touching variables outside ``subset`` set to zero."""
    diag = dense_mask_diag(model.cfg, subset)
    return DenseModel(diag[:, None] * model.B, model.cfg)


def dense_coverage(cfg, subsets, weights):
    """Diagonal of the coverage operator ``sum_k w_k P_k``."""
    out = np.zeros(cfg.Q)
    for S, w in zip(subsets, weights):
        out += w * dense_mask_diag(cfg, S)
    return out


def dense_gram(data, cfg, guard=GRAM_GUARD):
    if cfg.Q > guard:
        raise DeskScaleError("dense Gram matrix", cfg.Q, guard)
    U = dense_design_matrix(data, cfg)
    return U.T @ U / data.N


def dense_lambda_max(data, cfg):
    return float(np.linalg.eigvalsh(dense_gram(data, cfg))[-1])


def dense_tail_norm(cfg, B, subsets, weights):
    cov = dense_coverage(cfg, subsets, weights)
    return float(np.linalg.norm((1.0 - cov)[:, None] * B))


def simplex_ls_enumerate(head_preds, Y):
    """Simplex-constrained LS weights by trying every support (``K <= 12``).

    For each nonempty support the equality-constrained problem is solved in
    closed form; feasible solutions (all weights >= 0) compete on objective.
    Returns ``(weights, objective)``.
    """
    P = np.asarray(head_preds, dtype=np.float64)
    K = P.shape[0]
    if K > 12:
        raise DeskScaleError("support enumeration", 2 ** K - 1, 2 ** 12 - 1)
    N = P.shape[1]
    Pm = P.reshape(K, -1)
    y = np.asarray(Y, dtype=np.float64).reshape(-1)
    H = Pm @ Pm.T / N
    b = Pm @ y / N
    c = float(y @ y / N)
    best_w, best_obj = None, np.inf
    for mask in range(1, 2 ** K):
        s = [k for k in range(K) if mask >> k & 1]
        m = len(s)
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = 2 * H[np.ix_(s, s)]
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        sol = np.linalg.lstsq(kkt, np.concatenate([2 * b[s], [1.0]]), rcond=None)[0]
        if np.any(sol[:m] < -1e-12):
            continue
        w = np.zeros(K)
        w[s] = np.maximum(sol[:m], 0.0)
        w /= w.sum()
        obj = float(w @ H @ w - 2 * b @ w + c)
        if obj < best_obj:
            best_w, best_obj = w, obj
    return best_w, best_obj
