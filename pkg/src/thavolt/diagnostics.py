"""Observable error decomposition of a THA ensemble against the full model.

With ``Yfull = U B*``, ``Ytrunc = U C_w B*`` and ``Ytha`` the ensemble
prediction::

    bias  = Ytrunc - Yfull          bake  = Ytha - Ytrunc
    align = <bake, -bias>_{F,N}

    ||Ytha - Yfull||^2 = ||bias||^2 + ||bake||^2 - 2 align          (identity)
    ||Ytha - Yfull||   <= sqrt(lmax(G)) ||T||_F + sqrt(sum w_k eps_k^2)
    ||Ytha - Yfull||^2 <= ||bias||^2 + sum w_k eps_k^2 - 2 align

where ``T = (I - C_w) B*`` and ``eps_k`` is the empirical distance between
head ``k`` and the masked full model. Everything is computed with TT
contractions and the ``N x N`` kernel matrix, never with ``Q``-sized arrays.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ensemble import mode_mask
from .features import (
    DENSE_GUARD,
    empirical_inner,
    empirical_norm,
    gram_lambda_max,
    regressor_index_map,
    regressor_matrix,
)
from .mvmals import block_gradient_norms, fit_regressors
from .tt import apply_mode_mask, restrict_modes, tt_inner, tt_norm, tt_predict_batch, tt_round
from ._random import derive_rng
from . import _backend

THM1_TOL = 1e-9
THM2_TOL = 1e-9
THM3_TOL = 1e-9
JENSEN_TOL = 1e-12


def _flat_rows(d, prefix=""):
    rows = []
    for k, v in d.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flat_rows(v, name + "."))
        elif isinstance(v, (list, tuple)):
            for i, x in enumerate(v):
                if isinstance(x, (list, tuple)):
                    rows.append((f"{name}.{i}", " ".join(str(e) for e in x)))
                else:
                    rows.append((f"{name}.{i}", _fmt(x)))
        else:
            rows.append((name, _fmt(v)))
    return rows


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Report:
    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value"])
        for name, value in _flat_rows(self.to_dict()):
            w.writerow([name, value])
        return buf.getvalue()


@dataclass
class DiagnosticsReport(_Report):
    err_sq: float
    bias_sq: float
    bake_sq: float
    align: float
    eps_primes: list
    weights: list
    tail_norm: float
    lambda_max: float
    thm2_lhs: float
    thm2_rhs: float
    thm3_rhs: float
    gap_mean_sq: float  # sum_k w_k eps_k^2
    gap_mean: float  # sum_k w_k eps_k
    decomposition_residual: float
    thm3_tighter_than_thm2_sq: bool
    align_positive: bool
    dataset: str = "train"
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


# --- predictions and components -------------------------------------------------


def truncated_prediction(B_star, plan, weights, data, cfg_sys):
    """``U C_w B*`` as ``sum_k w_k U P_k B*`` with per-core slice masks."""
    X = regressor_matrix(data, cfg_sys)
    return _truncated_from_X(B_star, plan, weights, X, cfg_sys)


def _truncated_from_X(B_star, plan, weights, X, cfg_sys):
    out = np.zeros((X.shape[0], B_star.l))
    for S, w in zip(plan.subsets, weights):
        out += w * tt_predict_batch(apply_mode_mask(B_star, mode_mask(S, cfg_sys)), X)
    return out


def error_components(Y_full, Y_tha, Y_trunc):
    """``(bias, bake, align)``; ``align = <bake, -bias>_{F,N}``."""
    Y_full, Y_tha, Y_trunc = (np.asarray(a, dtype=np.float64) for a in (Y_full, Y_tha, Y_trunc))
    if not Y_full.shape == Y_tha.shape == Y_trunc.shape:
        raise ValueError(
            f"shape mismatch: {Y_full.shape}, {Y_tha.shape}, {Y_trunc.shape}"
        )
    bias = Y_trunc - Y_full
    bake = Y_tha - Y_trunc
    return bias, bake, empirical_inner(bake, -bias)


def truncation_gaps(heads, B_star, cfg_sys, data):
    """``eps_k = ||U B_k - U P_k B*||_{F,N}`` for every head."""
    X = regressor_matrix(data, cfg_sys)
    return _gaps_from_X(heads, B_star, cfg_sys, X)


def _gaps_from_X(heads, B_star, cfg_sys, X):
    eps = []
    for h in heads:
        masked = apply_mode_mask(B_star, mode_mask(h.subset, cfg_sys))
        eps.append(empirical_norm(h.predict(X) - tt_predict_batch(masked, X)))
    return np.array(eps)


def tail_norm(B_star, plan, weights, cfg_sys):
    """``||(I - C_w) B*||_F`` from TT inner products of the masked models.

    With ``c = (1, -w_1, ..., -w_K)`` and ``P_0 = I``:
    ``||T||^2 = sum_{a,b} c_a c_b <P_a B*, P_b B*>``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    parts = [B_star] + [apply_mode_mask(B_star, mode_mask(S, cfg_sys)) for S in plan.subsets]
    coef = np.concatenate([[1.0], -weights])
    n = len(parts)
    G = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            G[a, b] = G[b, a] = tt_inner(parts[a], parts[b])
    terms = [coef[a] * coef[b] * G[a, b] for a in range(n) for b in range(n)]
    return math.sqrt(max(math.fsum(terms), 0.0))


def evaluate_bounds(Y_full, Y_tha, Y_trunc, lambda_max, tail, eps_primes, weights,
                    dataset="train"):
    """Fill a :class:`DiagnosticsReport` and record any violated relation."""
    bias, bake, align = error_components(Y_full, Y_tha, Y_trunc)
    eps = np.asarray(eps_primes, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    err_sq = empirical_norm(Y_tha - Y_full) ** 2
    bias_sq = empirical_norm(bias) ** 2
    bake_sq = empirical_norm(bake) ** 2
    gap_mean_sq = float(w @ eps ** 2)
    gap_mean = float(w @ eps)
    resid = abs(err_sq - (bias_sq + bake_sq - 2 * align))
    thm2_lhs = math.sqrt(err_sq)
    thm2_rhs = math.sqrt(max(lambda_max, 0.0)) * tail + math.sqrt(gap_mean_sq)
    thm3_rhs = bias_sq + gap_mean_sq - 2 * align

    violations = []
    if resid > THM1_TOL * (1 + err_sq):
        violations.append(f"decomposition residual {resid:.3e} exceeds {THM1_TOL}*(1+err_sq)")
    if thm2_lhs > thm2_rhs + THM2_TOL:
        violations.append(f"coverage bound: {thm2_lhs:.6e} > {thm2_rhs:.6e}")
    if err_sq > thm3_rhs + THM3_TOL:
        violations.append(f"baking bound: {err_sq:.6e} > {thm3_rhs:.6e}")
    if bake_sq > gap_mean_sq + JENSEN_TOL * (1 + gap_mean_sq):
        violations.append(f"gap chain: {bake_sq:.6e} > {gap_mean_sq:.6e}")

    return DiagnosticsReport(
        err_sq=err_sq, bias_sq=bias_sq, bake_sq=bake_sq, align=align,
        eps_primes=[float(e) for e in eps], weights=[float(x) for x in w],
        tail_norm=float(tail), lambda_max=float(lambda_max), thm2_lhs=thm2_lhs,
        thm2_rhs=thm2_rhs, thm3_rhs=thm3_rhs, gap_mean_sq=gap_mean_sq, gap_mean=gap_mean,
        decomposition_residual=resid,
        thm3_tighter_than_thm2_sq=bool(thm3_rhs < thm2_rhs ** 2),
        align_positive=bool(align > 0), dataset=dataset, violations=violations,
    )


def diagnose(B_star, ensemble, data, cfg_sys, dataset="train", lambda_tol=1e-12):
    """Full report for ``ensemble`` against the full model ``B_star`` on ``data``."""
    data.check(cfg_sys)
    X = regressor_matrix(data, cfg_sys)
    Y_full = tt_predict_batch(B_star, X)
    Y_tha = np.tensordot(ensemble.weights, np.stack([h.predict(X) for h in ensemble.heads]),
                         axes=1)
    Y_trunc = _truncated_from_X(B_star, ensemble.plan, ensemble.weights, X, cfg_sys)
    eps = _gaps_from_X(ensemble.heads, B_star, cfg_sys, X)
    tail = tail_norm(B_star, ensemble.plan, ensemble.weights, cfg_sys)
    lam = gram_lambda_max(data, cfg_sys, tol=lambda_tol)
    return evaluate_bounds(Y_full, Y_tha, Y_trunc, lam, tail, eps, ensemble.weights,
                           dataset=dataset)


# --- baking probe --------------------------------------------------------------


@dataclass
class BakingProbeReport(_Report):
    head_index: int
    subset: list
    proj_loss: float
    baked_loss: float
    baking_gain: float
    grad_norms_proj: list
    grad_norms_baked: list
    stationarity_level: float
    gradient_ratio: float
    correlation_norm: float
    correlation_perm_q95: float
    correlation_significant: bool
    perm_gain_mean: float
    perm_gain_std: float
    gain_zscore: float
    residual_parts: dict
    gradient_incentive: bool
    loss_incentive: bool
    significant_baking: bool
    proj_ranks: list
    baked_sweeps: int

    @property
    def incentive(self):
        return self.gradient_incentive and self.loss_incentive and self.significant_baking


def _subset_features(Xk, d, guard):
    if Xk.shape[1] ** d > guard:
        return None
    U = np.ones((Xk.shape[0], 1))
    for _ in range(d):
        U = _backend.row_kron(U, Xk)
    return U


def baking_probe(B_star, head_index, plan, data, cfg_sys, cfg_solver, n_perm=20, seed=0,
                 true_noise=None, gradient_factor=10.0, guard=DENSE_GUARD):
    """Probe the optimization incentive of one head to move off the truncation.

    ``B_proj`` is the masked full model restricted to the subset's modes and
    TT-rounded to the solver's rank budget. The residual at ``B_proj`` is
    split exactly into ``E = Y - U B*`` (what the full model leaves),
    ``R_omitted = U B* - U P_k B*`` and ``R_proj_err = U P_k B* - U_k B_proj``.
    The head solver is then run from ``B_proj``; its gain is compared with
    ``n_perm`` reruns in which the rows of ``R_omitted`` are shuffled, which
    destroys its correlation with the included features.
    """
    if cfg_solver.max_rank < 1:
        raise ValueError("rank budget must be at least 1")
    if not 0 <= head_index < plan.K:
        raise IndexError(f"head index {head_index} outside [0, {plan.K})")
    data.check(cfg_sys)
    S = plan.subsets[head_index]
    X = regressor_matrix(data, cfg_sys)
    Y = data.outputs
    N = data.N
    idx = regressor_index_map(S, cfg_sys.p, cfg_sys.M)
    Xk = X[:, idx]

    masked = apply_mode_mask(B_star, mode_mask(S, cfg_sys))
    sub = restrict_modes(masked, idx)
    B_proj = tt_round(sub, abs_tol=cfg_solver.svd_trunc * tt_norm(sub),
                      max_rank=cfg_solver.max_rank)

    Y_full = tt_predict_batch(B_star, X)
    Y_masked = tt_predict_batch(masked, X)
    Y_proj = tt_predict_batch(B_proj, Xk)
    E = Y - Y_full
    R_om = Y_full - Y_masked
    R_pe = Y_masked - Y_proj
    R0 = Y - Y_proj
    parts = {
        "noise": empirical_norm(E),
        "omitted": empirical_norm(R_om),
        "proj_err": empirical_norm(R_pe),
        "residual": empirical_norm(R0),
        "decomposition_residual": float(np.max(np.abs(R0 - (E + R_om + R_pe)))),
    }
    if true_noise is not None:
        parts["true_noise"] = empirical_norm(true_noise)

    proj_loss = float(np.vdot(R0, R0) / N)
    grads_proj = block_gradient_norms(B_proj, Xk, Y)
    B_baked, trace = fit_regressors(Xk, Y, cfg_sys.d, cfg_solver, init=B_proj)
    baked_loss = trace.losses[-1]
    grads_baked = block_gradient_norms(B_baked, Xk, Y)
    gain = proj_loss - baked_loss

    floor = math.sqrt(cfg_solver.tol) * empirical_norm(Y)
    level = max(float(grads_baked.max()), floor)
    ratio = float(grads_proj.max()) / level

    Uk = _subset_features(Xk, cfg_sys.d, guard)
    rng = derive_rng(seed, "probe", head_index)
    perms = [rng.permutation(N) for _ in range(n_perm)]
    if Uk is not None:
        c_norm = float(np.linalg.norm(Uk.T @ R_om))
        c_perm = [float(np.linalg.norm(Uk.T @ R_om[pi])) for pi in perms]
        c_q95 = float(np.quantile(c_perm, 0.95)) if c_perm else math.nan
    else:
        c_norm, c_q95 = math.nan, math.nan

    perm_gains = []
    for pi in perms:
        Yp = Y - R_om + R_om[pi]
        Rp = Yp - Y_proj
        pl = float(np.vdot(Rp, Rp) / N)
        _, tr = fit_regressors(Xk, Yp, cfg_sys.d, cfg_solver, init=B_proj)
        perm_gains.append(pl - tr.losses[-1])
    if perm_gains:
        g_mean = float(np.mean(perm_gains))
        g_std = float(np.std(perm_gains, ddof=1)) if n_perm > 1 else 0.0
    else:
        g_mean, g_std = math.nan, math.nan
    z = (gain - g_mean) / g_std if g_std > 0 else (math.inf if gain > g_mean else 0.0)

    return BakingProbeReport(
        head_index=head_index, subset=list(S), proj_loss=proj_loss, baked_loss=baked_loss,
        baking_gain=gain, grad_norms_proj=[float(g) for g in grads_proj],
        grad_norms_baked=[float(g) for g in grads_baked], stationarity_level=level,
        gradient_ratio=ratio, correlation_norm=c_norm, correlation_perm_q95=c_q95,
        correlation_significant=bool(c_norm > c_q95), perm_gain_mean=g_mean,
        perm_gain_std=g_std, gain_zscore=float(z), residual_parts=parts,
        gradient_incentive=bool(ratio >= gradient_factor),
        loss_incentive=bool(baked_loss < proj_loss),
        significant_baking=bool(z > 3.0), proj_ranks=list(B_proj.ranks),
        baked_sweeps=len(trace.losses) - 1,
    )


# --- cost model ----------------------------------------------------------------


@dataclass
class CostEstimate(_Report):
    full: float
    tha: float
    full_terms: dict
    tha_terms: dict
    ratio: float
    dominant_ratio: float
    asymptotic_ratio: float


def mvmals_cost_terms(m, rho, s, d, N, l):
    """Unit-constant terms of ``s (d-1) [N l m^4 rho^4 + m^6 rho^6 + m^3 rho^3]``."""
    blocks = max(d - 1, 1)
    pre = s * blocks
    return {
        "ls": pre * N * l * m ** 4 * rho ** 4,
        "dominant": pre * m ** 6 * rho ** 6,
        "svd": pre * m ** 3 * rho ** 3,
    }


def cost_model(cfg_sys, rho, s, N, K, k, rho_max=None, s_max=None, head_width="kM"):
    """Flop estimates for the full MVMALS fit and for a THA ensemble.

    The full model uses ``m = pM + 1``. Heads use ``m = kM`` (``head_width``
    ``"kM"``, the asymptotic form) or ``m = kM + 1`` (``"kM+1"``, exact
    augmented width, which makes ``k = p, K = 1`` reproduce the full cost).
    These are operation-count estimates with unit constants, not timings.
    """
    rho_max = rho if rho_max is None else rho_max
    s_max = s if s_max is None else s_max
    for name, v in (("rho", rho), ("s", s), ("N", N), ("K", K), ("k", k),
                    ("rho_max", rho_max), ("s_max", s_max)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if head_width not in ("kM", "kM+1"):
        raise ValueError("head_width must be 'kM' or 'kM+1'")
    M, d, l = cfg_sys.M, cfg_sys.d, cfg_sys.l
    m = cfg_sys.p * M + 1
    mk = k * M + (1 if head_width == "kM+1" else 0)
    full_terms = mvmals_cost_terms(m, rho, s, d, N, l)
    head_terms = mvmals_cost_terms(mk, rho_max, s_max, d, N, l)
    tha_terms = {key: K * v for key, v in head_terms.items()}
    full = float(sum(full_terms.values()))
    tha = float(sum(tha_terms.values()))
    return CostEstimate(
        full=full, tha=tha, full_terms={k_: float(v) for k_, v in full_terms.items()},
        tha_terms={k_: float(v) for k_, v in tha_terms.items()}, ratio=tha / full,
        dominant_ratio=tha_terms["dominant"] / full_terms["dominant"],
        asymptotic_ratio=K * (k / cfg_sys.p) ** 6,
    )
