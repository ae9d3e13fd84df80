"""Tensor Head Averaging: subset heads, simplex weights, coverage.

A head is an MVMALS model trained on the inputs of one subset ``S_k`` only.
Its restricted regressor is ``x_full[index_map]``, so embedding the head
into the full mode size is just zero-padding of the core slices.
"""
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._random import derive_rng
from .exceptions import ConvergenceError, DeskScaleError
from .features import DENSE_GUARD, kronecker_power, regressor_index_map, regressor_matrix
from .mvmals import fit_regressors
from .tt import embed_subset, tt_predict_batch

log = logging.getLogger(__name__)

STRATEGIES = ("uniform-random", "balanced-coverage", "explicit")


@dataclass(frozen=True)
class SubsetPlan:
    """``K`` distinct input subsets (0-based indices, each stored sorted)."""

    subsets: tuple
    strategy: str = "explicit"
    seed: int = 0

    def __post_init__(self):
        subsets = tuple(tuple(sorted(int(j) for j in S)) for S in self.subsets)
        if not subsets:
            raise ValueError("a plan needs at least one subset")
        for S in subsets:
            if not S:
                raise ValueError("subsets must be nonempty")
            if len(set(S)) != len(S):
                raise ValueError(f"subset {S} repeats an index")
        if len(set(subsets)) != len(subsets):
            raise ValueError("duplicate subsets in plan")
        object.__setattr__(self, "subsets", subsets)

    @property
    def K(self):
        return len(self.subsets)

    def validate(self, p):
        for S in self.subsets:
            if min(S) < 0 or max(S) >= p:
                raise ValueError(f"subset {S} has indices outside [0, {p})")
        return self

    def to_dict(self):
        return {"subsets": [list(S) for S in self.subsets], "strategy": self.strategy,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(S) for S in d["subsets"]), d.get("strategy", "explicit"),
                   d.get("seed", 0))


def _balanced_key(S, counts):
    after = counts.copy()
    after[list(S)] += 1
    return (int(after.max()), int(counts[list(S)].sum()), S)


def select_subsets(p, K, k, strategy="uniform-random", seed=0, subsets=None):
    """Choose ``K`` distinct ``k``-subsets of ``range(p)``.

    ``uniform-random`` samples without replacement among all ``k``-subsets.
    ``balanced-coverage`` adds, one at a time, the subset that minimizes the
    largest variable multiplicity, then the multiplicity it adds, then
    lexicographic order. ``explicit`` validates ``subsets``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy == "explicit":
        if subsets is None:
            raise ValueError("explicit strategy needs subsets")
        return SubsetPlan(tuple(subsets), "explicit", seed).validate(p)
    if not 1 <= k <= p:
        raise ValueError(f"subset size must be in [1, {p}], got {k}")
    n_total = math.comb(p, k)
    if K < 1 or K > n_total:
        raise ValueError(f"cannot pick K={K} distinct {k}-subsets of {p} inputs ({n_total} exist)")

    if strategy == "uniform-random":
        rng = derive_rng(seed, "subsets", p, k)
        if n_total <= 200_000:
            allc = list(combinations(range(p), k))
            picks = rng.choice(n_total, size=K, replace=False)
            chosen = [allc[i] for i in picks]
        else:
            seen, chosen = set(), []
            while len(chosen) < K:
                S = tuple(sorted(int(j) for j in rng.choice(p, size=k, replace=False)))
                if S not in seen:
                    seen.add(S)
                    chosen.append(S)
        return SubsetPlan(tuple(chosen), strategy, seed)

    counts = np.zeros(p, dtype=int)
    chosen = []
    for _ in range(K):
        order = sorted(range(p), key=lambda j: (counts[j], j))
        S = tuple(sorted(order[:k]))
        if S in chosen:
            if n_total > 1_000_000:
                raise ValueError("balanced selection ran into a duplicate on a huge subset space")
            S = min((c for c in combinations(range(p), k) if c not in chosen),
                    key=lambda c: _balanced_key(c, counts))
        chosen.append(S)
        counts[list(S)] += 1
    return SubsetPlan(tuple(chosen), strategy, seed)


@dataclass
class Head:
    subset: tuple
    model: object  # TTCoefficients over q_k = |S| * M + 1
    index_map: np.ndarray
    trace: object = field(default=None, repr=False, compare=False)

    def restricted_regressors(self, X_full):
        return X_full[:, self.index_map]

    def predict(self, X_full):
        return tt_predict_batch(self.model, self.restricted_regressors(X_full))

    def embedded(self, q):
        return embed_subset(self.model, self.index_map, q)


@dataclass
class Ensemble:
    heads: list
    weights: np.ndarray
    plan: SubsetPlan = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.heads),):
            raise ValueError(f"need {len(self.heads)} weights, got {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")
        self.weights = w
        if self.plan is None:
            self.plan = SubsetPlan(tuple(h.subset for h in self.heads))


def _train_one(k, S, X_full, Y, cfg_sys, cfg_solver):
    idx = regressor_index_map(S, cfg_sys.p, cfg_sys.M)
    model, trace = fit_regressors(X_full[:, idx], Y, cfg_sys.d, cfg_solver)
    return Head(tuple(S), model, idx, trace)


def train_heads(data, plan, cfg_sys, cfg_solver, jobs=1):
    """Fit one MVMALS head per subset (all with the full outputs as targets).

    Heads are independent, so ``jobs > 1`` trains them concurrently; results
    do not depend on ``jobs``. A head whose solver fails is dropped with a
    warning.
    """
    plan.validate(cfg_sys.p)
    data.check(cfg_sys)
    X = regressor_matrix(data, cfg_sys)
    Y = data.outputs

    def run(k):
        try:
            return _train_one(k, plan.subsets[k], X, Y, cfg_sys, cfg_solver)
        except (np.linalg.LinAlgError, ConvergenceError, FloatingPointError, ValueError) as exc:
            warnings.warn(f"head {k} (subset {plan.subsets[k]}) failed and is dropped: {exc}",
                          RuntimeWarning)
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            heads = list(pool.map(run, range(plan.K)))
    else:
        heads = [run(k) for k in range(plan.K)]
    heads = [h for h in heads if h is not None]
    if not heads:
        raise RuntimeError("every head failed to train")
    return heads


def head_predictions(heads, data, cfg_sys):
    """Stack of head predictions, shape ``K x N x l``."""
    X = regressor_matrix(data, cfg_sys)
    out = np.stack([h.predict(X) for h in heads])
    if out.shape[2] != data.l:
        raise ValueError(f"heads predict {out.shape[2]} outputs, data has {data.l}")
    return out


def project_simplex(v):
    """Euclidean projection onto ``{w >= 0, sum w = 1}``."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = ind[u - css / ind > 0][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _support_solve(H, b, support):
    # minimize w^T H w - 2 b^T w on the support, sum w = 1 (min-norm KKT solution)
    s = np.flatnonzero(support)
    m = len(s)
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2 * H[np.ix_(s, s)]
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([2 * b[s], [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    w = np.zeros(len(b))
    w[s] = sol[:m]
    return w


@dataclass
class WeightFit:
    weights: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


def optimize_weights(head_preds, Y_val, max_iter=200_000, polish_every=50, return_info=False):
    """Simplex-constrained least squares for the head weights.

    Minimizes ``||Y_val - sum_k w_k Yhat_k||_F^2 / N`` over the probability
    simplex by projected gradient (exact Euclidean projection, step
    ``1/Lipschitz``) from the uniform start. Every ``polish_every``
    iterations the KKT system on the current support is solved exactly; a
    polished point is kept when it is feasible and certified. Certification:
    gradient-mapping norm ``<= 1e-8 * (1 + ||g||)``.
    """
    P = np.asarray(head_preds, dtype=np.float64)
    Y_val = np.asarray(Y_val, dtype=np.float64)
    K = P.shape[0]
    if K < 1:
        raise ValueError("need at least one head")
    if P.shape[1:] != Y_val.shape:
        raise ValueError(f"head predictions {P.shape[1:]} do not match targets {Y_val.shape}")
    N = Y_val.shape[0]
    Pm = P.reshape(K, -1)
    y = Y_val.reshape(-1)
    H = Pm @ Pm.T / N
    b = Pm @ y / N
    c = float(y @ y / N)

    def objective(w):
        return float(w @ H @ w - 2 * b @ w + c)

    def grad(w):
        return 2 * (H @ w - b)

    def kkt(w, L):
        g = grad(w)
        gm = L * (w - project_simplex(w - g / L))
        return float(np.linalg.norm(gm)), float(np.linalg.norm(g))

    def done(w, it):
        w = np.maximum(w, 0.0)
        w = w / w.sum()
        info = WeightFit(w, objective(w), kkt(w, Lip)[0], it)
        return info if return_info else w

    if K == 1:
        Lip = 1.0
        return done(np.ones(1), 0)
    Lip = max(2 * float(np.linalg.eigvalsh(H)[-1]), 1e-300)
    w = np.full(K, 1.0 / K)
    best = w
    for it in range(1, max_iter + 1):
        res, gnorm = kkt(w, Lip)
        if res <= 1e-8 * (1 + gnorm):
            return done(w, it)
        if it % polish_every == 1:
            cand = _support_solve(H, b, w > 1e-12)
            if np.all(cand >= -1e-14):
                cand = np.maximum(cand, 0.0)
                cand /= cand.sum()
                r2, g2 = kkt(cand, Lip)
                if r2 <= 1e-8 * (1 + g2) and objective(cand) <= objective(w) + 1e-15:
                    return done(cand, it)
        w = project_simplex(w - grad(w) / Lip)
        if objective(w) < objective(best):
            best = w
    raise ConvergenceError("weight optimization did not reach the KKT tolerance", last=best,
                           residual=kkt(best, Lip)[0])


def tha_predict(ensemble, data, cfg_sys):
    """Weighted sum of head predictions, ``N x l``."""
    preds = head_predictions(ensemble.heads, data, cfg_sys)
    return np.tensordot(ensemble.weights, preds, axes=1)


def mode_mask(subset, cfg_sys):
    """Per-mode 0/1 mask of the full regressor for ``subset`` (constant kept)."""
    allowed = np.zeros(cfg_sys.q)
    allowed[regressor_index_map(subset, cfg_sys.p, cfg_sys.M)] = 1.0
    return allowed


@dataclass(frozen=True)
class Coverage:
    """``C_w = sum_k w_k P_k`` kept in factored form (one mode mask per head)."""

    masks: np.ndarray  # K x q
    weights: np.ndarray  # K
    d: int

    def dense_diag(self, guard=DENSE_GUARD):
        q = self.masks.shape[1]
        if q ** self.d > guard:
            raise DeskScaleError("dense coverage diagonal", q ** self.d, guard)
        out = np.zeros(q ** self.d)
        for a, w in zip(self.masks, self.weights):
            out += w * kronecker_power(a, self.d)
        return out


def coverage_diag(plan, weights, cfg_sys):
    plan.validate(cfg_sys.p)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (plan.K,):
        raise ValueError(f"need {plan.K} weights, got {weights.shape}")
    masks = np.stack([mode_mask(S, cfg_sys) for S in plan.subsets])
    return Coverage(masks, weights, cfg_sys.d)
