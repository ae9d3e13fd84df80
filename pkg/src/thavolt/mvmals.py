"""MVMALS: two-core alternating least squares for TT Volterra models.

Each block update merges cores ``k`` and ``k+1`` into a super-core, solves
the local least-squares problem exactly (truncated-SVD pseudoinverse), then
splits it again with a rank-revealing SVD. Every executed update records the
decomposition of its loss decrease into the untruncated least-squares gain
and the truncation loss, which are related by Pythagoras::

    realized = delta_ls - ||A (dz* - dz_trunc)||^2 / N

All losses are normalized by the sample count, ``||Y - U B||_F^2 / N``.
"""
import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._random import derive_rng
from .exceptions import GaugeError
from .features import regressor_matrix
from .tt import (
    TTCoefficients,
    is_left_orthogonal,
    is_right_orthogonal,
    left_interfaces,
    move_left_orthogonal,
    move_right_orthogonal,
    orthogonalize,
    right_interfaces,
    tt_predict_batch,
)

log = logging.getLogger(__name__)

_GAUGE_ATOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """MVMALS hyperparameters.

    ``svd_trunc`` is relative: a split keeps singular values above
    ``svd_trunc * sigma_1``, at most ``max_rank`` of them. ``ls_pinv_tol`` is
    the relative cutoff of the local pseudoinverse.
    """

    tol: float = 1e-8
    max_sweeps: int = 20
    max_rank: int = 4
    svd_trunc: float = 1e-8
    ls_pinv_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.max_rank < 1:
            raise ValueError("max_rank must be at least 1")
        if self.svd_trunc < 0:
            raise ValueError("svd_trunc must be non-negative")
        if self.ls_pinv_tol < 0:
            raise ValueError("ls_pinv_tol must be non-negative")

    def to_dict(self):
        return {
            "tol": self.tol,
            "max_sweeps": self.max_sweeps,
            "max_rank": self.max_rank,
            "svd_trunc": self.svd_trunc,
            "ls_pinv_tol": self.ls_pinv_tol,
            "seed": self.seed,
        }


@dataclass
class BlockUpdate:
    """Bookkeeping for one executed block update (losses normalized by N).

    ``loss_after`` is the loss of the attempted step, also when it was
    rejected, so the Pythagorean ledger can be checked on every update.
    """

    sweep: int
    block: int
    direction: str
    loss_before: float
    loss_after: float
    delta_ls: float
    truncation_loss: float
    accepted: bool

    @property
    def delta_realized(self):
        return self.loss_before - self.loss_after

    @property
    def ledger_residual(self):
        return abs(self.delta_realized - (self.delta_ls - self.truncation_loss))


@dataclass
class FitTrace:
    losses: list = field(default_factory=list)  # losses[0] is the initial loss
    sweep_accepted: list = field(default_factory=list)
    sweep_max_rank: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    ranks: tuple = ()
    converged: bool = False
    degenerate: bool = False

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep", "loss", "max_rank", "accepted"])
        for s, loss in enumerate(self.losses):
            if s == 0:
                w.writerow([0, repr(loss), self.sweep_max_rank[0] if self.sweep_max_rank else "", 1])
            else:
                w.writerow([s, repr(loss), self.sweep_max_rank[s], int(self.sweep_accepted[s - 1])])
        return buf.getvalue()


def loss(B, X, Y):
    R = Y - tt_predict_batch(B, X)
    return float(np.vdot(R, R) / X.shape[0])


def _block_width(d):
    return 1 if d == 1 else 2


def n_blocks(d):
    return 1 if d == 1 else d - 1


def sweep_schedule(d):
    """``(block, direction)`` pairs for one sweep: left-to-right, then back."""
    if d == 1:
        return [(0, "L")]
    fwd = [(k, "L") for k in range(d - 2)]
    back = [(k, "R") for k in range(d - 2, -1, -1)]
    return fwd + back


def _check_gauge(B, block):
    w = _block_width(B.d)
    for k in range(block):
        if not is_left_orthogonal(B.cores[k], atol=_GAUGE_ATOL):
            raise GaugeError(f"core {k} is not left-orthogonal (block {block} needs it)")
    for k in range(block + w, B.d):
        if not is_right_orthogonal(B.cores[k], atol=_GAUGE_ATOL):
            raise GaugeError(f"core {k} is not right-orthogonal (block {block} needs it)")


def supercore(B, block):
    if B.d == 1:
        return B.cores[0]
    return np.tensordot(B.cores[block], B.cores[block + 1], axes=([2], [0]))


def local_design(B, X, block, check_gauge=True):
    """Local design matrix of block ``block`` (cores ``block`` and ``block+1``).

    Rows are ``(t, j)`` (sample-major, output-minor, i.e. ``vec(Y^T)``);
    columns index the C-ordered super-core ``(a, i_1, i_2, b)``. Applying it
    to the current super-core reproduces the current predictions.
    """
    d = B.d
    if not 0 <= block < n_blocks(d):
        raise ValueError(f"block {block} outside [0, {n_blocks(d)})")
    if check_gauge:
        _check_gauge(B, block)
    X = np.asarray(X, dtype=np.float64)
    L = left_interfaces(B, X, block)
    w = _block_width(d)
    R = right_interfaces(B, X, block + w)
    Xm = X if w == 1 else _backend.row_kron(X, X)
    return _backend.local_design(L, Xm, R)


def _split(W, direction, cfg):
    ra, q1, q2, rb = W.shape
    U, s, Vt = np.linalg.svd(W.reshape(ra * q1, q2 * rb), full_matrices=False)
    if s[0] > 0:
        keep = int(np.count_nonzero(s > cfg.svd_trunc * s[0]))
    else:
        keep = 1
    keep = max(1, min(keep, cfg.max_rank))
    U, s, Vt = U[:, :keep], s[:keep], Vt[:keep]
    if direction == "L":
        ca, cb = U, s[:, None] * Vt
    else:
        ca, cb = U * s[None, :], Vt
    return ca.reshape(ra, q1, keep), cb.reshape(keep, q2, rb)


def local_system(B, X, block):
    """Local design of ``block`` and its thin SVD, ``(A, U, s, Vt)``."""
    A = local_design(B, X, block)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return A, U, s, Vt


def update_block(B, X, Y, block, cfg, direction="L", sweep=0, system=None):
    """One MVMALS block update.

    ``direction`` ``"L"`` leaves core ``block`` left-orthogonal (the sweep
    moves right), ``"R"`` leaves core ``block+1`` right-orthogonal. An update
    that would raise the loss by more than ``1e-12`` relative is rejected:
    the tensor is kept and only the orthogonality centre is moved.

    ``system`` may carry a precomputed :func:`local_system`; it is only valid
    while the interfaces of the block are unchanged (always the case for
    ``d <= 2``).

    Returns the new TT and a :class:`BlockUpdate`.
    """
    d = B.d
    N = X.shape[0]
    y = np.ascontiguousarray(Y, dtype=np.float64).reshape(-1)
    A, U, s, Vt = system if system is not None else local_system(B, X, block)
    z0 = supercore(B, block).ravel()
    r0 = y - A @ z0

    keep = s > cfg.ls_pinv_tol * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    Uk = U[:, keep]
    coef = Uk.T @ r0
    dz_star = Vt[keep].T @ (coef / s[keep])
    proj = Uk @ coef
    delta_ls = float(proj @ proj / N)
    z_star = z0 + dz_star

    if d == 1:
        new = {0: z_star.reshape(B.cores[0].shape)}
        z_trunc = z_star
    else:
        ra = B.cores[block].shape[0]
        q = B.q
        rb = B.cores[block + 1].shape[2]
        ca, cb = _split(z_star.reshape(ra, q, q, rb), direction, cfg)
        new = {block: ca, block + 1: cb}
        z_trunc = np.tensordot(ca, cb, axes=([2], [0])).ravel()
    gap = A @ (z_star - z_trunc)
    truncation_loss = float(gap @ gap / N)

    candidate = B.replace_cores(new)
    loss_before = loss(B, X, Y)
    loss_after = loss(candidate, X, Y)
    accepted = loss_after - loss_before <= 1e-12 * loss_before
    rec = BlockUpdate(
        sweep=sweep, block=block, direction=direction, loss_before=loss_before,
        loss_after=loss_after, delta_ls=delta_ls, truncation_loss=truncation_loss,
        accepted=accepted,
    )
    if accepted:
        return candidate, rec
    log.debug("block %d update rejected (loss %.3e -> %.3e)", block, loss_before, loss_after)
    if d == 1:
        return B, rec
    cores = list(B.cores)
    if direction == "L":
        move_left_orthogonal(cores, block)
    else:
        move_right_orthogonal(cores, block + 1)
    return TTCoefficients(tuple(cores)), rec


def initial_ranks(q, d, l, max_rank):
    ranks = []
    for k in range(1, d):
        ranks.append(int(min(max_rank, l * q ** k, q ** (d - k))))
    return ranks


def initialize(q, d, Y, cfg, X):
    """Seeded Gaussian cores, scaled to the output spread, centre at core 0."""
    rng = derive_rng(cfg.seed, "mvmals-init")
    l = Y.shape[1]
    full = [l] + initial_ranks(q, d, l, cfg.max_rank) + [1]
    cores = [rng.standard_normal((full[k], q, full[k + 1])) for k in range(d)]
    B = TTCoefficients(tuple(cores))
    pred = tt_predict_batch(B, X)
    sp, sy = float(np.std(pred)), float(np.std(Y))
    if sp > 0 and sy > 0:
        B = B.scale(sy / sp)
    return orthogonalize(B, 0)


def fit(data, cfg_sys, cfg=None, init=None):
    """Identify a TT Volterra model on ``data`` with MVMALS.

    Returns ``(model, trace)``. Sweeps stop when the relative change of the
    loss between consecutive sweeps drops below ``cfg.tol`` or after
    ``cfg.max_sweeps``.
    """
    cfg = cfg or SolverConfig()
    data.check(cfg_sys)
    X = regressor_matrix(data, cfg_sys)
    return fit_regressors(X, data.outputs, cfg_sys.d, cfg, init=init)


def fit_regressors(X, Y, d, cfg, init=None):
    """:func:`fit` on precomputed regressors ``X`` (``N x q``)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    q = X.shape[1]
    trace = FitTrace()
    if not np.any(Y):
        warnings.warn("all outputs are zero; returning the zero model", RuntimeWarning)
        B = TTCoefficients(tuple(
            np.zeros((Y.shape[1] if k == 0 else 1, q, 1)) for k in range(d)
        ))
        trace.losses = [0.0]
        trace.sweep_max_rank = [1]
        trace.ranks = B.ranks
        trace.degenerate = True
        trace.converged = True
        return B, trace

    if init is None:
        B = initialize(q, d, Y, cfg, X)
    else:
        if init.q != q or init.d != d or init.l != Y.shape[1]:
            raise ValueError("initial model does not match the data / system")
        B = orthogonalize(init, 0)

    prev = loss(B, X, Y)
    trace.losses.append(prev)
    trace.sweep_max_rank.append(max(B.ranks[1:-1], default=1))
    schedule = sweep_schedule(d)
    # with a single block the interfaces are trivial and the design is fixed
    system = local_system(B, X, 0) if d <= 2 else None
    for sweep in range(1, cfg.max_sweeps + 1):
        all_ok = True
        for block, direction in schedule:
            B, rec = update_block(B, X, Y, block, cfg, direction=direction, sweep=sweep,
                                  system=system)
            trace.updates.append(rec)
            all_ok &= rec.accepted
        cur = loss(B, X, Y)
        trace.losses.append(cur)
        trace.sweep_accepted.append(all_ok)
        trace.sweep_max_rank.append(max(B.ranks[1:-1], default=1))
        if prev == 0.0 or abs(prev - cur) < cfg.tol * prev:
            trace.converged = True
            break
        prev = cur
    trace.ranks = B.ranks
    return B, trace


def block_gradients(B, X, Y):
    """Gradient of the normalized loss w.r.t. each super-core.

    The TT is brought to the orthogonal gauge of each block first; the
    gradient is ``-(2/N) A^T r`` reshaped to the super-core shape.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.ascontiguousarray(Y, dtype=np.float64).reshape(-1)
    N = X.shape[0]
    grads = []
    for block in range(n_blocks(B.d)):
        Bg = orthogonalize(B, block)
        A = local_design(Bg, X, block)
        W = supercore(Bg, block)
        r = y - A @ W.ravel()
        grads.append((Bg, (-2.0 / N) * (A.T @ r).reshape(W.shape)))
    return grads


def block_gradient_norms(B, X, Y):
    """Per-block gradient norms ``||(2/N) A_i^T r||``."""
    return np.array([float(np.linalg.norm(g)) for _, g in block_gradients(B, X, Y)])
