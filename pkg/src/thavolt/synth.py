"""Synthetic MIMO Volterra benchmarks.

Inputs come from one of three models (independent white Gaussian, AR(1)
per channel, or a shared latent driver mixed into every channel), outputs
from a ground-truth TT model plus white Gaussian noise at a requested SNR.
Every split is simulated as its own series with zero pre-history.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._random import derive_rng
from .features import DataSet, SystemConfig, regressor_index_map, regressor_matrix
from .tt import embed_subset, random_tt, tt_add, tt_predict_batch

INPUT_MODELS = ("iid-gaussian", "ar1", "shared-latent")


def generate_inputs(N, p, model="iid-gaussian", rng=None, phi=0.0, gamma=0.0):
    """``N x p`` unit-variance inputs.

    ``ar1``: ``u_t = phi u_{t-1} + sqrt(1 - phi^2) e_t`` (stationary start).
    ``shared-latent``: ``u_t = sqrt(1 - gamma) e_t + sqrt(gamma) z_t`` with one
    scalar ``z_t`` common to all channels, so ``corr(u_i, u_j) = gamma``.
    """
    rng = np.random.default_rng() if rng is None else rng
    if model not in INPUT_MODELS:
        raise ValueError(f"unknown input model {model!r}; choose from {INPUT_MODELS}")
    e = rng.standard_normal((N, p))
    if model == "iid-gaussian":
        return e
    if model == "ar1":
        if not -1 < phi < 1:
            raise ValueError("ar1 needs |phi| < 1")
        u = np.empty_like(e)
        u[0] = e[0]
        a = math.sqrt(1 - phi * phi)
        for t in range(1, N):
            u[t] = phi * u[t - 1] + a * e[t]
        return u
    if not 0 <= gamma <= 1:
        raise ValueError("shared-latent needs gamma in [0, 1]")
    z = rng.standard_normal((N, 1))
    return math.sqrt(1 - gamma) * e + math.sqrt(gamma) * z


def ground_truth(cfg, ranks, rng, groups=None, scale=1.0):
    """Random TT truth; with ``groups`` a sum of TTs each using one input group."""
    if groups is None:
        return random_tt(cfg.q, cfg.d, cfg.l, ranks, rng, scale)
    seen = set()
    for G in groups:
        if seen & set(G):
            raise ValueError("truth groups must be disjoint")
        seen |= set(G)
    B = None
    for G in groups:
        idx = regressor_index_map(G, cfg.p, cfg.M)
        part = embed_subset(random_tt(len(idx), cfg.d, cfg.l, ranks, rng, scale), idx, cfg.q)
        B = part if B is None else tt_add(B, part)
    return B


def noise_scale(signal, snr_db):
    """Per-channel noise std for the requested SNR (mean power / 10^(snr/10))."""
    if math.isinf(snr_db) and snr_db > 0:
        return np.zeros(signal.shape[1])
    power = np.mean(signal ** 2, axis=0)
    return np.sqrt(power / 10 ** (snr_db / 10))


@dataclass
class Benchmark:
    splits: dict  # name -> DataSet
    truth: object
    noise: dict = field(default_factory=dict)  # name -> N x l noise actually added
    clean: dict = field(default_factory=dict)


def generate(cfg, sizes, ranks=(2,), input_model="iid-gaussian", snr_db=20.0, seed=0,
             phi=0.0, gamma=0.0, groups=None):
    """Simulate the splits in ``sizes`` (``{"train": N, ...}``) from one truth."""
    if not isinstance(cfg, SystemConfig):
        raise TypeError("cfg must be a SystemConfig")
    truth = ground_truth(cfg, tuple(ranks), derive_rng(seed, "truth"), groups)
    splits, noise, clean = {}, {}, {}
    for name, N in sizes.items():
        u = generate_inputs(N, cfg.p, input_model, derive_rng(seed, "inputs", name), phi, gamma)
        y0 = tt_predict_batch(truth, regressor_matrix(DataSet(u, np.zeros((N, cfg.l))), cfg))
        sd = noise_scale(y0, snr_db)
        e = derive_rng(seed, "noise", name).standard_normal(y0.shape) * sd
        splits[name] = DataSet(u, y0 + e)
        noise[name] = e
        clean[name] = y0
    return Benchmark(splits, truth, noise, clean)


def empirical_snr_db(clean, noisy):
    e = noisy - clean
    return 10 * np.log10(np.mean(clean ** 2, axis=0) / np.mean(e ** 2, axis=0))
