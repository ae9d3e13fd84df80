import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thavolt.dense import (
    DenseModel,
    dense_coverage,
    dense_lambda_max,
    dense_mask,
    dense_tail_norm,
)
from thavolt.diagnostics import (
    BakingProbeReport,
    DiagnosticsReport,
    baking_probe,
    cost_model,
    diagnose,
    error_components,
    evaluate_bounds,
    tail_norm,
    truncated_prediction,
    truncation_gaps,
)
from thavolt.ensemble import (
    Ensemble,
    Head,
    SubsetPlan,
    head_predictions,
    mode_mask,
    optimize_weights,
    select_subsets,
    train_heads,
)
from thavolt.features import SystemConfig, dense_design_matrix, regressor_index_map, regressor_matrix
from thavolt.mvmals import SolverConfig, fit
from thavolt.synth import generate
from thavolt.tt import apply_mode_mask, random_tt, restrict_modes, tt_materialize, tt_predict_batch

CFG = SystemConfig(p=3, M=2, d=2, l=2)  # q=7, Q=49


@pytest.fixture(scope="module")
def run():
    bm = generate(CFG, {"train": 300, "val": 100}, ranks=(2,), snr_db=20, seed=3)
    sol = SolverConfig(max_rank=4)
    B, _ = fit(bm.splits["train"], CFG, sol)
    plan = select_subsets(3, 3, 2, seed=3)
    heads = train_heads(bm.splits["train"], plan, CFG, sol)
    w = optimize_weights(head_predictions(heads, bm.splits["val"], CFG), bm.splits["val"].outputs)
    return bm, B, Ensemble(heads, w, plan)


def test_truncated_full_coverage(run):
    bm, B, _ = run
    data = bm.splits["train"]
    plan = SubsetPlan(((0, 1, 2),))
    np.testing.assert_allclose(truncated_prediction(B, plan, [1.0], data, CFG),
                               tt_predict_batch(B, regressor_matrix(data, CFG)), rtol=1e-14)


def test_truncated_constant_only(run):
    bm, B, _ = run
    # a subset whose variables carry no weight: use a p=3 plan with a masked copy
    masked = apply_mode_mask(B, np.eye(CFG.q)[0])
    pred = tt_predict_batch(masked, regressor_matrix(bm.splits["train"], CFG))
    np.testing.assert_allclose(pred, np.broadcast_to(tt_materialize(B)[0], pred.shape), rtol=1e-12)


def test_truncated_vs_dense(run):
    bm, B, ens = run
    data = bm.splits["train"]
    U = dense_design_matrix(data, CFG)
    cov = dense_coverage(CFG, ens.plan.subsets, ens.weights)
    expect = U @ (cov[:, None] * tt_materialize(B))
    got = truncated_prediction(B, ens.plan, ens.weights, data, CFG)
    assert np.linalg.norm(got - expect) <= 1e-9 * np.linalg.norm(expect)


def test_components_trivial():
    rng = np.random.default_rng(0)
    yf, yt = rng.standard_normal((2, 10, 2))
    bias, bake, align = error_components(yf, yt, yt)
    assert np.all(bake == 0) and align == 0
    bias, bake, align = error_components(yf, yf, yt)
    b2 = np.mean(np.sum(bias ** 2, 1))
    k2 = np.mean(np.sum(bake ** 2, 1))
    assert math.isclose(b2 + k2, 2 * align, rel_tol=1e-12)
    with pytest.raises(ValueError):
        error_components(yf, yf, yf[:5])


@given(st.integers(0, 10_000))
def test_identity_on_random_triples(seed):
    rng = np.random.default_rng(seed)
    yf, yt, yr = rng.standard_normal((3, 20, 2)) * rng.uniform(0.1, 10, 3)[:, None, None]
    rep = evaluate_bounds(yf, yt, yr, 1.0, 0.0, [0.0], [1.0])
    scale = 1 + rep.err_sq + rep.bias_sq + rep.bake_sq
    assert rep.decomposition_residual <= 1e-12 * scale


def test_gaps_zero_for_masked_head(run):
    bm, B, _ = run
    S = (0, 2)
    idx = regressor_index_map(S, 3, 2)
    head = Head(S, restrict_modes(apply_mode_mask(B, mode_mask(S, CFG)), idx), idx)
    eps = truncation_gaps([head], B, CFG, bm.splits["train"])
    assert eps[0] < 1e-12


def test_gaps_vs_dense(run):
    bm, B, ens = run
    data = bm.splits["train"]
    U = dense_design_matrix(data, CFG)
    eps = truncation_gaps(ens.heads, B, CFG, data)
    for h, e in zip(ens.heads, eps):
        Dm = dense_mask(DenseModel(tt_materialize(B), CFG), h.subset).B
        ref = np.linalg.norm(U @ tt_materialize(h.embedded(CFG.q)) - U @ Dm) / np.sqrt(data.N)
        assert math.isclose(e, ref, rel_tol=1e-9)


def test_tail_full_coverage_zero(run):
    _, B, _ = run
    assert tail_norm(B, SubsetPlan(((0, 1, 2),)), [1.0], CFG) < 1e-7 * math.sqrt(
        np.sum(tt_materialize(B) ** 2))


def test_tail_vs_dense(run):
    _, B, ens = run
    ref = dense_tail_norm(CFG, tt_materialize(B), ens.plan.subsets, ens.weights)
    assert math.isclose(tail_norm(B, ens.plan, ens.weights, CFG), ref, rel_tol=1e-9)


def test_tail_monotone_nested():
    cfg = SystemConfig(p=4, M=1, d=2, l=1)
    B = random_tt(cfg.q, 2, 1, (2,), np.random.default_rng(1))
    # each step only raises coverage: (0,) -> add (1,) keeping weight on (0,) ...
    plans = [
        (((0,),), [1.0]),
        (((0, 1),), [1.0]),
        (((0, 1, 2),), [1.0]),
        (((0, 1, 2, 3),), [1.0]),
    ]
    tails = [tail_norm(B, SubsetPlan(S), w, cfg) for S, w in plans]
    assert all(b <= a + 1e-12 for a, b in zip(tails, tails[1:]))


def test_report_relations_and_serialization(run):
    bm, B, ens = run
    rep = diagnose(B, ens, bm.splits["train"], CFG)
    assert rep.ok, rep.violations
    assert rep.bake_sq <= rep.gap_mean ** 2 * (1 + 1e-12) + 1e-15
    assert rep.gap_mean ** 2 <= rep.gap_mean_sq * (1 + 1e-12) + 1e-15
    assert math.isclose(rep.lambda_max, dense_lambda_max(bm.splits["train"], CFG), rel_tol=1e-8)
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "name,value"
    assert any(line.startswith("eps_primes.0,") for line in csv_lines)
    assert '"err_sq"' in rep.to_json()


def test_report_flags_violation():
    y = np.zeros((4, 1))
    rep = evaluate_bounds(y, y + 1.0, y, 0.0, 0.0, [0.0], [1.0])
    assert not rep.ok
    assert any("coverage bound" in v for v in rep.violations)


def test_zero_noise_full_coverage_all_zero():
    cfg = SystemConfig(p=2, M=1, d=2, l=1)
    bm = generate(cfg, {"train": 200}, ranks=(2,), snr_db=np.inf, seed=0)
    sol = SolverConfig(max_rank=5)
    B, _ = fit(bm.splits["train"], cfg, sol)
    plan = SubsetPlan(((0, 1),))
    heads = train_heads(bm.splits["train"], plan, cfg, sol)
    rep = diagnose(B, Ensemble(heads, [1.0], plan), bm.splits["train"], cfg)
    for v in (rep.err_sq, rep.bias_sq, rep.bake_sq, rep.thm3_rhs):
        assert abs(v) < 1e-20
    assert rep.thm2_rhs < 1e-9


def test_probe_additive_no_incentive():
    cfg = SystemConfig(p=4, M=1, d=2, l=1)
    bm = generate(cfg, {"train": 800}, ranks=(2,), snr_db=20, seed=2, groups=[(0, 1), (2, 3)])
    sol = SolverConfig(max_rank=6)
    B, _ = fit(bm.splits["train"], cfg, sol)
    plan = SubsetPlan(((0, 1), (2, 3)))
    rep = baking_probe(B, 0, plan, bm.splits["train"], cfg, sol, n_perm=10, seed=0,
                       true_noise=bm.noise["train"])
    assert isinstance(rep, BakingProbeReport)
    assert rep.residual_parts["decomposition_residual"] < 1e-12
    assert rep.baked_loss <= rep.proj_loss + 1e-12
    assert abs(rep.gain_zscore) <= 3
    assert not rep.incentive


def test_probe_correlated_incentive():
    cfg = SystemConfig(p=4, M=1, d=2, l=1)
    bm = generate(cfg, {"train": 800}, ranks=(2,), snr_db=20, seed=2,
                  input_model="shared-latent", gamma=0.6)
    sol = SolverConfig(max_rank=6)
    B, _ = fit(bm.splits["train"], cfg, sol)
    plan = SubsetPlan(((0, 1), (2, 3)))
    rep = baking_probe(B, 0, plan, bm.splits["train"], cfg, sol, n_perm=10, seed=0)
    assert rep.incentive
    assert rep.correlation_significant
    assert "true_noise" not in rep.residual_parts


def test_probe_errors(run):
    bm, B, ens = run
    with pytest.raises(IndexError):
        baking_probe(B, 7, ens.plan, bm.splits["train"], CFG, SolverConfig())


def test_cost_equal_at_full_subset():
    cfg = SystemConfig(p=6, M=2, d=3, l=1)
    est = cost_model(cfg, 4, 5, 1000, 1, 6, head_width="kM+1")
    assert est.full == est.tha


def test_cost_doubling_p():
    a = cost_model(SystemConfig(p=64, M=2, d=3, l=1), 4, 5, 10_000, 16, 8)
    b = cost_model(SystemConfig(p=128, M=2, d=3, l=1), 4, 5, 10_000, 16, 8)
    ratio = b.full_terms["dominant"] / a.full_terms["dominant"]
    assert abs(ratio / 2 ** 6 - 1) < 0.1


def test_cost_demo_frozen():
    est = cost_model(SystemConfig(p=64, M=2, d=3, l=1), 4, 5, 10_000, 16, 8)
    # unit-constant operation counts, frozen
    assert est.full_terms["dominant"] == 2 * 5 * 129 ** 6 * 4 ** 6
    assert est.tha_terms["dominant"] == 16 * 2 * 5 * 16 ** 6 * 4 ** 6
    assert est.tha < est.full
    assert abs(est.dominant_ratio / est.asymptotic_ratio - 1) < 0.1


def test_cost_validation():
    with pytest.raises(ValueError):
        cost_model(SystemConfig(p=4, M=1, d=2, l=1), 0, 1, 10, 1, 2)
    with pytest.raises(ValueError):
        cost_model(SystemConfig(p=4, M=1, d=2, l=1), 1, 1, 10, 1, 2, head_width="x")
