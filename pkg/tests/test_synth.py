import numpy as np
import pytest

from thavolt.features import SystemConfig, regressor_matrix
from thavolt.synth import empirical_snr_db, generate, generate_inputs, ground_truth
from thavolt.tt import tt_materialize, tt_predict_batch

CFG = SystemConfig(p=3, M=2, d=2, l=2)


def test_infinite_snr_is_noiseless():
    bm = generate(CFG, {"train": 50}, snr_db=np.inf, seed=1)
    d = bm.splits["train"]
    np.testing.assert_array_equal(d.outputs, tt_predict_batch(bm.truth, regressor_matrix(d, CFG)))


def test_ar1_zero_is_iid():
    a = generate_inputs(100, 3, "iid-gaussian", np.random.default_rng(5))
    b = generate_inputs(100, 3, "ar1", np.random.default_rng(5), phi=0.0)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("snr", [0.0, 10.0, 20.0])
def test_empirical_snr(snr):
    bm = generate(CFG, {"train": 10_000}, snr_db=snr, seed=2)
    lin = 10 ** (empirical_snr_db(bm.clean["train"], bm.splits["train"].outputs) / 10)
    assert np.all(np.abs(lin / 10 ** (snr / 10) - 1) < 0.1)


def test_shared_latent_correlation():
    u = generate_inputs(20_000, 4, "shared-latent", np.random.default_rng(0), gamma=0.5)
    C = np.corrcoef(u.T)
    assert np.allclose(C[np.triu_indices(4, 1)], 0.5, atol=0.03)


def test_ar1_autocorrelation():
    u = generate_inputs(20_000, 1, "ar1", np.random.default_rng(0), phi=0.7)[:, 0]
    assert abs(np.corrcoef(u[1:], u[:-1])[0, 1] - 0.7) < 0.03


def test_groups_are_additive():
    B = ground_truth(CFG, (2,), np.random.default_rng(0), groups=[(0,), (1, 2)])
    grid = tt_materialize(B)[:, 0].reshape(CFG.q, CFG.q)
    g0 = [1, 4]  # positions of input 0 at lags 0 and 1
    g1 = [2, 3, 5, 6]
    assert np.all(grid[np.ix_(g0, g1)] == 0) and np.all(grid[np.ix_(g1, g0)] == 0)
    with pytest.raises(ValueError):
        ground_truth(CFG, (2,), np.random.default_rng(0), groups=[(0, 1), (1, 2)])


def test_splits_independent_and_reproducible():
    a = generate(CFG, {"train": 30, "val": 30}, seed=4)
    b = generate(CFG, {"train": 30, "val": 30}, seed=4)
    np.testing.assert_array_equal(a.splits["val"].outputs, b.splits["val"].outputs)
    assert not np.array_equal(a.splits["train"].inputs, a.splits["val"].inputs)


def test_bad_input_model():
    with pytest.raises(ValueError):
        generate_inputs(5, 2, "pink")
    with pytest.raises(ValueError):
        generate_inputs(5, 2, "ar1", phi=1.0)
