import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from thavolt.dense import dense_lambda_max
from thavolt.exceptions import ConvergenceError, DeskScaleError
from thavolt.features import (
    DataSet,
    SystemConfig,
    build_regressor,
    dense_design_matrix,
    empirical_inner,
    empirical_norm,
    feature_inner,
    gram_lambda_max,
    kernel_matrix,
    kronecker_power,
    power_iteration,
    regressor_index_map,
    regressor_matrix,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _data(u, l=1):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return DataSet(u, np.zeros((u.shape[0], l)))


def test_regressor_layout():
    cfg = SystemConfig(p=2, M=1, d=1, l=1)
    assert build_regressor(_data([[3, -1]]), cfg, 0).tolist() == [1, 3, -1]


def test_regressor_zero_prehistory():
    cfg = SystemConfig(p=1, M=2, d=1, l=1)
    assert build_regressor(_data([[5]]), cfg, 0).tolist() == [1, 5, 0]


def test_regressor_two_lags():
    cfg = SystemConfig(p=2, M=2, d=1, l=1)
    x = build_regressor(_data([[3, 4], [1, 2]]), cfg, 1)
    assert x.tolist() == [1, 1, 2, 3, 4]


def test_regressor_matrix_matches_rows(rng):
    cfg = SystemConfig(p=3, M=3, d=1, l=1)
    data = _data(rng.standard_normal((9, 3)))
    X = regressor_matrix(data, cfg)
    for t in range(data.N):
        np.testing.assert_array_equal(X[t], build_regressor(data, cfg, t))


def test_index_map_restricts(rng):
    cfg = SystemConfig(p=4, M=2, d=1, l=1)
    data = _data(rng.standard_normal((7, 4)))
    S = (1, 3)
    idx = regressor_index_map(S, 4, 2)
    sub = regressor_matrix(data.restrict(S), SystemConfig(p=2, M=2, d=1, l=1))
    np.testing.assert_array_equal(regressor_matrix(data, cfg)[:, idx], sub)


def test_config_validation():
    with pytest.raises(ValueError):
        SystemConfig(p=0, M=1, d=1, l=1)
    with pytest.raises(ValueError):
        _data(np.zeros((2, 2))).check(SystemConfig(p=2, M=2, d=1, l=1))  # N <= M
    with pytest.raises(IndexError):
        build_regressor(_data([[1.0]]), SystemConfig(p=1, M=1, d=1, l=1), 3)


def test_feature_inner_examples():
    assert feature_inner([1, 2], [1, 0], 2) == 1
    assert np.dot(kronecker_power(np.array([1, 2.0]), 2), kronecker_power(np.array([1, 0.0]), 2)) == 1
    assert feature_inner([1, 1], [1, -1], 3) == 0
    assert kronecker_power(np.array([1.0, 2.0]), 2).tolist() == [1, 2, 2, 4]


@given(arrays(np.float64, 4, elements=finite), st.integers(1, 4))
def test_self_inner_is_norm_power(x, d):
    assert np.isclose(feature_inner(x, x, d), np.linalg.norm(x) ** (2 * d), rtol=1e-10, atol=1e-12)


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite),
       st.integers(1, 3))
def test_kernel_identity(xs, xt, d):
    dense = kronecker_power(xs, d) @ kronecker_power(xt, d)
    assert np.isclose(feature_inner(xs, xt, d), dense, rtol=1e-10, atol=1e-10)


def test_empirical_norm_examples():
    assert empirical_norm(np.ones((4, 1))) == 1.0
    assert empirical_norm(np.zeros((3, 2))) == 0.0
    assert np.isclose(empirical_norm([[3.0], [4.0]]), 5 / np.sqrt(2))


def test_empirical_inner_examples():
    assert empirical_inner(np.ones((2, 1)), np.ones((2, 1))) == 1.0
    assert empirical_inner([[1.0], [0.0]], [[0.0], [1.0]]) == 0.0
    assert empirical_inner([[1.0], [2.0]], [[3.0], [-1.0]]) == 0.5
    with pytest.raises(ValueError):
        empirical_inner(np.ones((2, 1)), np.ones((3, 1)))


def test_design_matrix_kron_square():
    cfg = SystemConfig(p=1, M=1, d=2, l=1)
    U = dense_design_matrix(_data([[0.5]]), cfg)
    assert U[0].tolist() == [1, 0.5, 0.5, 0.25]


def test_design_matrix_d1_is_regressors(rng):
    cfg = SystemConfig(p=2, M=2, d=1, l=1)
    data = _data(rng.standard_normal((5, 2)))
    np.testing.assert_array_equal(dense_design_matrix(data, cfg), regressor_matrix(data, cfg))


def test_design_rows_obey_kernel(rng):
    cfg = SystemConfig(p=2, M=1, d=2, l=1)
    data = _data(rng.standard_normal((6, 2)))
    U = dense_design_matrix(data, cfg)
    X = regressor_matrix(data, cfg)
    np.testing.assert_allclose(U @ U.T, (X @ X.T) ** 2, rtol=1e-12)
    np.testing.assert_allclose(kernel_matrix(X, 2) * data.N, (X @ X.T) ** 2, rtol=1e-12)


def test_design_guard():
    cfg = SystemConfig(p=30, M=3, d=3, l=1)
    with pytest.raises(DeskScaleError):
        dense_design_matrix(_data(np.zeros((4, 30))), cfg)


def test_lambda_single_sample():
    cfg = SystemConfig(p=2, M=1, d=2, l=1)
    x = np.array([1.0, 0.3, -0.7])
    lam = gram_lambda_max(_data([[0.3, -0.7]]), cfg)
    assert np.isclose(lam, np.linalg.norm(x) ** 4, rtol=1e-12)


def test_lambda_matches_dense(rng):
    cfg = SystemConfig(p=2, M=1, d=2, l=1)
    data = _data(rng.standard_normal((8, 2)))
    assert np.isclose(gram_lambda_max(data, cfg), dense_lambda_max(data, cfg), rtol=1e-8)


def test_lambda_duplicate_rows(rng):
    cfg = SystemConfig(p=2, M=1, d=3, l=1)
    u = rng.standard_normal((10, 2))
    # with M=1 rows are independent, so duplicating samples is exact
    lam1 = gram_lambda_max(_data(u), cfg)
    lam2 = gram_lambda_max(_data(np.vstack([u, u])), cfg)
    assert np.isclose(lam1, lam2, rtol=1e-9)


def test_power_iteration_known_spectrum():
    K = np.diag([4.0, 1.0, 0.5])
    assert np.isclose(power_iteration(K), 4.0, rtol=1e-10)


def test_power_iteration_cap():
    # eigenvalues +1 and -1: the Rayleigh quotient never settles
    with pytest.raises(ConvergenceError) as ei:
        power_iteration(np.array([[0.0, 1.0], [1.0, 0.0]]), max_iter=5, tol=0.0)
    assert ei.value.last is not None
