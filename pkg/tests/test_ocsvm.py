import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bgpad.features import FeatureMatrix
from bgpad.ocsvm import (KernelParams, TrainingError, decision, dual_objective, dumps_model, kernel_eval,
                         kernel_matrix, load_model, loads_model, predict, save_model, train, tune)
from bgpad.stats import StandardizationParams


def _blob(n=200, d=2, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


def _alpha_full(model, X):
    """Scatter the model's support-vector alphas back onto the training rows."""
    out = np.zeros(X.shape[0])
    for sv, a in zip(model.support_vectors, model.alphas):
        out[np.flatnonzero((X == sv).all(axis=1))[0]] = a
    return out


def test_kernel_examples():
    p = KernelParams("rbf", 0.5)
    assert kernel_eval([1, 2], [1, 2], p) == 1.0
    assert kernel_eval([0, 0], [1, 1], p) == math.exp(-1.0)
    assert kernel_eval([1, 2], [3, 4], KernelParams("linear")) == 11.0
    with mpmath.workdps(40):
        ref = mpmath.exp(-mpmath.mpf(0.5) * ((mpmath.mpf(0.3) - mpmath.mpf(-1.7)) ** 2 + mpmath.mpf(2.25) ** 2))
    assert abs(kernel_eval([0.3, 1.5], [-1.7, -0.75], p) - float(ref)) <= 1e-14
    with pytest.raises(ValueError):
        KernelParams("rbf", 0.0)
    with pytest.raises(ValueError):
        KernelParams("poly")
    with pytest.raises(ValueError):
        kernel_eval([1], [1, 2], p)


def test_kernel_matrix_matches_pointwise():
    A, B = _blob(7, 3, 1), _blob(5, 3, 2)
    p = KernelParams("rbf", 0.25)
    K = kernel_matrix(A, B, p)
    ref = np.array([[kernel_eval(a, b, p) for b in B] for a in A])
    assert np.allclose(K, ref, rtol=0, atol=1e-14)


@given(st.floats(0.01, 5), st.floats(0.01, 5))
def test_rbf_decreases_with_gamma(g1, g2):
    lo, hi = sorted((g1, g2))
    x, y = [0.2, -1.0], [1.1, 0.4]
    assert kernel_eval(x, y, KernelParams("rbf", hi)) <= kernel_eval(x, y, KernelParams("rbf", lo))


def test_two_identical_points():
    X = np.ones((2, 3))
    model, diag = train(X, nu=0.5)
    assert np.allclose(model.alphas, [0.5, 0.5])
    assert diag.converged and abs(decision(model, X[0])) <= 1e-12


def test_nu_property():
    X = _blob()
    nu = 0.1
    model, diag = train(X, nu=nu, kernel=KernelParams("rbf", 0.5))
    assert diag.converged
    assert diag.fraction_negative <= nu + 0.03
    assert diag.sv_fraction >= nu - 0.03
    assert abs(model.alphas.sum() - 1.0) <= 1e-12
    assert np.all(model.alphas > 0) and np.all(model.alphas <= 1 / (nu * X.shape[0]) + 1e-15)


def test_margin_support_vectors_sit_on_boundary():
    X = _blob(seed=3)
    nu, tol = 0.2, 1e-8
    model, _ = train(X, nu=nu, tol=tol)
    free = model.alphas < 1 / (nu * X.shape[0]) - 1e-12
    assert free.any()
    assert np.all(np.abs(decision(model, model.support_vectors[free])) <= 1e-6)


def test_far_point_scores_minus_rho():
    model, _ = train(_blob(), nu=0.1)
    assert decision(model, [1e3, -1e3]) == -model.rho
    assert predict(model, [[1e3, -1e3]]).tolist() == [True]


def test_batch_equals_single():
    X = _blob(seed=4)
    model, _ = train(X, nu=0.1)
    probes = _blob(30, seed=5)
    batch = decision(model, probes)
    assert np.array_equal(batch, np.array([decision(model, p) for p in probes]))


def test_row_cache_matches_full_gram():
    X = _blob(150, 3, seed=6)
    a, da = train(X, nu=0.1, tol=1e-6)
    b, db = train(X, nu=0.1, tol=1e-6, full_gram_limit=0, cache_rows=16)
    assert da.iterations == db.iterations
    assert np.allclose(a.alphas, b.alphas, atol=1e-12) and abs(a.rho - b.rho) <= 1e-12


def test_objective_trace_is_non_increasing_and_dual_feasible():
    X = _blob(120, 2, seed=7)
    nu = 0.1
    model, diag = train(X, nu=nu, tol=1e-8, record_objective=10_000)
    tr = diag.objective_trace
    assert tr.size > 0 and np.all(np.diff(tr) <= 1e-15)
    alpha = _alpha_full(model, X)
    assert abs(alpha.sum() - 1) <= 1e-12 and alpha.min() >= 0 and alpha.max() <= 1 / (nu * 120) + 1e-15
    K = kernel_matrix(X, X, model.kernel)
    assert abs(dual_objective(alpha, K) - diag.objective) <= 1e-10


def test_matches_active_set_oracle_small():
    rng = np.random.default_rng(8)
    for _ in range(10):
        n = int(rng.integers(3, 8))
        X = rng.normal(size=(n, 2))
        nu = float(rng.uniform(0.3, 0.9))
        model, diag = train(X, nu=nu, tol=1e-12)
        K = kernel_matrix(X, X, model.kernel)
        ref_alpha, _ = oracles.qp_oracle(K, 1 / (nu * n))
        assert abs(diag.objective - dual_objective(ref_alpha, K)) <= 1e-9


def test_training_errors():
    with pytest.raises(TrainingError):
        train(np.zeros((1, 2)))
    with pytest.raises(TrainingError):
        train(_blob(), nu=0.0)
    with pytest.raises(TrainingError):
        train(_blob(), nu=1.5)
    X = _blob()
    X[3, 1] = np.nan
    with pytest.raises(TrainingError):
        train(X)
    with pytest.raises(TrainingError):
        train(_blob(), feature_names=("a",))


def test_predict_edges():
    model, _ = train(_blob(), nu=0.1)
    assert predict(model, np.zeros((0, 2))).shape == (0,)
    assert predict(model, [[0.0, 0.0]]).tolist() == [False]
    with pytest.raises(ValueError):
        decision(model, [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        predict(model, [[0.0, 0.0]], standardize=True)


def test_predict_smoothing_is_row_aligned():
    model, _ = train(_blob(), nu=0.1)
    rows = np.vstack([np.zeros((3, 2)), np.full((2, 2), 50.0), np.zeros((2, 2))])
    assert predict(model, rows).tolist() == [False] * 3 + [True] * 2 + [False] * 2
    # blocks of 3: [n n n] [a a n] [n]
    assert predict(model, rows, smooth_k=3).tolist() == [False] * 3 + [True] * 3 + [False]


def test_predict_on_matrix_with_standardisation():
    X = _blob(100, 2, seed=9) * [10, 2] + [100, 5]
    st_ = StandardizationParams(("a", "b"), X.mean(axis=0), X.std(axis=0), (0, 99))
    Z = (X - st_.mean) / st_.std
    model, _ = train(Z, nu=0.1, feature_names=("a", "b"), standardization=st_)
    m = FeatureMatrix(["b", "x", "a"], np.column_stack([X[:, 1], np.zeros(100), X[:, 0]]),
                      np.arange(100), np.arange(100) * 60, 60)
    assert np.array_equal(predict(model, m, standardize=True), predict(model, Z))
    with pytest.raises(ValueError):
        predict(model, FeatureMatrix(["a"], X[:, :1], np.arange(100), np.arange(100) * 60, 60))


def test_model_round_trip_is_exact(tmp_path):
    X = _blob(80, 3, seed=10)
    st_ = StandardizationParams(("a b", "c", "d"), np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, 1 / 3]), (0, 79))
    model, _ = train(X, nu=0.1, kernel=KernelParams("rbf", 1 / 3), feature_names=("a b", "c", "d"),
                     standardization=st_)
    save_model(model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    assert np.array_equal(back.support_vectors, model.support_vectors)
    assert np.array_equal(back.alphas, model.alphas) and back.rho == model.rho
    assert back.kernel == model.kernel and back.feature_names == model.feature_names
    assert np.array_equal(back.standardization.std, st_.std) and back.standardization.columns == st_.columns
    assert dumps_model(back) == dumps_model(model)
    probes = _blob(20, 3, seed=11)
    assert np.array_equal(decision(back, probes), decision(model, probes))
    with pytest.raises(ValueError):
        loads_model("something else 1\n")


def test_tune_single_cell_and_tie_break():
    X = _blob(100, 2, seed=12)
    val = np.vstack([_blob(40, 2, seed=13), _blob(10, 2, seed=14) + 8])
    labels = np.r_[np.zeros(40, bool), np.ones(10, bool)]
    best, cells = tune(X, val, labels, nus=[0.1], gammas=[0.5])
    assert len(cells) == 1 and best == cells[0]
    best, cells = tune(X, val, labels, nus=[0.05, 0.1], gammas=[0.5, 0.5])
    assert len(cells) == 4 and best.tpr == 1.0
    top = max(c.score for c in cells)
    assert (best.nu, best.gamma) == min((c.nu, c.gamma) for c in cells if c.score == top)
    with pytest.raises(ValueError):
        tune(X, val, labels, nus=[])


@settings(max_examples=25, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 12), st.integers(1, 3)), elements=st.floats(-5, 5)),
       st.floats(0.05, 1.0))
def test_dual_feasible_for_any_data(X, nu):
    model, diag = train(X, nu=nu, tol=1e-6)
    C = 1 / (nu * X.shape[0])
    assert abs(model.alphas.sum() - 1) <= 1e-9
    assert np.all(model.alphas >= 0) and np.all(model.alphas <= C * (1 + 1e-12))
    assert math.isfinite(model.rho)
