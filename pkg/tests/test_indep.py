import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icae.errors import BandwidthError, DataError
from icae.indep import (
    DELTA,
    RBF,
    Kernel,
    gram_matrix,
    hsic,
    hsic_permutation_test,
    median_bandwidth,
)
from icae.numkit import make_rng


def trace_formula(ka, kb):
    n = ka.shape[0]
    h = np.eye(n) - np.ones((n, n)) / n
    return np.trace(ka @ h @ kb @ h) / (n - 1) ** 2


def test_delta_gram():
    assert np.array_equal(gram_matrix([1, 1, 2], DELTA), [[1, 1, 0], [1, 1, 0], [0, 0, 1]])


def test_rbf_gram_value_and_diagonal():
    g = gram_matrix([0.0, 1.0], Kernel("rbf", 1.0))
    assert g[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert g[0, 1] == pytest.approx(0.6065, abs=1e-4)
    g2 = gram_matrix(make_rng(0).normal(size=(20, 3)), RBF)
    assert np.all(np.diag(g2) == 1.0)


def test_median_bandwidth_identical_samples():
    with pytest.raises(BandwidthError):
        gram_matrix(np.ones((5, 2)), RBF)


def test_median_bandwidth_value():
    assert median_bandwidth([0.0, 1.0, 3.0]) == 2.0


def test_too_few_samples():
    with pytest.raises(DataError):
        gram_matrix([1.0], Kernel("rbf", 1.0))
    with pytest.raises(DataError):
        hsic([1, 2], [1, 2, 3], DELTA, DELTA)


def test_constant_variable_gives_zero():
    a = make_rng(1).normal(size=30)
    assert abs(hsic(a, np.zeros(30, dtype=int), RBF, DELTA)) <= 1e-15


def test_two_point_delta_case():
    # K_a = K_b = I and H is idempotent, so tr(I H I H) = tr(H) = 1
    assert hsic([0, 1], [0, 1], DELTA, DELTA) == pytest.approx(1.0, abs=1e-15)


def test_matches_explicit_trace_formula():
    rng = make_rng(2)
    a = rng.normal(size=(40, 2))
    b = rng.integers(0, 3, size=40)
    ka, kb = gram_matrix(a, RBF), gram_matrix(b, DELTA)
    assert hsic(a, b, RBF, DELTA) == pytest.approx(trace_formula(ka, kb), rel=1e-12)


def test_self_dependence_equals_frobenius():
    a = make_rng(3).normal(size=25)
    k = gram_matrix(a, RBF)
    h = np.eye(25) - 1 / 25
    stat = hsic(a, a, RBF, RBF)
    assert stat > 0
    assert stat == pytest.approx(np.linalg.norm(h @ k @ h, "fro") ** 2 / 24**2, rel=1e-12)


def test_permutation_extreme_p_value():
    a = np.repeat(np.arange(5), 20)
    res = hsic_permutation_test(a, a, DELTA, DELTA, n_perm=99, seed=0)
    assert res.p_value == 1 / 100
    assert res.statistic > res.null_quantiles["q99"]


def test_permutation_rejects_small_n_perm():
    with pytest.raises(ValueError):
        hsic_permutation_test([0, 1, 0], [1, 0, 1], DELTA, DELTA, n_perm=50)


def test_independent_categoricals_calibrated():
    passes = 0
    for t in range(100):
        rng = make_rng(1000 + t)
        a = rng.integers(0, 4, size=500)
        b = rng.integers(0, 3, size=500)
        passes += hsic_permutation_test(a, b, DELTA, DELTA, n_perm=199, seed=t).p_value > 0.05
    assert passes >= 90


def test_dependent_always_minimal_p():
    for t in range(10):
        a = make_rng(t).integers(0, 5, size=500)
        res = hsic_permutation_test(a, a.copy(), DELTA, DELTA, n_perm=199, seed=t)
        assert res.p_value == 1 / 200


def test_result_dict_schema():
    res = hsic_permutation_test(np.arange(10) % 2, np.arange(10) % 3, DELTA, DELTA, 99, 4)
    d = res.to_dict()
    assert set(d) == {"statistic", "p_value", "n", "n_perm", "seed", "kernel_a", "kernel_b", "null_quantiles"}
    assert d["kernel_a"] == {"kind": "delta", "bandwidth": None}


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 40))
def test_non_negative_symmetric_and_permutation_invariant(seed, n):
    rng = make_rng(seed)
    a = rng.normal(size=(n, 2))
    b = rng.integers(0, 3, size=n)
    if len(np.unique(a[:, 0])) < 2:
        return
    ka = Kernel("rbf", median_bandwidth(a))
    s = hsic(a, b, ka, DELTA)
    assert s >= -1e-12
    assert hsic(b, a, DELTA, ka) == pytest.approx(s, rel=1e-10, abs=1e-15)
    perm = rng.permutation(n)
    assert hsic(a[perm], b[perm], ka, DELTA) == pytest.approx(s, rel=1e-10, abs=1e-15)


def test_delta_null_matches_explicit_permutation():
    rng = make_rng(5)
    a = rng.normal(size=(60, 2))
    b = rng.integers(0, 4, size=60)
    res = hsic_permutation_test(a, b, RBF, DELTA, n_perm=99, seed=8)
    ka = Kernel("rbf", median_bandwidth(a, 8))
    perm_rng = make_rng(8)
    null = np.array([hsic(a, b[perm_rng.permutation(60)], ka, DELTA) for _ in range(99)])
    assert res.p_value == (1 + (null >= res.statistic).sum()) / 100
    assert res.null_quantiles["q50"] == pytest.approx(np.quantile(null, 0.5), rel=1e-10)
