import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icae.errors import ConfigurationError, DataError, ShapeError
from icae.genproc import FrameDataset, make_spec, sample_dataset
from icae.indep import DELTA, hsic_permutation_test
from icae.numkit import make_rng
from icae.units import (
    UnitModel,
    asymmetry_check,
    build_proxy,
    kmeans_assign,
    kmeans_fit,
    pca_order,
    sqrt_l1_distance,
)


def brute_force_inertia(points, k):
    """Exact optimum over all labelings with every cluster non-empty."""
    best = np.inf
    for lab in itertools.product(range(k), repeat=len(points)):
        lab = np.array(lab)
        if len(np.unique(lab)) < k:
            continue
        tot = sum(((points[lab == j] - points[lab == j].mean(0)) ** 2).sum() for j in range(k))
        best = min(best, tot)
    return best


def test_k1_centroid_is_mean():
    pts = make_rng(0).normal(size=(17, 3))
    fit = kmeans_fit(pts, 1, seed=0)
    assert np.allclose(fit.centroids[0], pts.mean(0), atol=1e-12)


def test_two_points_two_clusters():
    pts = np.array([[0.0, 1.0], [3.0, -2.0]])
    fit = kmeans_fit(pts, 2, seed=5)
    assert fit.inertia == 0.0
    assert sorted(map(tuple, fit.centroids)) == sorted(map(tuple, pts))


def test_too_few_points():
    with pytest.raises(ConfigurationError):
        kmeans_fit(np.zeros((2, 2)), 3)


def test_subsample_against_brute_force_and_monotone_trace():
    rng = make_rng(1)
    pts = rng.normal(size=(30, 2))
    fit = kmeans_fit(pts, 3, seed=1)
    assert np.all(np.diff(fit.inertia_trace) <= 1e-12)
    sub = pts[:9]
    sub_fit = kmeans_fit(sub, 3, seed=1)
    opt = brute_force_inertia(sub, 3)
    assert sub_fit.inertia <= opt + 1e-9 or (sub_fit.converged and np.all(np.diff(sub_fit.inertia_trace) <= 1e-12))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 60), k=st.integers(1, 5))
def test_lloyd_inertia_non_increasing(seed, n, k):
    pts = make_rng(seed).normal(size=(n, 2))
    fit = kmeans_fit(pts, min(k, n), seed=seed)
    assert np.all(np.diff(fit.inertia_trace) <= 1e-9 * max(1.0, fit.inertia_trace[0]))


def test_assign_point_on_centroid():
    cents = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 0.0]])
    assert list(kmeans_assign(cents, cents)) == [0, 1, 2]


def test_assign_tie_goes_to_lowest_index():
    cents = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert kmeans_assign(cents, [[0.0, 3.0]])[0] == 0
    assert kmeans_assign(cents[::-1], [[0.0, 3.0]])[0] == 0


def test_assign_matches_exhaustive_scan():
    rng = make_rng(2)
    cents = rng.normal(size=(7, 4))
    pts = rng.normal(size=(200, 4))
    expect = []
    for p in pts:
        best, arg = np.inf, -1
        for j, c in enumerate(cents):
            d = sum((p[i] - c[i]) ** 2 for i in range(4))
            if d < best:
                best, arg = d, j
        expect.append(arg)
    labels = kmeans_assign(cents, pts)
    assert list(labels) == expect
    assert np.array_equal(kmeans_assign(cents, pts), labels)


def test_assign_shape_error():
    with pytest.raises(ShapeError):
        kmeans_assign(np.zeros((2, 3)), np.zeros((4, 2)))


def test_dist_matrix_hand_values():
    d = sqrt_l1_distance([0.5, 0.3, 0.2])
    expect = [[0, 0.4472, 0.5477], [0.4472, 0, 0.3162], [0.5477, 0.3162, 0]]
    assert np.allclose(d, expect, atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=12))
def test_dist_matrix_symmetric_zero_diagonal(weights):
    p = np.array(weights)
    d = sqrt_l1_distance(p)
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)


def test_single_condition_equals_plain_kmeans():
    pts = make_rng(3).normal(size=(300, 3))
    ds = FrameDataset(pts, np.zeros((300, 1)), cond_id=np.zeros(300, dtype=np.int64))
    model, out = build_proxy(ds, 6, seed=4, label_order="kmeans")
    fit = kmeans_fit(pts, 6, seed=4)
    assert np.array_equal(out.proxy_s, kmeans_assign(fit.centroids, pts))
    assert abs(model.prior_hist.sum() - 1) <= 1e-12


def test_build_proxy_requires_cond_id():
    ds = FrameDataset(np.zeros((10, 2)), np.zeros((10, 1)))
    with pytest.raises(DataError):
        build_proxy(ds, 2)


def test_build_proxy_small_reference_subset():
    ds = FrameDataset(np.zeros((10, 2)), np.zeros((10, 1)), cond_id=np.arange(10) % 5)
    with pytest.raises(ConfigurationError):
        build_proxy(ds, 3)


@pytest.mark.parametrize("order", ["pca", "kmeans"])
def test_proxy_labels_are_permutation_of_true_s(order):
    spec = make_spec(8, 3, 6, 3, seed=5)
    ds, _ = sample_dataset(spec, 4000, seed=5)
    _, out = build_proxy(ds, 8, seed=5, label_order=order)
    table = np.zeros((8, 8), dtype=int)
    np.add.at(table, (out.proxy_s, out.true_s), 1)
    assert np.all((table > 0).sum(0) == 1) and np.all((table > 0).sum(1) == 1)


def test_pca_order_is_sorted_projection():
    cents = np.array([[0.0, 0.0], [3.0, 0.1], [1.0, 0.0], [2.0, -0.1]])
    assert list(pca_order(cents)) == [0, 2, 3, 1]
    assert list(pca_order(cents[:1])) == [0]


def test_asymmetry_uniform_prior_fails():
    model = UnitModel(np.zeros((4, 2)), 0, np.full(4, 0.25))
    rep = asymmetry_check(model, 1e-3)
    assert not rep.passed and rep.min_off_diagonal == 0.0 and rep.diagonal_zero
    assert len(rep.near_ties) == 6


def test_asymmetry_geometric_prior_passes():
    spec = make_spec(20, 5, 8, 4, seed=6)
    ds, _ = sample_dataset(spec, 20000, seed=6)
    model, _ = build_proxy(ds, 20, seed=6)
    rep = asymmetry_check(model, 1e-3)
    assert rep.passed, rep.to_dict()
    assert np.all(np.diag(model.dist_matrix) == 0)


def test_proxy_decoupled_from_condition():
    spec = make_spec(10, 4, 8, 4, seed=7)
    ds, _ = sample_dataset(spec, 2000, seed=7)
    _, out = build_proxy(ds, 10, seed=7)
    res = hsic_permutation_test(out.proxy_s, out.cond_id, DELTA, DELTA, n_perm=199, seed=7)
    assert res.p_value > 0.05
