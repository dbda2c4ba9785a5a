import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icae.errors import DataError, EstimationError
from icae.genproc import FrameDataset, ParallelPairs, f_invert, make_spec, sample_dataset
from icae.model import LabelScale
from icae.numkit import make_rng
from icae.verify import (
    OracleModel,
    check_error_bound,
    check_injectivity,
    check_t_consistency,
    error_bound,
    estimate_lipschitz,
    measure_latent_discrepancy,
    measure_reconstruction,
    silhouette,
)


class FnModel:
    """Test double built from two plain functions."""

    def __init__(self, enc, dec):
        self.enc, self.dec = enc, dec

    def encode(self, x):
        return self.enc(np.atleast_2d(x))

    def decode(self, s_hat, c):
        s_hat = np.atleast_2d(s_hat)
        c = np.atleast_2d(c)
        return self.dec(s_hat, np.broadcast_to(c, (len(s_hat), c.shape[1])))


@pytest.fixture(scope="module")
def spec():
    return make_spec(8, 3, 5, 3, seed=1)


@pytest.fixture(scope="module")
def pairs(spec):
    return sample_dataset(spec, 1, seed=2, n_pairs=300)[1]


def test_oracle_limits(spec, pairs):
    oracle = OracleModel(spec)
    src, tgt = pairs.as_datasets()
    assert measure_reconstruction(oracle, tgt).epsilon == 0.0
    assert measure_latent_discrepancy(oracle, pairs) == 0.0
    rep = check_error_bound(oracle, pairs, seed=0)
    assert rep.epsilon == rep.epsilon_prime == 0.0
    assert np.all(rep.conv_errors == 0.0) and rep.holds_fraction == 1.0


def test_oracle_injectivity_margin_equals_gap(spec):
    oracle = OracleModel(spec, LabelScale.for_units(spec.k_s, 0.3))
    for ref in range(spec.k_c):
        rep = check_injectivity(oracle, spec, ref, 1e-3)
        assert rep.passed and rep.min_margin == pytest.approx(oracle.gap, abs=1e-15)


def test_oracle_t_consistency(spec):
    rep = check_t_consistency(OracleModel(spec), spec)
    assert np.all(rep.cross_cond_spread == 0.0)
    assert rep.spread_ratio == 0.0 and not rep.flagged


def test_reconstruction_hand_norm():
    model = FnModel(lambda x: x[:, :1], lambda s, c: np.column_stack([s[:, 0] + 0.3, c[:, 0] + 0.4]))
    ds = FrameDataset(np.array([[1.0, 2.0]]), np.array([[2.0]]))
    rep = measure_reconstruction(model, ds)
    assert rep.epsilon == pytest.approx(0.5, abs=1e-12)
    assert rep.epsilon_sq == pytest.approx(0.25, abs=1e-12)


def test_reconstruction_empty():
    with pytest.raises(DataError):
        measure_reconstruction(None, None)


def test_latent_discrepancy_hand_value():
    model = FnModel(lambda x: x[:, :1], None)
    p = ParallelPairs(np.array([[0.1]]), np.array([[0.3]]), np.zeros((1, 1)), np.ones((1, 1)), np.array([0]))
    assert measure_latent_discrepancy(model, p) == pytest.approx(0.04, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 30))
def test_measurements_are_monotone_in_the_set(seed, n):
    rng = make_rng(seed)
    model = FnModel(lambda x: np.tanh(x[:, :1]), lambda s, c: np.column_stack([s[:, 0], c[:, 0]]))
    x = rng.normal(size=(n, 2))
    c = rng.normal(size=(n, 1))
    ds = FrameDataset(x, c)
    eps_full = measure_reconstruction(model, ds).epsilon
    eps_part = measure_reconstruction(model, ds.subset(np.arange(n - 1))).epsilon
    assert eps_part <= eps_full
    p = ParallelPairs(x, rng.normal(size=(n, 2)), c, c, np.zeros(n, dtype=int))
    assert measure_latent_discrepancy(model, p.subset(np.arange(n - 1))) <= measure_latent_discrepancy(model, p)


def test_lipschitz_constant_decoder():
    model = FnModel(None, lambda s, c: np.zeros((len(s), 2)))
    assert estimate_lipschitz(model, np.linspace(0, 1, 10), [[0.0], [1.0]], 50) == 0.0


def test_lipschitz_identity_decoder():
    model = FnModel(None, lambda s, c: s.copy())
    assert estimate_lipschitz(model, np.linspace(-1, 1, 21), [[0.0]], 200) == pytest.approx(1.0, rel=1e-12)


def test_lipschitz_doubling_decoder():
    model = FnModel(None, lambda s, c: 2.0 * s)
    assert estimate_lipschitz(model, np.linspace(-1, 1, 21), [[0.0]], 200) == pytest.approx(4.0, rel=1e-12)


def test_lipschitz_degenerate_pairs():
    model = FnModel(None, lambda s, c: s.copy())
    with pytest.raises(EstimationError):
        estimate_lipschitz(model, np.zeros(5), [[0.0]], 20)
    with pytest.raises(EstimationError):
        estimate_lipschitz(model, [0.5], [[0.0]], 20)


def test_lipschitz_includes_forced_pairs():
    model = FnModel(None, lambda s, c: np.where(np.abs(s) > 5, 10 * s, s))
    base = estimate_lipschitz(model, np.linspace(-1, 1, 11), [[0.0]], 100)
    forced = estimate_lipschitz(
        model, np.linspace(-1, 1, 11), [[0.0]], 100,
        include_pairs=(np.array([6.0]), np.array([0.0]), np.array([[0.0]])),
    )
    assert base == pytest.approx(1.0) and forced == pytest.approx(100.0)


def test_bound_formula():
    assert error_bound(2.0, 0.01, 0.1) == pytest.approx(0.06, abs=1e-15)


def test_bound_holds_pointwise_for_imperfect_model(spec, pairs):
    rng = make_rng(3)
    w = rng.normal(size=(spec.d_x, 1))

    def dec(s, c):
        return np.tanh(s @ w.T + c.sum(1, keepdims=True)) + 0.5 * s

    model = FnModel(lambda x: np.tanh(x[:, :1] + 0.1 * x[:, 1:2]), dec)
    rep = check_error_bound(model, pairs, seed=0, n_lipschitz_pairs=100)
    assert rep.holds_fraction == 1.0
    assert rep.epsilon_sq == pytest.approx(rep.epsilon**2)
    assert set(rep.to_dict()) >= {"epsilon", "epsilon_sq", "epsilon_prime", "lipschitz_hat", "bound", "holds_fraction"}


def test_constant_encoder_fails_injectivity(spec):
    model = FnModel(lambda x: np.zeros((len(x), 1)), None)
    rep = check_injectivity(model, spec, 0, 1e-6)
    assert rep.min_margin == 0.0 and not rep.passed


def test_condition_leak_flagged(spec):
    # encoder outputs the first coordinate of the condition embedding
    def leak(x):
        _, cid = f_invert(spec, x)
        return spec.cond_table[cid, :1]

    rep = check_t_consistency(FnModel(leak, None), spec)
    assert rep.flagged and rep.spread_ratio == float("inf")


def test_condition_leak_plus_content_flagged(spec):
    def mixed(x):
        s, cid = f_invert(spec, x)
        return (0.01 * s + spec.cond_table[cid, 0])[:, None]

    rep = check_t_consistency(FnModel(mixed, None), spec)
    assert rep.spread_ratio > 1 and rep.flagged


def test_silhouette_perfect_and_hand_case():
    z = np.array([0.0, 0.1, 5.0, 5.1])
    assert silhouette(z, np.array([0, 0, 1, 1])) > 0.9
    # point 0: a = 1, b = 2 -> 0.5; point 1: a = 1, b = 1 -> 0; singleton -> 0
    assert silhouette(np.array([0.0, 1.0, 2.0]), np.array([0, 0, 1])) == pytest.approx(0.5 / 3)
