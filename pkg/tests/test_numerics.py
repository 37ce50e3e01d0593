import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from augrmixat.numerics import Rng, derive_seed, log_softmax, one_hot, sample_beta, sample_dirichlet, \
    sample_gaussian, softmax


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    np.testing.assert_allclose(softmax(np.array([[math.log(2), 0.0]])), [[2 / 3, 1 / 3]], rtol=1e-12)
    out = softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] == 1.0 and out[0, 1] < 1e-300


@pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(ValueError, match="non-finite logits"):
        softmax(np.array([[0.0, bad]]))
    with pytest.raises(ValueError, match="non-finite logits"):
        log_softmax(np.array([[bad, 1.0]]))


def test_softmax_needs_two_classes():
    with pytest.raises(ValueError):
        softmax(np.zeros((3, 1)))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)),
              elements=st.floats(-500, 500, allow_nan=False)))
def test_softmax_rows_are_distributions(logits):
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0)
    np.testing.assert_allclose(np.exp(log_softmax(logits)), p, atol=1e-12)


def test_dirichlet_k1_is_one():
    for alpha in (0.3, 1.0, 5.0):
        np.testing.assert_array_equal(sample_dirichlet(Rng(3), 1, alpha), [1.0])


@pytest.mark.parametrize("k", range(1, 9))
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_dirichlet_is_probability_vector(k, alpha):
    rng = Rng(k)
    for _ in range(20):
        w = sample_dirichlet(rng, k, alpha)
        assert w.shape == (k,) and np.all(w >= 0)
        assert abs(w.sum() - 1) <= 1e-6


def test_dirichlet_monte_carlo_mean():
    rng = Rng(11)
    draws = np.array([sample_dirichlet(rng, 3, 1.0) for _ in range(100_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 1 / 3, atol=0.01)


def test_gamma_vector_path_matches_moments():
    # vectorised rejection path (size > 8): Gamma(a, 1) has mean a, variance a
    for alpha in (0.5, 1.0, 3.0):
        g = Rng(5).gamma(alpha, 200_000)
        assert abs(g.mean() - alpha) < 0.02 * max(1, alpha)
        assert abs(g.var() - alpha) < 0.05 * max(1, alpha)


def test_beta_uniform_moments():
    rng = Rng(7)
    draws = np.array([sample_beta(rng, 1.0) for _ in range(100_000)])
    assert np.all((draws >= 0) & (draws <= 1))
    assert abs(draws.mean() - 0.5) <= 0.01
    assert abs(draws.var() - 1 / 12) <= 0.005


@pytest.mark.parametrize("fn", [lambda a: sample_beta(Rng(0), a), lambda a: sample_dirichlet(Rng(0), 3, a)])
@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_nonpositive_concentration_rejected(fn, alpha):
    with pytest.raises(ValueError):
        fn(alpha)


def test_gaussian_moments_and_shape():
    x = sample_gaussian(Rng(1), (1000, 1000))
    assert x.shape == (1000, 1000)
    assert abs(x.mean()) <= 0.01
    assert abs(x.std() - 1) <= 0.01
    assert sample_gaussian(Rng(1), (2, 3, 4)).shape == (2, 3, 4)


def test_rng_determinism():
    a, b = Rng(123), Rng(123)
    np.testing.assert_array_equal(a.uniform(size=1000), b.uniform(size=1000))
    assert [a.gamma(0.7) for _ in range(50)] == [b.gamma(0.7) for _ in range(50)]
    assert not np.array_equal(Rng(124).uniform(size=10), Rng(123).uniform(size=10))


def test_child_streams_are_independent_of_parent_use():
    parent = Rng(9)
    first = parent.child(4).normal(5)
    parent.normal(100)
    np.testing.assert_array_equal(parent.child(4).normal(5), first)
    assert derive_seed(9, 4) != derive_seed(9, 5)
    assert not np.array_equal(parent.child(5).normal(5), first)


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
