import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_model, random_noisy
from noisycrf.core import (
    MULTICLASS,
    MULTILABEL,
    BiasPair,
    EnergyParams,
    SufficientStats,
    check_label_matrix,
    clean_probs,
    cond_clean_hidden,
    cond_noisy,
    energy,
    one_hot,
    sample_units,
)
from noisycrf.exact import conditional_unit_marginals, noisy_conditional_marginals

dims = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3))


def test_energy_matches_hand_computed_value():
    params = EnergyParams(c=[0.5], W=[[1.0, -2.0]], Wp=[[0.25, 3.0]])
    bias = BiasPair(np.array([0.3]), np.array([-1.0, 2.0]))
    # -(0.3*1 + (-1 + 2) + 0.5*1 + (1 - 2) + (0.25 + 3)) = -4.05
    assert energy(params, bias, np.array([1.0, 1.0]), np.array([1.0]), np.array([1.0])) == pytest.approx(-4.05)
    assert energy(params, bias, np.zeros(2), np.zeros(1), np.zeros(1)) == 0.0


def test_energy_broadcasts_over_batches(rng):
    params, bias = random_model(rng, 3, 2, 2)
    y = (rng.random((5, 3)) < 0.5).astype(float)
    yhat = (rng.random((5, 2)) < 0.5).astype(float)
    h = (rng.random((5, 2)) < 0.5).astype(float)
    batch = energy(params, bias, y, yhat, h)
    single = [energy(params, bias, y[i], yhat[i], h[i]) for i in range(5)]
    np.testing.assert_allclose(batch, single)


@given(dims=dims, mode=st.sampled_from([MULTILABEL, MULTICLASS]), seed=st.integers(0, 2**31))
def test_conditionals_match_enumeration(dims, mode, seed):
    rng = np.random.default_rng(seed)
    n, c, h = dims
    params, bias = random_model(rng, n, c, h, mode)
    y = random_noisy(rng, n, mode)
    q = cond_clean_hidden(params, bias, y)
    exact_clean, exact_hidden = conditional_unit_marginals(params, bias, y)
    np.testing.assert_allclose(q.p_clean, exact_clean, atol=1e-12)
    np.testing.assert_allclose(q.p_hidden, exact_hidden, atol=1e-12)
    yhat = random_noisy(rng, c, mode)
    hid = (rng.random(h) < 0.5).astype(float)
    np.testing.assert_allclose(cond_noisy(params, bias, yhat, hid), noisy_conditional_marginals(params, bias, yhat, hid), atol=1e-12)


def test_hidden_conditional_ignores_input_bias(rng):
    params, bias = random_model(rng, 3, 2, 2)
    y = np.array([1.0, 0.0, 1.0])
    other = BiasPair(bias.a + 5.0, bias.b - 3.0)
    np.testing.assert_array_equal(cond_clean_hidden(params, bias, y).p_hidden, cond_clean_hidden(params, other, y).p_hidden)


def test_clean_probs_multiclass_is_softmax():
    p = clean_probs(np.array([0.0, np.log(3.0)]), MULTICLASS)
    np.testing.assert_allclose(p, [0.25, 0.75])


def test_sample_units_multiclass_is_one_hot_with_right_frequencies(rng):
    probs = np.broadcast_to([0.2, 0.5, 0.3], (200_000, 3))
    draws = sample_units(probs, rng, MULTICLASS)
    assert np.all(draws.sum(axis=1) == 1)
    np.testing.assert_allclose(draws.mean(axis=0), [0.2, 0.5, 0.3], atol=0.005)


def test_sample_units_multilabel_frequencies(rng):
    draws = sample_units(np.full((200_000, 2), [0.1, 0.9]), rng)
    np.testing.assert_allclose(draws.mean(axis=0), [0.1, 0.9], atol=0.005)


def test_energy_params_validation():
    with pytest.raises(ValueError, match="Wp"):
        EnergyParams(c=np.zeros(2), W=np.zeros((1, 3)), Wp=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="non-finite"):
        EnergyParams(c=np.zeros(0), W=[[np.nan]], Wp=np.zeros((0, 1)))
    with pytest.raises(ValueError, match="mode"):
        EnergyParams.zeros(2, 2, mode="ordinal")
    assert EnergyParams.zeros(4, 3, 2).dims == (4, 3, 2)


def test_energy_rejects_wrong_widths(rng):
    params, bias = random_model(rng, 3, 2, 1)
    with pytest.raises(ValueError, match="y"):
        energy(params, bias, np.zeros(4), np.zeros(2), np.zeros(1))


def test_check_label_matrix():
    assert check_label_matrix([[0, 1], [1, 1]], 2, MULTILABEL).dtype == np.float64
    with pytest.raises(ValueError, match="0/1"):
        check_label_matrix([[0, 2]], 2, MULTILABEL)
    with pytest.raises(ValueError, match="one-hot"):
        check_label_matrix([[1, 1]], 2, MULTICLASS)
    with pytest.raises(ValueError, match="trailing"):
        check_label_matrix([[1, 0, 0]], 2, MULTICLASS)


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ValueError):
        one_hot([3], 3)


def test_sufficient_stats_from_factorial_outer_products():
    s = SufficientStats.from_factorial(np.array([[0.5, 1.0]]), np.array([[1.0, 0.0, 1.0]]), np.array([[0.25]]))
    np.testing.assert_array_equal(s.clean_noisy[0], [[0.5, 0, 0.5], [1, 0, 1]])
    np.testing.assert_array_equal(s.hidden_noisy[0], [[0.25, 0, 0.25]])
    diff = s - s
    assert not np.any(diff.clean_noisy)
