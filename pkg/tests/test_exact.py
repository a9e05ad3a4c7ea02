import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from conftest import random_aux_rbm, random_model, random_noisy
from noisycrf.aux import AuxTransition
from noisycrf.core import MULTICLASS, MULTILABEL, EnergyParams, BiasPair, energy
from noisycrf.exact import (
    EnumerationLimit,
    EnumerationLimitError,
    configurations,
    exact_bound,
    exact_clean_bound,
    exact_marginals,
    log_partition,
    log_prob_noisy,
    log_prob_pair,
    partition,
)
from noisycrf.variational import q_clean, q_noisy


def naive_log_partition(params, bias):
    """Independent loop over every configuration, one energy call each."""
    n, c, h = params.dims
    onehot = params.mode == MULTICLASS
    ys = np.eye(n) if onehot else list(itertools.product((0.0, 1.0), repeat=n))
    yhs = np.eye(c) if onehot else list(itertools.product((0.0, 1.0), repeat=c))
    hs = list(itertools.product((0.0, 1.0), repeat=h)) or [()]
    scores = [-energy(params, bias, np.array(y), np.array(yh), np.array(hh)) for y in ys for yh in yhs for hh in hs]
    return logsumexp(scores)


def test_configurations():
    assert configurations(3).shape == (8, 3)
    assert configurations(0).shape == (1, 0)
    np.testing.assert_array_equal(configurations(3, one_hot=True).sum(axis=1), 1)


def test_zero_model_partition_is_a_state_count():
    params = EnergyParams.zeros(3, 2, 2)
    bias = BiasPair(np.zeros(2), np.zeros(3))
    assert log_partition(params, bias) == pytest.approx(7 * np.log(2))
    params = EnergyParams.zeros(3, 2, 2, MULTICLASS)
    assert log_partition(params, bias) == pytest.approx(np.log(3 * 2 * 4))


@given(
    dims=st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(0, 3)),
    mode=st.sampled_from([MULTILABEL, MULTICLASS]),
    seed=st.integers(0, 2**31),
)
def test_log_partition_matches_naive_loop(dims, mode, seed):
    params, bias = random_model(np.random.default_rng(seed), *dims, mode)
    assert log_partition(params, bias) == pytest.approx(naive_log_partition(params, bias), abs=1e-10)


def test_partition_methods_agree(rng):
    params, bias = random_model(rng, 3, 2, 2)
    ref = partition(params, bias, method="log")
    assert partition(params, bias, method="direct") == pytest.approx(ref, rel=1e-12)
    assert partition(params, bias, method="loop") == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError, match="unknown method"):
        partition(params, bias, method="sum")


def test_enumeration_limit():
    params = EnergyParams.zeros(10, 8, 4)
    with pytest.raises(EnumerationLimitError, match="22"):
        log_partition(params, BiasPair(np.zeros(8), np.zeros(10)))
    EnumerationLimit(30).check(params.dims)


def test_marginals_are_consistent(rng):
    params, bias = random_model(rng, 3, 2, 2)
    m = exact_marginals(params, bias)
    assert np.all(m.clean_noisy <= m.clean[:, None] + 1e-12)
    assert np.all(m.clean_noisy <= m.noisy[None, :] + 1e-12)
    assert np.all((m.hidden >= 0) & (m.hidden <= 1))


@given(
    dims=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2)),
    mode=st.sampled_from([MULTILABEL, MULTICLASS]),
    seed=st.integers(0, 2**31),
)
def test_bound_is_tight_without_aux_and_below_likelihood_otherwise(dims, mode, seed):
    rng = np.random.default_rng(seed)
    params, bias = random_model(rng, *dims, mode)
    y = random_noisy(rng, dims[0], mode)
    logp = log_prob_noisy(params, bias, y)
    assert exact_bound(params, bias, None, y, 0.0) == pytest.approx(logp, abs=1e-10)
    aux = random_aux_rbm(rng, dims[0], dims[1], dims[2], mode)
    assert exact_bound(params, bias, aux, y, 2.0) <= logp + 1e-10


def test_bound_with_transition_aux_is_finite_for_zero_posterior_entries(rng):
    params, bias = random_model(rng, 3, 3, 0, MULTICLASS)
    aux = AuxTransition().fit(np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]))
    value = exact_bound(params, bias, aux, np.array([1.0, 0.0, 0.0]), 1.0)
    assert np.isfinite(value)


def test_clean_bound_is_tight_at_alpha_zero(rng):
    params, bias = random_model(rng, 3, 2, 2)
    y, yhat = np.array([1.0, 0.0, 1.0]), np.array([0.0, 1.0])
    assert exact_clean_bound(params, bias, None, y, yhat, 0.0) == pytest.approx(log_prob_pair(params, bias, y, yhat), abs=1e-10)
    q_h = q_clean(params, None, y, 0.0)
    assert exact_clean_bound(params, bias, None, y, yhat, 0.0, q_h=1 - q_h) < log_prob_pair(params, bias, y, yhat)


def test_suboptimal_q_lowers_the_bound(rng):
    params, bias = random_model(rng, 3, 2, 1)
    y = np.array([0.0, 1.0, 1.0])
    best = exact_bound(params, bias, None, y, 0.0)
    q = q_noisy(params, bias, None, y, 0.0)
    q.p_clean = np.clip(q.p_clean + 0.1, 0, 1)
    assert exact_bound(params, bias, None, y, 0.0, q=q) < best
