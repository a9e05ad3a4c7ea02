import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_aux_rbm, random_model, random_noisy
from noisycrf.core import MULTICLASS, MULTILABEL, FactorialPosterior
from noisycrf.variational import (
    AlphaSchedule,
    aux_posterior,
    bernoulli_kl,
    blend_logits,
    categorical_kl,
    kl_objective,
    model_posterior,
    posterior_entropy,
    q_clean,
    q_noisy,
)

probs = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6)


@given(start=st.floats(0, 100), frac=st.floats(0, 1), epochs=st.integers(1, 30), shape=st.sampled_from(["linear", "exponential"]))
def test_schedule_is_non_increasing_and_hits_endpoints(start, frac, epochs, shape):
    sched = AlphaSchedule(start, start * frac, epochs, shape)
    values = [sched(e) for e in range(epochs + 3)]
    assert values[0] == pytest.approx(start)
    assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))
    assert values[epochs] == sched.end
    assert values[-1] == sched.end


def test_schedule_values():
    assert AlphaSchedule(40, 5, 11)(1) == pytest.approx(40 - 35 / 11)
    assert AlphaSchedule(99, 0, 2, "exponential")(1) == pytest.approx(9.0)
    assert AlphaSchedule.constant(3.0)(7) == 3.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        AlphaSchedule(1, 2, 3)
    with pytest.raises(ValueError):
        AlphaSchedule(1, 0, 0)
    with pytest.raises(ValueError):
        AlphaSchedule(1, 0, 3, "cosine")


def test_blend_is_weighted_logit_average():
    assert blend_logits(2.0, -1.0, 2.0) == pytest.approx(0.0)
    assert blend_logits(2.0, -1.0, 0.0) == 2.0


@given(q=probs, seed=st.integers(0, 1000))
def test_bernoulli_kl_non_negative_and_zero_on_self(q, seed):
    q = np.array(q)
    p = np.random.default_rng(seed).uniform(0.01, 0.99, len(q))
    assert bernoulli_kl(q, q) == pytest.approx(0.0, abs=1e-12)
    assert bernoulli_kl(q, p) >= -1e-12


def test_categorical_kl_value():
    # 0.5 log(0.5/0.25) + 0.5 log(0.5/0.75)
    assert categorical_kl(np.array([0.5, 0.5]), np.array([0.25, 0.75])) == pytest.approx(0.14384103622589045)
    with pytest.raises(ValueError):
        categorical_kl(np.array([1.5, -0.5]), np.array([0.5, 0.5]))


@given(dims=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3)), mode=st.sampled_from([MULTILABEL, MULTICLASS]), seed=st.integers(0, 2**31))
def test_alpha_zero_is_model_posterior_and_large_alpha_is_aux(dims, mode, seed):
    rng = np.random.default_rng(seed)
    n, c, h = dims
    params, bias = random_model(rng, n, c, h, mode)
    aux = random_aux_rbm(rng, n, c, h, mode)
    y = random_noisy(rng, n, mode)
    q0 = q_noisy(params, bias, aux, y, 0.0)
    m = model_posterior(params, bias, y)
    np.testing.assert_allclose(q0.p_clean, m.p_clean, atol=1e-12)
    np.testing.assert_allclose(q0.p_hidden, m.p_hidden, atol=1e-12)
    qa = q_noisy(params, bias, aux, y, 1e6)
    pa = aux_posterior(aux, y, params)
    np.testing.assert_allclose(qa.p_clean, pa.p_clean, atol=1e-4)
    np.testing.assert_allclose(qa.p_hidden, pa.p_hidden, atol=1e-4)


def test_hidden_units_unblended_when_sizes_differ(rng):
    params, bias = random_model(rng, 3, 2, 2)
    aux = random_aux_rbm(rng, 3, 2, 3)
    y = np.array([1.0, 1.0, 0.0])
    q = q_noisy(params, bias, aux, y, 5.0)
    np.testing.assert_allclose(q.p_hidden, model_posterior(params, bias, y).p_hidden)
    np.testing.assert_allclose(q_clean(params, aux, y, 5.0), q.p_hidden)


@given(seed=st.integers(0, 2**31), mode=st.sampled_from([MULTILABEL, MULTICLASS]), alpha=st.floats(0.1, 20))
def test_blended_posterior_minimizes_kl_objective(seed, mode, alpha):
    rng = np.random.default_rng(seed)
    params, bias = random_model(rng, 3, 3, 2, mode)
    aux = random_aux_rbm(rng, 3, 3, 2, mode)
    y = random_noisy(rng, 3, mode)
    q = q_noisy(params, bias, aux, y, alpha)
    best = kl_objective(q, model_posterior(params, bias, y), aux_posterior(aux, y, params), alpha)
    for _ in range(5):
        clean = q.clean_logits + rng.normal(0, 0.3, 3)
        hidden = q.hidden_logits + rng.normal(0, 0.3, 2)
        other = FactorialPosterior.from_logits(clean, hidden, mode)
        assert kl_objective(other, model_posterior(params, bias, y), aux_posterior(aux, y, params), alpha) >= best - 1e-12


def test_entropy_of_uniform_posteriors():
    q = FactorialPosterior(np.full(3, 0.5), np.full(2, 0.5), MULTILABEL)
    assert posterior_entropy(q) == pytest.approx(5 * np.log(2))
    q = FactorialPosterior(np.full(4, 0.25), np.zeros(0), MULTICLASS)
    assert posterior_entropy(q) == pytest.approx(np.log(4))


def test_negative_alpha_rejected(rng):
    params, bias = random_model(rng, 2, 2, 0)
    with pytest.raises(ValueError, match="alpha"):
        q_noisy(params, bias, None, np.ones(2), -1.0)
