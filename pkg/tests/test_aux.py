import numpy as np
import pytest
from sklearn.base import clone

from noisycrf.aux import AuxRBM, AuxTransition, class_prior, load_aux, save_aux, transition_from_labels
from noisycrf.container import ContainerError
from noisycrf.core import MULTICLASS


def test_transition_posterior_is_bayes_rule():
    T = np.array([[0.8, 0.2], [0.4, 0.6]])
    aux = AuxTransition(prior=np.array([0.5, 0.5])).fit(T)
    # p(clean=0 | noisy=0) = 0.8 / (0.8 + 0.4)
    np.testing.assert_allclose(aux.posterior_[0], [2 / 3, 1 / 3])
    np.testing.assert_allclose(aux.predict_proba(np.eye(2)).sum(axis=1), 1.0)
    aux = AuxTransition(prior=np.array([0.2, 0.8])).fit(T)
    np.testing.assert_allclose(aux.posterior_[0], [0.16 / 0.48, 0.32 / 0.48])


def test_transition_log_posterior_is_floored():
    aux = AuxTransition().fit(np.eye(3))
    assert np.all(np.isfinite(aux.clean_logits(np.eye(3))))
    assert aux.hidden_logits(np.eye(3)).shape == (3, 0)


def test_transition_validation():
    with pytest.raises(ValueError, match="row-stochastic"):
        AuxTransition().fit(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(ValueError, match="prior"):
        AuxTransition(prior=np.ones(3)).fit(np.eye(2))
    with pytest.raises(ValueError, match="length"):
        AuxTransition().fit(np.eye(2)).clean_logits(np.eye(3))


def test_rbm_learns_a_deterministic_mapping():
    rng = np.random.default_rng(0)
    yhat = (rng.random((400, 3)) < 0.5).astype(float)
    y = np.concatenate([yhat, yhat[:, :1]], axis=1)
    aux = AuxRBM(n_hidden=4, n_epochs=40, learning_rate=0.05, random_state=0).fit(y, yhat)
    p = aux.predict_proba(y)
    assert np.mean((p > 0.5) == (yhat > 0.5)) > 0.95


def test_rbm_is_an_estimator():
    aux = AuxRBM(n_hidden=7, n_epochs=3)
    assert clone(aux).get_params()["n_hidden"] == 7
    with pytest.raises(ValueError, match="empty"):
        aux.fit(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError, match="one-hot"):
        AuxRBM(mode=MULTICLASS).fit(np.ones((2, 2)), np.eye(2))


def test_rbm_is_deterministic():
    rng = np.random.default_rng(1)
    y = (rng.random((50, 4)) < 0.5).astype(float)
    yhat = (rng.random((50, 2)) < 0.5).astype(float)
    a = AuxRBM(n_hidden=3, n_epochs=2, random_state=5).fit(y, yhat)
    b = AuxRBM(n_hidden=3, n_epochs=2, random_state=5).fit(y, yhat)
    np.testing.assert_array_equal(a.params_.W, b.params_.W)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    y = (rng.random((30, 4)) < 0.5).astype(float)
    rbm = AuxRBM(n_hidden=3, n_epochs=1).fit(y, y[:, :2])
    save_aux(tmp_path / "rbm.ncrf", rbm)
    back = load_aux(tmp_path / "rbm.ncrf")
    np.testing.assert_array_equal(back.clean_logits(y), rbm.clean_logits(y))
    np.testing.assert_array_equal(back.hidden_logits(y), rbm.hidden_logits(y))
    tr = AuxTransition(prior=np.array([0.3, 0.7])).fit(np.array([[0.9, 0.1], [0.2, 0.8]]))
    save_aux(tmp_path / "t.ncrf", tr)
    np.testing.assert_allclose(load_aux(tmp_path / "t.ncrf").posterior_, tr.posterior_)
    with pytest.raises(TypeError):
        save_aux(tmp_path / "x.ncrf", object())


def test_load_rejects_other_kinds(tmp_path):
    from noisycrf import container

    container.save(tmp_path / "d.ncrf", "dataset", {"x": np.zeros(2)})
    with pytest.raises(ContainerError, match="aux-model"):
        load_aux(tmp_path / "d.ncrf")


def test_transition_from_labels_and_prior():
    T = transition_from_labels([0, 0, 0, 1], [0, 0, 1, 1], 2, 2)
    np.testing.assert_allclose(T, [[2 / 3, 1 / 3], [0, 1]])
    T = transition_from_labels([0], [1], 3, 3)
    np.testing.assert_allclose(T[1], [0, 1, 0])
    np.testing.assert_allclose(class_prior(np.eye(2)[[0, 0, 1]], 2), [3 / 5, 2 / 5])
    np.testing.assert_allclose(class_prior(None, 4), 0.25)
